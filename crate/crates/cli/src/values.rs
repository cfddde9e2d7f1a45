//! Operator, state and scalar literals inside model files and flags.

use nalgebra::{DMatrix, DVector};
use opensys::qstate::ops;
use opensys::{ComplexMatrix, DensityMatrix, StateVector, C64};
use toml::Value;

use crate::error::{CliError, CliResult, Context};

fn invalid(ctx: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Invalid(format!("{ctx}: {msg}"))
}

pub fn as_f64(v: &Value, ctx: &str) -> CliResult<f64> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(invalid(ctx, format!("expected a number, found {}", v.type_str()))),
    }
}

/// A number or an `[re, im]` pair.
pub fn parse_complex(v: &Value, ctx: &str) -> CliResult<C64> {
    match v {
        Value::Array(pair) if pair.len() == 2 => Ok(C64::new(as_f64(&pair[0], ctx)?, as_f64(&pair[1], ctx)?)),
        Value::Array(_) => Err(invalid(ctx, "complex entries are [re, im] pairs")),
        _ => Ok(C64::new(as_f64(v, ctx)?, 0.0)),
    }
}

fn builder_args(expr: &str, ctx: &str) -> CliResult<(String, Vec<String>)> {
    let expr = expr.trim();
    match expr.find('(') {
        None => Ok((expr.to_string(), Vec::new())),
        Some(open) => {
            if !expr.ends_with(')') {
                return Err(invalid(ctx, format!("unbalanced parentheses in '{expr}'")));
            }
            let inner = &expr[open + 1..expr.len() - 1];
            let args = if inner.trim().is_empty() {
                Vec::new()
            } else {
                inner.split(',').map(|a| a.trim().to_string()).collect()
            };
            Ok((expr[..open].trim().to_string(), args))
        }
    }
}

fn usize_args(args: &[String], n: usize, name: &str, ctx: &str) -> CliResult<Vec<usize>> {
    if args.len() != n {
        return Err(invalid(ctx, format!("{name} takes {n} integer argument(s), got {}", args.len())));
    }
    args.iter()
        .map(|a| a.parse::<usize>().map_err(|_| invalid(ctx, format!("{name}: '{a}' is not a nonnegative integer"))))
        .collect()
}

fn positive_dim(d: usize, name: &str, ctx: &str) -> CliResult<usize> {
    if d == 0 {
        Err(invalid(ctx, format!("{name}: dimension must be positive")))
    } else {
        Ok(d)
    }
}

fn check_index(k: usize, d: usize, name: &str, ctx: &str) -> CliResult<()> {
    if k >= d {
        Err(invalid(ctx, format!("{name}: index {k} out of range for dimension {d}")))
    } else {
        Ok(())
    }
}

/// Named operator builders.
pub fn builder(expr: &str, ctx: &str) -> CliResult<ComplexMatrix> {
    let (name, args) = builder_args(expr, ctx)?;
    let fixed = |m: ComplexMatrix| -> CliResult<ComplexMatrix> {
        if args.is_empty() {
            Ok(m)
        } else {
            Err(invalid(ctx, format!("{name} takes no arguments")))
        }
    };
    match name.as_str() {
        "pauli_x" => fixed(ops::pauli_x()),
        "pauli_y" => fixed(ops::pauli_y()),
        "pauli_z" => fixed(ops::pauli_z()),
        "sigma_minus" => fixed(ops::sigma_minus()),
        "sigma_plus" => fixed(ops::sigma_plus()),
        "identity" | "annihilation" | "creation" | "number" | "zeros" => {
            let d = positive_dim(usize_args(&args, 1, &name, ctx)?[0], &name, ctx)?;
            Ok(match name.as_str() {
                "identity" => ops::identity(d),
                "annihilation" => ops::annihilation(d),
                "creation" => ops::creation(d),
                "number" => ops::number(d),
                _ => ComplexMatrix::zeros(d, d),
            })
        }
        "projector" => {
            let a = usize_args(&args, 2, &name, ctx)?;
            let d = positive_dim(a[0], &name, ctx)?;
            check_index(a[1], d, &name, ctx)?;
            Ok(ops::projector(d, a[1]))
        }
        "transition" => {
            let a = usize_args(&args, 3, &name, ctx)?;
            let d = positive_dim(a[0], &name, ctx)?;
            check_index(a[1], d, &name, ctx)?;
            check_index(a[2], d, &name, ctx)?;
            Ok(ops::transition(d, a[1], a[2]))
        }
        _ => Err(invalid(
            ctx,
            format!(
                "unknown operator '{expr}' (builders: pauli_x, pauli_y, pauli_z, sigma_minus, sigma_plus, identity(d), \
                 annihilation(d), creation(d), number(d), zeros(d), projector(d, k), transition(d, j, k))"
            ),
        )),
    }
}

fn matrix_literal(rows: &[Value], ctx: &str) -> CliResult<ComplexMatrix> {
    if rows.is_empty() {
        return Err(invalid(ctx, "empty matrix literal"));
    }
    let mut entries = Vec::new();
    let mut n_cols = None;
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_array().ok_or_else(|| invalid(ctx, format!("row {i} is not an array")))?;
        match n_cols {
            None => n_cols = Some(row.len()),
            Some(n) if n != row.len() => return Err(invalid(ctx, format!("row {i} has {} entries, expected {n}", row.len()))),
            _ => {}
        }
        for (j, z) in row.iter().enumerate() {
            entries.push(parse_complex(z, &format!("{ctx}[{i}][{j}]"))?);
        }
    }
    ComplexMatrix::from_row_major(rows.len(), n_cols.unwrap_or(0), &entries).context(ctx)
}

fn sub_table<'a>(t: &'a toml::Table, key: &str, ctx: &str) -> CliResult<&'a Value> {
    t.get(key).ok_or_else(|| invalid(ctx, format!("missing key '{key}'")))
}

fn only_keys(t: &toml::Table, allowed: &[&str], ctx: &str) -> CliResult<()> {
    for k in t.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(invalid(ctx, format!("unexpected key '{k}' (expected {})", allowed.join(", "))));
        }
    }
    Ok(())
}

/// Square operator: builder string, matrix literal, or one of the tables
/// `{scale, op}`, `{kron = [...]}`, `{sum = [...]}`.
pub fn parse_operator(v: &Value, ctx: &str) -> CliResult<ComplexMatrix> {
    let m = match v {
        Value::String(s) => builder(s, ctx)?,
        Value::Array(rows) => matrix_literal(rows, ctx)?,
        Value::Table(t) if t.contains_key("kron") => {
            only_keys(t, &["kron"], ctx)?;
            let factors = operator_list(sub_table(t, "kron", ctx)?, &format!("{ctx}.kron"))?;
            let mut acc = ComplexMatrix::identity(1);
            for f in &factors {
                acc = opensys::qstate::kron(&acc, f).context(ctx)?;
            }
            acc
        }
        Value::Table(t) if t.contains_key("sum") => {
            only_keys(t, &["sum"], ctx)?;
            let terms = operator_list(sub_table(t, "sum", ctx)?, &format!("{ctx}.sum"))?;
            let d = terms[0].dim_rows();
            let mut acc = ComplexMatrix::zeros(d, d);
            for (k, term) in terms.iter().enumerate() {
                if term.dim_rows() != d {
                    return Err(invalid(ctx, format!("sum term {k} has dimension {}, expected {d}", term.dim_rows())));
                }
                acc = &acc + term;
            }
            acc
        }
        Value::Table(t) => {
            only_keys(t, &["scale", "op"], ctx)?;
            let s = parse_complex(sub_table(t, "scale", ctx)?, &format!("{ctx}.scale"))?;
            parse_operator(sub_table(t, "op", ctx)?, &format!("{ctx}.op"))?.scale(s)
        }
        _ => return Err(invalid(ctx, format!("expected an operator, found {}", v.type_str()))),
    };
    if !m.is_square() {
        return Err(invalid(ctx, format!("operator must be square, got {}x{}", m.dim_rows(), m.dim_cols())));
    }
    Ok(m)
}

fn operator_list(v: &Value, ctx: &str) -> CliResult<Vec<ComplexMatrix>> {
    let items = v.as_array().ok_or_else(|| invalid(ctx, "expected an array of operators"))?;
    if items.is_empty() {
        return Err(invalid(ctx, "empty operator list"));
    }
    items.iter().enumerate().map(|(k, x)| parse_operator(x, &format!("{ctx}[{k}]"))).collect()
}

/// Normalizes a vector literal, `"basis(k)"` or `"coherent(alpha)"` into a state of dimension `d`.
pub fn parse_state(v: &Value, d: usize, ctx: &str) -> CliResult<StateVector> {
    let psi = match v {
        Value::String(s) => {
            let (name, args) = builder_args(s, ctx)?;
            match name.as_str() {
                "basis" => {
                    let k = usize_args(&args, 1, "basis", ctx)?[0];
                    check_index(k, d, "basis", ctx)?;
                    StateVector::basis(d, k).context(ctx)?
                }
                "coherent" => {
                    if args.len() != 1 {
                        return Err(invalid(ctx, "coherent takes one real amplitude"));
                    }
                    let alpha: f64 = args[0].parse().map_err(|_| invalid(ctx, format!("'{}' is not a number", args[0])))?;
                    coherent(d, alpha).context(ctx)?
                }
                _ => return Err(invalid(ctx, format!("unknown state '{s}' (expected basis(k), coherent(alpha) or a vector literal)"))),
            }
        }
        Value::Array(items) => {
            let amps = items
                .iter()
                .enumerate()
                .map(|(k, z)| parse_complex(z, &format!("{ctx}[{k}]")))
                .collect::<CliResult<Vec<_>>>()?;
            let v = DVector::from_vec(amps);
            if (v.norm() - 1.0).abs() <= 1e-14 {
                StateVector::new(v).context(ctx)?
            } else {
                StateVector::normalized(v).context(ctx)?
            }
        }
        _ => return Err(invalid(ctx, format!("expected a state, found {}", v.type_str()))),
    };
    if psi.dim() != d {
        return Err(invalid(ctx, format!("state has dimension {}, model has {d}", psi.dim())));
    }
    Ok(psi)
}

/// Truncated coherent state with real amplitude `alpha`, renormalized.
pub fn coherent(d: usize, alpha: f64) -> opensys::Result<StateVector> {
    let mut amps = Vec::with_capacity(d);
    let mut c = 1.0;
    for n in 0..d {
        if n > 0 {
            c *= alpha / (n as f64).sqrt();
        }
        amps.push(C64::new(c, 0.0));
    }
    StateVector::normalized(DVector::from_vec(amps))
}

/// Density matrix: matrix literal, `"mixed"`, `"basis(k)"`, or `{psi = <state>}`.
pub fn parse_density(v: &Value, d: usize, ctx: &str) -> CliResult<DensityMatrix> {
    let rho = match v {
        Value::String(s) if s.trim() == "mixed" => DensityMatrix::maximally_mixed(d),
        Value::String(_) => DensityMatrix::pure(&parse_state(v, d, ctx)?),
        Value::Table(t) => {
            only_keys(t, &["psi"], ctx)?;
            DensityMatrix::pure(&parse_state(sub_table(t, "psi", ctx)?, d, &format!("{ctx}.psi"))?)
        }
        _ => DensityMatrix::new(parse_operator(v, ctx)?).context(ctx)?,
    };
    if rho.dim() != d {
        return Err(invalid(ctx, format!("density matrix has dimension {}, model has {d}", rho.dim())));
    }
    Ok(rho)
}

/// Parses a command-line literal by reading it as a TOML value.
pub fn flag_value(text: &str, flag: &str) -> CliResult<Value> {
    let trimmed = text.trim();
    let looks_literal = trimmed.starts_with('[') || trimmed.starts_with('{') || trimmed.starts_with('"');
    if !looks_literal {
        return Ok(Value::String(trimmed.to_string()));
    }
    let doc: toml::Table = format!("v = {trimmed}")
        .parse()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("{flag}: cannot parse '{text}': {}", e.message())))?;
    Ok(doc["v"].clone())
}

pub fn complex_value(z: C64) -> Value {
    Value::Array(vec![Value::Float(z.re), Value::Float(z.im)])
}

/// Canonical matrix literal: rows of `[re, im]` pairs.
pub fn matrix_value(m: &DMatrix<C64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| complex_value(m[(i, j)])).collect()))
            .collect(),
    )
}

pub fn vector_value(v: &DVector<C64>) -> Value {
    Value::Array(v.iter().map(|z| complex_value(*z)).collect())
}
