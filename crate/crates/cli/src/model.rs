//! Model files: one model section plus optional `[observables]` and `[initial]`.

use std::path::Path;

use opensys::ensemble::{covariance_density, WeightedStateEnsemble};
use opensys::lindblad::{Channel, LindbladModel};
use opensys::micro::{gibbs_state, ground_state, TotalSystemModel};
use opensys::qops::ProbeModel;
use opensys::tcl::{TimeIndexed, TimeLocalChannel, TimeLocalModel, TimeProfile};
use opensys::{ComplexMatrix, DensityMatrix, HermitianOperator, StateVector};
use toml::{Table, Value};

use crate::error::{CliError, CliResult, Context};
use crate::values::{as_f64, matrix_value, parse_density, parse_operator, parse_state, vector_value};

/// Trace-preservation witness tolerance checked at load.
pub const TRACE_WITNESS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    TotalSystem(TotalSystemModel),
    Lindblad(LindbladModel),
    TimeLocal(TimeLocalModel),
    Probe(ProbeModel),
    /// Probe built from a total-system model at interaction time `tau`.
    DerivedProbe { tau: f64 },
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::TotalSystem(_) => "total_system",
            Model::Lindblad(_) => "lindblad",
            Model::TimeLocal(_) => "timelocal",
            Model::Probe(_) | Model::DerivedProbe { .. } => "probe",
        }
    }

    /// Dimension of the reduced system, if the model fixes one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Model::TotalSystem(m) => Some(m.d_s()),
            Model::Lindblad(m) => Some(m.dim()),
            Model::TimeLocal(m) => Some(m.dim()),
            Model::Probe(p) => Some(p.d_s()),
            Model::DerivedProbe { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Initial {
    Psi(StateVector),
    Rho(DensityMatrix),
    Mixture(WeightedStateEnsemble),
}

impl Initial {
    pub fn density(&self) -> opensys::Result<DensityMatrix> {
        match self {
            Initial::Psi(psi) => Ok(DensityMatrix::pure(psi)),
            Initial::Rho(rho) => Ok(rho.clone()),
            Initial::Mixture(ens) => covariance_density(ens),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: Model,
    /// Named observables in file order.
    pub observables: Vec<(String, HermitianOperator)>,
    pub initial: Option<Initial>,
    /// Non-fatal findings from load-time checks.
    pub warnings: Vec<String>,
}

const MODEL_SECTIONS: [&str; 4] = ["total_system", "lindblad", "timelocal", "probe"];

fn invalid(ctx: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Invalid(format!("{ctx}: {msg}"))
}

fn table<'a>(v: &'a Value, ctx: &str) -> CliResult<&'a Table> {
    v.as_table().ok_or_else(|| invalid(ctx, format!("expected a table, found {}", v.type_str())))
}

fn get<'a>(t: &'a Table, key: &str, ctx: &str) -> CliResult<&'a Value> {
    t.get(key).ok_or_else(|| invalid(ctx, format!("missing key '{key}'")))
}

fn only_keys(t: &Table, allowed: &[&str], ctx: &str) -> CliResult<()> {
    for k in t.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(invalid(ctx, format!("unexpected key '{k}' (expected one of: {})", allowed.join(", "))));
        }
    }
    Ok(())
}

fn array_of_tables<'a>(v: &'a Value, ctx: &str) -> CliResult<Vec<&'a Table>> {
    let items = v.as_array().ok_or_else(|| invalid(ctx, "expected an array of tables"))?;
    items.iter().enumerate().map(|(k, x)| table(x, &format!("{ctx}[{k}]"))).collect()
}

fn hermitian(v: &Value, ctx: &str) -> CliResult<HermitianOperator> {
    HermitianOperator::new(parse_operator(v, ctx)?).context(ctx)
}

impl ModelFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("cannot read model file {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Invalid(msg) => CliError::Invalid(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let doc: Table = text.parse().map_err(|e: toml::de::Error| CliError::Invalid(format!("syntax error: {e}")))?;
        for key in doc.keys() {
            let known = MODEL_SECTIONS.contains(&key.as_str()) || ["channel", "tl_channel", "observables", "initial"].contains(&key.as_str());
            if !known {
                return Err(invalid(&format!("[{key}]"), "unknown section"));
            }
        }
        let present: Vec<&str> = MODEL_SECTIONS.iter().copied().filter(|s| doc.contains_key(*s)).collect();
        if present.len() != 1 {
            return Err(CliError::Invalid(format!(
                "a model file needs exactly one of [total_system], [lindblad], [timelocal], [probe]; found {}",
                if present.is_empty() { "none".to_string() } else { present.join(", ") }
            )));
        }
        if doc.contains_key("channel") && present[0] != "lindblad" {
            return Err(invalid("[[channel]]", "only allowed with [lindblad]"));
        }
        if doc.contains_key("tl_channel") && present[0] != "timelocal" {
            return Err(invalid("[[tl_channel]]", "only allowed with [timelocal]"));
        }
        let mut warnings = Vec::new();
        let model = match present[0] {
            "total_system" => Model::TotalSystem(parse_total(table(&doc["total_system"], "[total_system]")?)?),
            "lindblad" => Model::Lindblad(parse_lindblad(table(&doc["lindblad"], "[lindblad]")?, doc.get("channel"))?),
            "timelocal" => {
                let m = parse_timelocal(table(&doc["timelocal"], "[timelocal]")?, doc.get("tl_channel"))?;
                let witness = m.trace_witness(&witness_times(&m)).context("[timelocal]")?;
                if witness > TRACE_WITNESS_TOL {
                    warnings.push(format!(
                        "[timelocal]: trace-preservation witness {witness:e} exceeds {TRACE_WITNESS_TOL:e}; the flow need not preserve the trace"
                    ));
                }
                Model::TimeLocal(m)
            }
            _ => parse_probe(table(&doc["probe"], "[probe]")?)?,
        };
        let observables = match doc.get("observables") {
            None => Vec::new(),
            Some(v) => {
                let t = table(v, "[observables]")?;
                let mut out = Vec::new();
                for (name, op) in t {
                    check_name(name)?;
                    let ctx = format!("[observables].{name}");
                    let a = hermitian(op, &ctx)?;
                    if let Some(d) = model.dim() {
                        if a.dim() != d {
                            return Err(invalid(&ctx, format!("dimension {} does not match the system dimension {d}", a.dim())));
                        }
                    }
                    out.push((name.clone(), a));
                }
                out
            }
        };
        let initial = match doc.get("initial") {
            None => None,
            Some(v) => {
                let d = model.dim().ok_or_else(|| invalid("[initial]", "a derived probe has no system dimension"))?;
                Some(parse_initial(table(v, "[initial]")?, d)?)
            }
        };
        Ok(Self {
            model,
            observables,
            initial,
            warnings,
        })
    }

    /// Canonical form: every operator written out as a matrix literal.
    pub fn to_toml(&self) -> String {
        let mut doc = Table::new();
        match &self.model {
            Model::TotalSystem(m) => {
                let mut t = Table::new();
                t.insert("h_s".into(), matrix_value(m.h_s.as_mat()));
                t.insert("h_b".into(), matrix_value(m.h_b.as_mat()));
                t.insert("h_i".into(), matrix_value(m.h_i.as_mat()));
                t.insert("alpha".into(), Value::Float(m.alpha));
                t.insert("rho_b".into(), matrix_value(m.rho_b.as_mat()));
                doc.insert("total_system".into(), Value::Table(t));
            }
            Model::Lindblad(m) => {
                let mut t = Table::new();
                t.insert("h".into(), matrix_value(m.hamiltonian().as_mat()));
                doc.insert("lindblad".into(), Value::Table(t));
                let channels = m
                    .channels()
                    .iter()
                    .map(|ch| {
                        let mut c = Table::new();
                        c.insert("gamma".into(), Value::Float(ch.gamma));
                        c.insert("a".into(), matrix_value(ch.op.as_mat()));
                        Value::Table(c)
                    })
                    .collect();
                doc.insert("channel".into(), Value::Array(channels));
            }
            Model::TimeLocal(m) => {
                let mut t = Table::new();
                t.insert("a".into(), time_indexed_value(m.a()));
                t.insert("b".into(), time_indexed_value(m.b()));
                doc.insert("timelocal".into(), Value::Table(t));
                let channels = m
                    .channels()
                    .iter()
                    .map(|ch| {
                        let mut c = Table::new();
                        c.insert("c".into(), time_indexed_value(&ch.c));
                        c.insert("d".into(), time_indexed_value(&ch.d));
                        Value::Table(c)
                    })
                    .collect();
                doc.insert("tl_channel".into(), Value::Array(channels));
            }
            Model::Probe(p) => {
                let mut t = Table::new();
                t.insert("u".into(), matrix_value(p.unitary().as_mat()));
                let member = |key: &str, w: f64, psi: &StateVector| {
                    let mut m = Table::new();
                    m.insert(key.into(), Value::Float(w));
                    m.insert("state".into(), vector_value(psi.amplitudes()));
                    Value::Table(m)
                };
                t.insert("ensemble".into(), Value::Array(p.ensemble().iter().map(|(w, s)| member("p", *w, s)).collect()));
                t.insert("basis".into(), Value::Array(p.basis().iter().map(|(r, s)| member("r", *r, s)).collect()));
                doc.insert("probe".into(), Value::Table(t));
            }
            Model::DerivedProbe { tau } => {
                let mut t = Table::new();
                t.insert("tau".into(), Value::Float(*tau));
                doc.insert("probe".into(), Value::Table(t));
            }
        }
        if !self.observables.is_empty() {
            let obs = self.observables.iter().map(|(n, a)| (n.clone(), matrix_value(a.as_mat()))).collect();
            doc.insert("observables".into(), Value::Table(obs));
        }
        if let Some(init) = &self.initial {
            let mut t = Table::new();
            match init {
                Initial::Psi(psi) => {
                    t.insert("psi".into(), vector_value(psi.amplitudes()));
                }
                Initial::Rho(rho) => {
                    t.insert("rho".into(), matrix_value(rho.as_mat()));
                }
                Initial::Mixture(ens) => {
                    let members = ens
                        .members()
                        .iter()
                        .map(|m| {
                            let mut e = Table::new();
                            e.insert("weight".into(), Value::Float(m.weight));
                            e.insert("state".into(), vector_value(m.state.amplitudes()));
                            Value::Table(e)
                        })
                        .collect();
                    t.insert("mixture".into(), Value::Array(members));
                }
            }
            doc.insert("initial".into(), Value::Table(t));
        }
        toml::to_string(&doc).expect("model tables serialize")
    }
}

fn check_name(name: &str) -> CliResult<()> {
    let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    if ok {
        Ok(())
    } else {
        Err(invalid("[observables]", format!("name '{name}' must use only letters, digits and '_'")))
    }
}

fn witness_times(m: &TimeLocalModel) -> Vec<f64> {
    let (lo, hi) = m.interval();
    let (lo, hi) = (if lo.is_finite() { lo } else { 0.0 }, if hi.is_finite() { hi } else { lo.max(0.0) + 10.0 });
    (0..=20).map(|k| lo + (hi - lo) * k as f64 / 20.0).collect()
}

fn parse_total(t: &Table) -> CliResult<TotalSystemModel> {
    let ctx = "[total_system]";
    only_keys(t, &["h_s", "h_b", "h_i", "alpha", "rho_b"], ctx)?;
    let h_s = hermitian(get(t, "h_s", ctx)?, "[total_system].h_s")?;
    let h_b = hermitian(get(t, "h_b", ctx)?, "[total_system].h_b")?;
    let h_i = hermitian(get(t, "h_i", ctx)?, "[total_system].h_i")?;
    let alpha = as_f64(get(t, "alpha", ctx)?, "[total_system].alpha")?;
    let rho_ctx = "[total_system].rho_b";
    let rho_b = match t.get("rho_b") {
        None => ground_state(h_b.dim()),
        Some(Value::String(s)) if s.trim() == "ground" => ground_state(h_b.dim()),
        Some(Value::String(s)) if s.trim().starts_with("gibbs(") && s.trim().ends_with(')') => {
            let s = s.trim();
            let beta: f64 = s[6..s.len() - 1]
                .trim()
                .parse()
                .map_err(|_| invalid(rho_ctx, format!("'{s}': gibbs(beta) needs a numeric inverse temperature")))?;
            gibbs_state(&h_b, beta).context(rho_ctx)?
        }
        Some(Value::String(s)) => return Err(invalid(rho_ctx, format!("'{s}' is not one of ground, gibbs(beta) or a matrix"))),
        Some(v) => parse_density(v, h_b.dim(), rho_ctx)?,
    };
    TotalSystemModel::new(h_s, h_b, h_i, alpha, rho_b).context(ctx)
}

fn parse_lindblad(t: &Table, channels: Option<&Value>) -> CliResult<LindbladModel> {
    only_keys(t, &["h"], "[lindblad]")?;
    let h = hermitian(get(t, "h", "[lindblad]")?, "[lindblad].h")?;
    let mut list = Vec::new();
    if let Some(v) = channels {
        for (k, c) in array_of_tables(v, "[[channel]]")?.into_iter().enumerate() {
            let ctx = format!("[[channel]] #{}", k + 1);
            only_keys(c, &["gamma", "a"], &ctx)?;
            let gamma = as_f64(get(c, "gamma", &ctx)?, &format!("{ctx} gamma"))?;
            if !(gamma >= 0.0) {
                return Err(invalid(&format!("{ctx} gamma"), format!("decay rate {gamma} violates the nonnegativity invariant gamma >= 0")));
            }
            let op = parse_operator(get(c, "a", &ctx)?, &format!("{ctx} a"))?;
            if op.dim_rows() != h.dim() {
                return Err(invalid(&format!("{ctx} a"), format!("dimension {} does not match h ({})", op.dim_rows(), h.dim())));
            }
            list.push(Channel { gamma, op });
        }
    }
    LindbladModel::new(h, list).context("[lindblad]")
}

fn parse_time_indexed(v: &Value, ctx: &str) -> CliResult<TimeIndexed> {
    let t = table(v, ctx)?;
    if t.len() != 1 {
        return Err(invalid(ctx, "expected exactly one of constant = ..., profile = {...}, table = {...}"));
    }
    let (kind, body) = t.iter().next().expect("one entry");
    let ctx = format!("{ctx}.{kind}");
    match kind.as_str() {
        "constant" => Ok(TimeIndexed::Constant(parse_operator(body, &ctx)?)),
        "profile" => {
            let p = table(body, &ctx)?;
            only_keys(p, &["matrix", "scalar"], &ctx)?;
            let matrix = parse_operator(get(p, "matrix", &ctx)?, &format!("{ctx}.matrix"))?;
            let scalar = get(p, "scalar", &ctx)?
                .as_str()
                .ok_or_else(|| invalid(&ctx, "scalar must be a string such as \"sin(1, 2)\""))?;
            let scalar: TimeProfile = scalar.parse().context(format!("{ctx}.scalar"))?;
            Ok(TimeIndexed::Profile { matrix, scalar })
        }
        "table" => {
            let p = table(body, &ctx)?;
            only_keys(p, &["times", "matrices"], &ctx)?;
            let times = get(p, "times", &ctx)?
                .as_array()
                .ok_or_else(|| invalid(&ctx, "times must be an array"))?
                .iter()
                .map(|x| as_f64(x, &format!("{ctx}.times")))
                .collect::<CliResult<Vec<f64>>>()?;
            let matrices = get(p, "matrices", &ctx)?
                .as_array()
                .ok_or_else(|| invalid(&ctx, "matrices must be an array"))?
                .iter()
                .enumerate()
                .map(|(k, m)| parse_operator(m, &format!("{ctx}.matrices[{k}]")))
                .collect::<CliResult<Vec<ComplexMatrix>>>()?;
            TimeIndexed::table(times, matrices).context(&ctx)
        }
        _ => Err(invalid(&ctx, "expected constant, profile or table")),
    }
}

fn time_indexed_value(x: &TimeIndexed) -> Value {
    let mut t = Table::new();
    match x {
        TimeIndexed::Constant(m) => {
            t.insert("constant".into(), matrix_value(m.as_mat()));
        }
        TimeIndexed::Profile { matrix, scalar } => {
            let mut p = Table::new();
            p.insert("matrix".into(), matrix_value(matrix.as_mat()));
            p.insert("scalar".into(), Value::String(scalar.to_string()));
            t.insert("profile".into(), Value::Table(p));
        }
        TimeIndexed::Table { times, matrices } => {
            let mut p = Table::new();
            p.insert("times".into(), Value::Array(times.iter().map(|&x| Value::Float(x)).collect()));
            p.insert("matrices".into(), Value::Array(matrices.iter().map(|m| matrix_value(m.as_mat())).collect()));
            t.insert("table".into(), Value::Table(p));
        }
    }
    Value::Table(t)
}

fn parse_timelocal(t: &Table, channels: Option<&Value>) -> CliResult<TimeLocalModel> {
    only_keys(t, &["a", "b"], "[timelocal]")?;
    let a = parse_time_indexed(get(t, "a", "[timelocal]")?, "[timelocal].a")?;
    let b = parse_time_indexed(get(t, "b", "[timelocal]")?, "[timelocal].b")?;
    let mut list = Vec::new();
    if let Some(v) = channels {
        for (k, c) in array_of_tables(v, "[[tl_channel]]")?.into_iter().enumerate() {
            let ctx = format!("[[tl_channel]] #{}", k + 1);
            only_keys(c, &["c", "d"], &ctx)?;
            list.push(TimeLocalChannel {
                c: parse_time_indexed(get(c, "c", &ctx)?, &format!("{ctx} c"))?,
                d: parse_time_indexed(get(c, "d", &ctx)?, &format!("{ctx} d"))?,
            });
        }
    }
    TimeLocalModel::new(a, b, list).context("[timelocal]")
}

fn parse_probe(t: &Table) -> CliResult<Model> {
    let ctx = "[probe]";
    if t.contains_key("tau") {
        only_keys(t, &["tau"], ctx)?;
        let tau = as_f64(&t["tau"], "[probe].tau")?;
        if !tau.is_finite() {
            return Err(invalid("[probe].tau", "must be finite"));
        }
        return Ok(Model::DerivedProbe { tau });
    }
    only_keys(t, &["u", "ensemble", "basis"], ctx)?;
    let u = parse_operator(get(t, "u", ctx)?, "[probe].u")?;
    let members = |key: &str, weight_key: &str| -> CliResult<Vec<(f64, &Value)>> {
        array_of_tables(get(t, key, ctx)?, &format!("[probe].{key}"))?
            .into_iter()
            .enumerate()
            .map(|(k, m)| {
                let mctx = format!("[probe].{key}[{k}]");
                only_keys(m, &[weight_key, "state"], &mctx)?;
                Ok((as_f64(get(m, weight_key, &mctx)?, &format!("{mctx}.{weight_key}"))?, get(m, "state", &mctx)?))
            })
            .collect()
    };
    let basis_raw = members("basis", "r")?;
    let d_b = basis_raw.len();
    if d_b == 0 || u.dim_rows() % d_b != 0 {
        return Err(invalid("[probe].basis", format!("{d_b} readout states do not divide the dimension {} of u", u.dim_rows())));
    }
    let state = |v: &Value, c: String| parse_state(v, d_b, &c);
    let basis = basis_raw
        .iter()
        .enumerate()
        .map(|(k, (r, v))| Ok((*r, state(v, format!("[probe].basis[{k}].state"))?)))
        .collect::<CliResult<Vec<_>>>()?;
    let ensemble = members("ensemble", "p")?
        .iter()
        .enumerate()
        .map(|(k, (p, v))| Ok((*p, state(v, format!("[probe].ensemble[{k}].state"))?)))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(Model::Probe(ProbeModel::new(ensemble, basis, u).context(ctx)?))
}

fn parse_initial(t: &Table, d: usize) -> CliResult<Initial> {
    let ctx = "[initial]";
    only_keys(t, &["psi", "rho", "mixture"], ctx)?;
    if t.len() != 1 {
        return Err(invalid(ctx, "expected exactly one of psi, rho, mixture"));
    }
    if let Some(v) = t.get("psi") {
        return Ok(Initial::Psi(parse_state(v, d, "[initial].psi")?));
    }
    if let Some(v) = t.get("rho") {
        return Ok(Initial::Rho(parse_density(v, d, "[initial].rho")?));
    }
    let members = array_of_tables(&t["mixture"], "[initial].mixture")?
        .into_iter()
        .enumerate()
        .map(|(k, m)| {
            let mctx = format!("[initial].mixture[{k}]");
            only_keys(m, &["weight", "state"], &mctx)?;
            let w = as_f64(get(m, "weight", &mctx)?, &format!("{mctx}.weight"))?;
            Ok((w, parse_state(get(m, "state", &mctx)?, d, &format!("{mctx}.state"))?))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(Initial::Mixture(WeightedStateEnsemble::from_weights(members).context("[initial].mixture")?))
}
