//! Command runners. Each returns its CSV (or report) as a string.

use std::path::Path;

use opensys::ensemble::{EnsembleStatistics, InitialState, WeightedStateEnsemble};
use opensys::hnm::{unravel_doubled_to_density, JumpScheme};
use opensys::lindblad::integrate_master;
use opensys::mcwf::{unravel_to_density, UnravelOptions};
use opensys::micro::ExactPropagator;
use opensys::ode::uniform_grid;
use opensys::qops::{
    kraus_from_probe, nonselective_post_state, outcome_probabilities, selective_post_state, ProbeModel,
};
use opensys::qstate::{expectation_complex, ops};
use opensys::tcl::{embed_lindblad, flow_map_diagnostics, integrate_timelocal, TimeLocalModel};
use opensys::{ComplexMatrix, DensityMatrix, HermitianOperator, StateVector};

use crate::args::{Cli, Command, DeterministicArgs, GridArgs, Mode, ObservableArgs, Scheme, StochasticArgs};
use crate::error::{CliError, CliResult, Context};
use crate::model::{Initial, Model, ModelFile};
use crate::values::{builder, flag_value, matrix_value, parse_density, parse_state};

/// Text for standard output plus diagnostics for standard error.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub stdout: String,
    pub warnings: Vec<String>,
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn csv_line(fields: &[String]) -> String {
    let mut s = fields.join(",");
    s.push('\n');
    s
}

/// Runs a parsed command line; `--output` is honoured here.
pub fn execute(cli: &Cli) -> CliResult<RunOutput> {
    let threads = cli.threads.map(|n| n as usize);
    let mut out = match &cli.command {
        Command::EvolveExact(args) => evolve_exact(args)?,
        Command::EvolveLindblad(args) => evolve_lindblad(args)?,
        Command::EvolveTcl { args, flow_diagnostics } => evolve_tcl(args, *flow_diagnostics)?,
        Command::Mcwf(args) => mcwf(args, threads)?,
        Command::Hnm {
            args,
            scheme,
            max_rate_step,
            dt_max,
        } => {
            let scheme = match scheme {
                Scheme::RateIntegral => JumpScheme::RateIntegral,
                Scheme::Bernoulli => JumpScheme::Bernoulli {
                    max_rate_step: *max_rate_step,
                    dt_max: *dt_max,
                },
            };
            hnm(args, threads, scheme)?
        }
        Command::Measure {
            model,
            probe,
            tau,
            rho,
            mode,
            outcome,
            post_state,
        } => measure(model, probe.as_deref(), *tau, rho.as_deref(), *mode, *outcome, post_state.as_deref())?,
        Command::Validate { model, canonical } => validate(model, *canonical)?,
        Command::Compare { reference, estimate } => compare(reference, estimate)?,
    };
    if let Some(path) = &cli.output {
        std::fs::write(path, &out.stdout)?;
        out.stdout.clear();
    }
    Ok(out)
}

fn grid(g: &GridArgs) -> CliResult<Vec<f64>> {
    if !(g.t_max > 0.0 && g.t_max.is_finite()) {
        return Err(CliError::Usage(format!("--t-max must be positive and finite, got {}", g.t_max)));
    }
    Ok(uniform_grid(g.t_max, g.steps as usize))
}

fn load(path: &Path, warnings: &mut Vec<String>) -> CliResult<ModelFile> {
    let f = ModelFile::load(path)?;
    warnings.extend(f.warnings.iter().map(|w| format!("{}: {w}", path.display())));
    Ok(f)
}

fn wrong_kind(command: &str, file: &ModelFile, expected: &str) -> CliError {
    CliError::Invalid(format!("{command} needs a {expected} model, got [{}]", file.model.kind()))
}

/// Splits at commas outside parentheses and brackets.
fn split_top_level(s: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth -= 1,
            _ => {}
        }
        if c == ',' && depth == 0 {
            parts.push(std::mem::take(&mut cur));
        } else {
            cur.push(c);
        }
    }
    parts.push(cur);
    parts.into_iter().map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()
}

fn header_name(expr: &str) -> String {
    let mut out = String::new();
    for c in expr.chars() {
        match c {
            ' ' | ')' => {}
            c if c.is_ascii_alphanumeric() || c == '_' => out.push(c),
            _ => out.push('_'),
        }
    }
    out
}

/// Resolves `--observables` against the model file.
pub fn select_observables(file: &ModelFile, args: &ObservableArgs, d: usize) -> CliResult<Vec<(String, HermitianOperator)>> {
    let items: Vec<String> = args.observables.iter().flat_map(|s| split_top_level(s)).collect();
    if items.is_empty() {
        if !file.observables.is_empty() {
            return Ok(file.observables.clone());
        }
        return Ok((0..d).map(|k| (format!("p{k}"), HermitianOperator::new(ops::projector(d, k)).expect("projector"))).collect());
    }
    let mut out = Vec::new();
    for item in items {
        if let Some((_, a)) = file.observables.iter().find(|(n, _)| *n == item) {
            out.push((item.clone(), a.clone()));
            continue;
        }
        let (name, expr) = match item.split_once('=') {
            Some((n, e)) => (n.trim().to_string(), e.trim().to_string()),
            None => (header_name(&item), item.clone()),
        };
        let ctx = format!("--observables {item}");
        let m = builder(&expr, &ctx).map_err(|e| CliError::Usage(e.to_string()))?;
        let a = HermitianOperator::new(m).context(&ctx)?;
        if a.dim() != d {
            return Err(CliError::Usage(format!("{ctx}: dimension {} does not match the system dimension {d}", a.dim())));
        }
        out.push((name, a));
    }
    Ok(out)
}

fn initial_density(file: &ModelFile, rho: Option<&str>, d: usize) -> CliResult<DensityMatrix> {
    if let Some(text) = rho {
        return parse_density(&flag_value(text, "--rho")?, d, "--rho");
    }
    match &file.initial {
        Some(init) => init.density().context("[initial]"),
        None => Ok(DensityMatrix::pure(&StateVector::basis(d, 0).expect("d >= 1"))),
    }
}

/// Pure-state decomposition of `rho` from its eigenvectors.
fn eigen_decomposition(rho: &DensityMatrix) -> CliResult<InitialState> {
    let h = HermitianOperator::new(rho.matrix().clone()).context("initial state")?;
    let (values, vectors) = h.eigh();
    let members: Vec<(f64, StateVector)> = values
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 1e-14)
        .map(|(k, &w)| (w, StateVector::normalized(vectors.column(k).into_owned()).expect("eigenvector")))
        .collect();
    if members.len() == 1 {
        return Ok(InitialState::Pure(members[0].1.clone()));
    }
    let total: f64 = members.iter().map(|(w, _)| w).sum();
    let members = members.into_iter().map(|(w, s)| (w / total, s)).collect();
    Ok(InitialState::Mixture(WeightedStateEnsemble::from_weights(members).context("initial state")?))
}

fn initial_ensemble(file: &ModelFile, psi0: Option<&str>, d: usize) -> CliResult<InitialState> {
    if let Some(text) = psi0 {
        return Ok(InitialState::Pure(parse_state(&flag_value(text, "--psi0")?, d, "--psi0")?));
    }
    match &file.initial {
        Some(Initial::Psi(psi)) => Ok(InitialState::Pure(psi.clone())),
        Some(Initial::Mixture(ens)) => Ok(InitialState::Mixture(ens.clone())),
        Some(Initial::Rho(rho)) => eigen_decomposition(rho),
        None => Ok(InitialState::Pure(StateVector::basis(d, 0).expect("d >= 1"))),
    }
}

fn density_header(d: usize) -> Vec<String> {
    let mut h = Vec::with_capacity(2 * d * d);
    for i in 0..d {
        for j in 0..d {
            h.push(format!("re(rho_{i}_{j})"));
            h.push(format!("im(rho_{i}_{j})"));
        }
    }
    h
}

fn density_fields(rho: &ComplexMatrix) -> Vec<String> {
    let m = rho.as_mat();
    let mut f = Vec::with_capacity(2 * m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            f.push(fmt_f64(m[(i, j)].re));
            f.push(fmt_f64(m[(i, j)].im));
        }
    }
    f
}

fn deterministic_csv(
    grid: &[f64],
    states: &[ComplexMatrix],
    observables: &[(String, HermitianOperator)],
    density: bool,
    extra: Option<(Vec<String>, Vec<Vec<String>>)>,
) -> CliResult<String> {
    let d = states[0].dim_rows();
    let mut header = vec!["t".to_string()];
    header.extend(observables.iter().map(|(n, _)| n.clone()));
    if density {
        header.extend(density_header(d));
    }
    if let Some((h, _)) = &extra {
        header.extend(h.iter().cloned());
    }
    let mut out = csv_line(&header);
    for (k, (t, rho)) in grid.iter().zip(states).enumerate() {
        let mut row = vec![fmt_f64(*t)];
        for (name, a) in observables {
            row.push(fmt_f64(expectation_complex(a.matrix(), rho).context(name)?.re));
        }
        if density {
            row.extend(density_fields(rho));
        }
        if let Some((_, rows)) = &extra {
            row.extend(rows[k].iter().cloned());
        }
        out.push_str(&csv_line(&row));
    }
    Ok(out)
}

fn evolve_exact(args: &DeterministicArgs) -> CliResult<RunOutput> {
    let mut warnings = Vec::new();
    let file = load(&args.model, &mut warnings)?;
    let Model::TotalSystem(model) = &file.model else {
        return Err(wrong_kind("evolve-exact", &file, "[total_system]"));
    };
    let grid = grid(&args.grid)?;
    let d = model.d_s();
    let observables = select_observables(&file, &args.obs, d)?;
    let rho0 = initial_density(&file, args.rho.as_deref(), d)?;
    let prop = ExactPropagator::new(model).context("evolve-exact")?;
    let states = grid
        .iter()
        .map(|&t| prop.reduced(&rho0, t).map(DensityMatrix::into_matrix))
        .collect::<opensys::Result<Vec<_>>>()
        .context("evolve-exact")?;
    Ok(RunOutput {
        stdout: deterministic_csv(&grid, &states, &observables, args.obs.density, None)?,
        warnings,
    })
}

fn evolve_lindblad(args: &DeterministicArgs) -> CliResult<RunOutput> {
    let mut warnings = Vec::new();
    let file = load(&args.model, &mut warnings)?;
    let Model::Lindblad(model) = &file.model else {
        return Err(wrong_kind("evolve-lindblad", &file, "[lindblad]"));
    };
    let grid = grid(&args.grid)?;
    let d = model.dim();
    let observables = select_observables(&file, &args.obs, d)?;
    let rho0 = initial_density(&file, args.rho.as_deref(), d)?;
    let states: Vec<ComplexMatrix> = integrate_master(model, &rho0, &grid)
        .context("evolve-lindblad")?
        .into_iter()
        .map(DensityMatrix::into_matrix)
        .collect();
    Ok(RunOutput {
        stdout: deterministic_csv(&grid, &states, &observables, args.obs.density, None)?,
        warnings,
    })
}

fn timelocal_model(command: &str, file: &ModelFile) -> CliResult<TimeLocalModel> {
    match &file.model {
        Model::TimeLocal(m) => Ok(m.clone()),
        Model::Lindblad(m) => Ok(embed_lindblad(m)),
        _ => Err(wrong_kind(command, file, "[timelocal] or [lindblad]")),
    }
}

fn evolve_tcl(args: &DeterministicArgs, flow_diagnostics: bool) -> CliResult<RunOutput> {
    let mut warnings = Vec::new();
    let file = load(&args.model, &mut warnings)?;
    let model = timelocal_model("evolve-tcl", &file)?;
    let grid = grid(&args.grid)?;
    let d = model.dim();
    let observables = select_observables(&file, &args.obs, d)?;
    let rho0 = initial_density(&file, args.rho.as_deref(), d)?;
    let states = integrate_timelocal(&model, &rho0, &grid).context("evolve-tcl")?;
    let extra = if flow_diagnostics {
        let diag = flow_map_diagnostics(&model, &grid).context("evolve-tcl")?;
        if let Some(first) = diag.iter().find(|x| x.invertibility_loss) {
            warnings.push(format!("invertibility loss: flow map condition number {:e} at t = {}", first.condition_number, first.t));
        }
        let rows = diag
            .iter()
            .map(|x| vec![fmt_f64(x.condition_number), (x.invertibility_loss as u8).to_string()])
            .collect();
        Some((vec!["flow_condition".to_string(), "invertibility_loss".to_string()], rows))
    } else {
        None
    };
    Ok(RunOutput {
        stdout: deterministic_csv(&grid, &states, &observables, args.obs.density, extra)?,
        warnings,
    })
}

fn stochastic_csv(stats: &[EnsembleStatistics], names: &[String], doubled: bool, density: bool) -> String {
    let d = stats[0].mean.dim_rows();
    let mut header = vec!["t".to_string()];
    for n in names {
        if doubled {
            header.extend([format!("re({n})"), format!("im({n})"), format!("{n}_stderr")]);
        } else {
            header.extend([format!("{n}_mean"), format!("{n}_stderr")]);
        }
    }
    if density {
        header.extend(density_header(d));
        header.push("rho_stderr".to_string());
    }
    header.push("mean_jump_count".to_string());
    let mut out = csv_line(&header);
    for s in stats {
        let mut row = vec![fmt_f64(s.time)];
        for o in &s.observables {
            if doubled {
                row.extend([fmt_f64(o.mean.re), fmt_f64(o.mean.im), fmt_f64(o.standard_error)]);
            } else {
                row.extend([fmt_f64(o.mean.re), fmt_f64(o.standard_error)]);
            }
        }
        if density {
            row.extend(density_fields(&s.mean));
            row.push(fmt_f64(s.standard_error));
        }
        row.push(fmt_f64(s.mean_jump_count));
        out.push_str(&csv_line(&row));
    }
    out
}

fn options(observables: &[(String, HermitianOperator)], threads: Option<usize>) -> UnravelOptions {
    UnravelOptions {
        threads,
        observables: observables.iter().map(|(_, a)| a.matrix().clone()).collect(),
    }
}

fn mcwf(args: &StochasticArgs, threads: Option<usize>) -> CliResult<RunOutput> {
    let mut warnings = Vec::new();
    let file = load(&args.model, &mut warnings)?;
    let Model::Lindblad(model) = &file.model else {
        return Err(wrong_kind("mcwf", &file, "[lindblad]"));
    };
    let grid = grid(&args.grid)?;
    let d = model.dim();
    let observables = select_observables(&file, &args.obs, d)?;
    let init = initial_ensemble(&file, args.psi0.as_deref(), d)?;
    let stats = unravel_to_density(model, &init, &grid, args.trajectories as usize, args.seed, &options(&observables, threads)).context("mcwf")?;
    let names: Vec<String> = observables.into_iter().map(|(n, _)| n).collect();
    Ok(RunOutput {
        stdout: stochastic_csv(&stats, &names, false, args.obs.density),
        warnings,
    })
}

fn hnm(args: &StochasticArgs, threads: Option<usize>, scheme: JumpScheme) -> CliResult<RunOutput> {
    let mut warnings = Vec::new();
    let file = load(&args.model, &mut warnings)?;
    let model = timelocal_model("hnm", &file)?;
    let grid = grid(&args.grid)?;
    let d = model.dim();
    let observables = select_observables(&file, &args.obs, d)?;
    let init = initial_ensemble(&file, args.psi0.as_deref(), d)?;
    let stats = unravel_doubled_to_density(&model, &init, &grid, args.trajectories as usize, args.seed, &options(&observables, threads), scheme)
        .context("hnm")?;
    let names: Vec<String> = observables.into_iter().map(|(n, _)| n).collect();
    Ok(RunOutput {
        stdout: stochastic_csv(&stats, &names, true, args.obs.density),
        warnings,
    })
}

fn resolve_probe(file: &ModelFile, probe: Option<&Path>, tau: Option<f64>, warnings: &mut Vec<String>) -> CliResult<ProbeModel> {
    let derived_tau = match (&file.model, probe, tau) {
        (Model::Probe(p), None, None) => return Ok(p.clone()),
        (Model::Probe(_), _, _) => return Err(CliError::Usage("a [probe] model takes neither --probe nor --tau".into())),
        (Model::TotalSystem(_), None, Some(tau)) => tau,
        (Model::TotalSystem(_), Some(path), None) => match load(path, warnings)?.model {
            Model::DerivedProbe { tau } => tau,
            Model::Probe(p) => return Ok(p),
            other => return Err(CliError::Invalid(format!("{}: expected a [probe] file, got [{}]", path.display(), other.kind()))),
        },
        (Model::TotalSystem(_), None, None) => {
            return Err(CliError::Usage("a [total_system] model needs --tau or --probe".into()));
        }
        (Model::DerivedProbe { .. }, _, _) => {
            return Err(CliError::Invalid("a probe given by tau needs a [total_system] --model".into()));
        }
        _ => return Err(wrong_kind("measure", file, "[probe] or [total_system]")),
    };
    let Model::TotalSystem(total) = &file.model else { unreachable!() };
    ProbeModel::from_total_system(total, derived_tau).context("probe from total system")
}

fn measure(
    model: &Path,
    probe: Option<&Path>,
    tau: Option<f64>,
    rho: Option<&str>,
    mode: Mode,
    outcome: Option<usize>,
    post_state: Option<&Path>,
) -> CliResult<RunOutput> {
    let mut warnings = Vec::new();
    let file = load(model, &mut warnings)?;
    let probe = resolve_probe(&file, probe, tau, &mut warnings)?;
    let op = kraus_from_probe(&probe).context("measure")?;
    let rho = initial_density(&file, rho, probe.d_s())?;
    let probs = outcome_probabilities(&op, &rho).context("measure")?;
    let mut out = csv_line(&["m".into(), "r_m".into(), "P(m)".into()]);
    for (m, (o, p)) in op.outcomes().iter().zip(&probs).enumerate() {
        out.push_str(&csv_line(&[m.to_string(), fmt_f64(o.label), fmt_f64(*p)]));
    }
    let post = match mode {
        Mode::Nonselective => {
            if outcome.is_some() {
                return Err(CliError::Usage("--outcome only applies to --mode selective".into()));
            }
            nonselective_post_state(&op, &rho).context("measure")?
        }
        Mode::Selective => {
            let m = outcome.ok_or_else(|| CliError::Usage("--mode selective needs --outcome".into()))?;
            selective_post_state(&op, m, &rho).context("measure")?
        }
    };
    let mut doc = toml::Table::new();
    doc.insert("rho".into(), matrix_value(post.as_mat()));
    let literal = toml::to_string(&doc).expect("matrix serializes");
    match post_state {
        Some(path) => std::fs::write(path, literal)?,
        None => {
            out.push('\n');
            out.push_str(&literal);
        }
    }
    Ok(RunOutput { stdout: out, warnings })
}

fn validate(paths: &[std::path::PathBuf], canonical: bool) -> CliResult<RunOutput> {
    let mut warnings = Vec::new();
    let mut out = String::new();
    for path in paths {
        let file = load(path, &mut warnings)?;
        let detail = match &file.model {
            Model::TotalSystem(m) => format!("d_S = {}, d_B = {}, alpha = {}", m.d_s(), m.d_b(), m.alpha),
            Model::Lindblad(m) => format!("d = {}, {} channel(s)", m.dim(), m.channels().len()),
            Model::TimeLocal(m) => format!("d = {}, {} channel(s), symmetric = {}", m.dim(), m.channels().len(), m.is_symmetric()),
            Model::Probe(p) => format!("d_S = {}, d_B = {}, {} outcome(s)", p.d_s(), p.d_b(), p.basis().len()),
            Model::DerivedProbe { tau } => format!("derived from a total-system model at tau = {tau}"),
        };
        out.push_str(&format!("{}: ok [{}] {detail}\n", path.display(), file.model.kind()));
        if canonical {
            out.push_str(&file.to_toml());
        }
    }
    Ok(RunOutput { stdout: out, warnings })
}

fn read_csv(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|x| x.trim().parse::<f64>().map_err(|_| CliError::Invalid(format!("{}: row {}: '{x}' is not a number", path.display(), k + 1))))
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn compare(reference: &Path, estimate: &Path) -> CliResult<RunOutput> {
    let (ref_header, ref_rows) = read_csv(reference)?;
    let (est_header, est_rows) = read_csv(estimate)?;
    let col = |h: &[String], name: &str| h.iter().position(|x| x == name);
    let (Some(rt), Some(et)) = (col(&ref_header, "t"), col(&est_header, "t")) else {
        return Err(CliError::Invalid("both files need a 't' column".into()));
    };
    if ref_rows.len() != est_rows.len() {
        return Err(CliError::Invalid(format!("row counts differ: {} vs {}", ref_rows.len(), est_rows.len())));
    }
    for (k, (a, b)) in ref_rows.iter().zip(&est_rows).enumerate() {
        if (a[rt] - b[et]).abs() > 1e-12 * (1.0 + a[rt].abs()) {
            return Err(CliError::Invalid(format!("time grids differ at row {}: {} vs {}", k + 1, a[rt], b[et])));
        }
    }
    let mut out = csv_line(&["quantity".into(), "max_abs_delta".into(), "max_delta_over_stderr".into()]);
    let mut matched = 0;
    for (ri, name) in ref_header.iter().enumerate() {
        if ri == rt {
            continue;
        }
        let is_density = name.starts_with("re(rho_") || name.starts_with("im(rho_");
        let (mean_col, se_col) = if is_density {
            (col(&est_header, name), col(&est_header, "rho_stderr"))
        } else {
            let mean = col(&est_header, &format!("{name}_mean")).or_else(|| col(&est_header, &format!("re({name})")));
            (mean, col(&est_header, &format!("{name}_stderr")))
        };
        let (Some(mc), Some(sc)) = (mean_col, se_col) else {
            continue;
        };
        matched += 1;
        let mut max_delta: f64 = 0.0;
        let mut max_z: f64 = 0.0;
        for (a, b) in ref_rows.iter().zip(&est_rows) {
            let delta = (a[ri] - b[mc]).abs();
            max_delta = max_delta.max(delta);
            let z = if delta <= 1e-9 {
                0.0
            } else if b[sc] > 0.0 {
                delta / b[sc]
            } else {
                f64::INFINITY
            };
            max_z = max_z.max(z);
        }
        out.push_str(&csv_line(&[name.clone(), fmt_f64(max_delta), fmt_f64(max_z)]));
    }
    if matched == 0 {
        return Err(CliError::Invalid("no reference column has a matching mean and standard error in the estimate".into()));
    }
    Ok(RunOutput {
        stdout: out,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_roundtrips() {
        for x in [0.1, 1.0, -2.5e-17, 1e300, 0.1 + 0.2, std::f64::consts::PI] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(0.25), "0.25");
    }

    #[test]
    fn observable_lists_split_outside_parentheses() {
        assert_eq!(split_top_level("a, projector(2,0),b"), vec!["a", "projector(2,0)", "b"]);
        assert_eq!(header_name("projector(2, 0)"), "projector_2_0");
    }
}
