//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use opensys::ensemble::{covariance_density, WeightedStateEnsemble};
use opensys::fixtures;
use opensys::hnm::{sample_doubled_trajectory, DoubledState, JumpScheme};
use opensys::lindblad::semigroup_residual;
use opensys::mcwf::{sample_trajectory, RngStream};
use opensys::qops::{apply_operation, kraus_from_probe, nonselective_post_state, outcome_probabilities};
use opensys::tcl::embed_lindblad;
use opensys::{ComplexMatrix, DensityMatrix, StateVector, C64};

type Outcome = Result<String, String>;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn run(args: &[&str]) -> Result<(String, Duration), String> {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_opensys"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok((String::from_utf8(out.stdout).map_err(|e| e.to_string())?, elapsed))
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn parse(text: &str) -> Result<Self, String> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| e.to_string())?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| e.to_string())?;
            let row = record
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| format!("{s}: {e}")))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        Ok(Table { header, rows })
    }

    fn col(&self, name: &str) -> Result<usize, String> {
        self.header.iter().position(|h| h == name).ok_or(format!("missing column {name}"))
    }

    fn density(&self, row: usize) -> Result<ComplexMatrix, String> {
        let n = self.header.iter().filter(|h| h.starts_with("re(rho_")).count();
        let d = (n as f64).sqrt().round() as usize;
        let mut entries = Vec::with_capacity(n);
        for i in 0..d {
            for j in 0..d {
                let re = self.rows[row][self.col(&format!("re(rho_{i}_{j})"))?];
                let im = self.rows[row][self.col(&format!("im(rho_{i}_{j})"))?];
                entries.push(C64::new(re, im));
            }
        }
        ComplexMatrix::from_row_major(d, d, &entries).map_err(|e| e.to_string())
    }
}

fn lindblad_fixture_files() -> Vec<PathBuf> {
    ["damped_qubit", "driven_damped_qubit", "three_level_cascade", "three_level_branching", "damped_oscillator"]
        .iter()
        .map(|n| fixture(&format!("{n}.toml")))
        .collect()
}

fn c1() -> Outcome {
    let (out, elapsed) = run(&[
        "evolve-lindblad", "--model", p(&fixture("damped_qubit.toml")),
        "--t-max", "5", "--steps", "200", "--rho", "basis(0)", "--observables", "pe=projector(2, 0)",
    ])?;
    let table = Table::parse(&out)?;
    let pe = table.col("pe")?;
    let mut worst: f64 = 0.0;
    for row in &table.rows {
        let exact = (-row[0]).exp();
        worst = worst.max((row[pe] - exact).abs() / exact);
    }
    let detail = format!("max relative error {worst:.2e}, runtime {:.3} s", elapsed.as_secs_f64());
    if worst <= 1e-6 && elapsed < Duration::from_secs(1) && table.rows.len() == 201 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c2_args(threads: &str) -> Vec<String> {
    [
        "mcwf", "--model", p(&fixture("damped_qubit.toml")), "--t-max", "5", "--steps", "50",
        "--psi0", "basis(0)", "--trajectories", "10000", "--seed", "2024", "--observables", "pe=projector(2, 0)",
        "--threads", threads,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn as_strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn c2() -> Outcome {
    let (out, elapsed) = run(&as_strs(&c2_args("1")))?;
    let table = Table::parse(&out)?;
    let (mean, se) = (table.col("pe_mean")?, table.col("pe_stderr")?);
    let mut within3 = 0;
    let mut within2 = 0;
    let mut worst_z: f64 = 0.0;
    let sampled = &table.rows[1..];
    for row in sampled {
        let delta = (row[mean] - (-row[0]).exp()).abs();
        let z = delta / row[se];
        worst_z = worst_z.max(z);
        within3 += usize::from(delta <= 3.0 * row[se]);
        within2 += usize::from(delta <= 2.0 * row[se]);
    }
    let frac2 = within2 as f64 / sampled.len() as f64;
    let detail = format!(
        "{within3}/{} within 3 SE (max z {worst_z:.2}), {:.0}% within 2 SE, runtime {:.2} s",
        sampled.len(),
        100.0 * frac2,
        elapsed.as_secs_f64()
    );
    if sampled.len() == 50 && within3 == sampled.len() && frac2 >= 0.95 && elapsed < Duration::from_secs(60) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn c3() -> Outcome {
    let gamma = 1.0;
    let model = fixtures::damped_qubit(gamma, 0.0);
    let psi0 = StateVector::basis(2, 0).map_err(|e| e.to_string())?;
    let grid = [0.0, 50.0];
    let mut waits = Vec::with_capacity(10_000);
    for k in 0..10_000 {
        let rec = sample_trajectory(&model, &psi0, &grid, RngStream::new(99, k)).map_err(|e| e.to_string())?;
        if rec.jump_log.len() != 1 {
            return Err(format!("trajectory {k} has {} jumps", rec.jump_log.len()));
        }
        waits.push(rec.jump_log[0].0);
    }
    waits.sort_by(f64::total_cmp);
    let n = waits.len() as f64;
    let d = waits.iter().enumerate().fold(0.0_f64, |d, (i, &t)| {
        let f = 1.0 - (-gamma * t).exp();
        d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    });
    let pvalue = kolmogorov_survival((n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d);
    let detail = format!("D = {d:.4}, p = {pvalue:.3}");
    if pvalue > 0.01 { Ok(detail) } else { Err(detail) }
}

fn c4() -> Outcome {
    let times = [0.3, 0.7, 1.1];
    let mut worst: f64 = 0.0;
    for model in fixtures::lindblad_fleet() {
        for &t1 in &times {
            for &t2 in &times {
                worst = worst.max(semigroup_residual(&model, t1, t2).map_err(|e| e.to_string())?);
            }
        }
    }
    let detail = format!("max residual {worst:.2e} over {} models", fixtures::lindblad_fleet().len());
    if worst <= 1e-9 { Ok(detail) } else { Err(detail) }
}

fn c5() -> Outcome {
    let op = kraus_from_probe(&fixtures::cnot_probe()).map_err(|e| e.to_string())?;
    let mut states: Vec<DensityMatrix> = (0..20).map(|s| fixtures::random_density(2, s)).collect();
    states.push(DensityMatrix::pure(&StateVector::basis(2, 0).unwrap()));
    states.push(DensityMatrix::pure(&StateVector::basis(2, 1).unwrap()));
    let (mut prob_err, mut post_err): (f64, f64) = (0.0, 0.0);
    for rho in &states {
        let probs = outcome_probabilities(&op, rho).map_err(|e| e.to_string())?;
        prob_err = prob_err.max((probs.iter().sum::<f64>() - 1.0).abs());
        let mut sum = ComplexMatrix::zeros(2, 2);
        for m in 0..op.len() {
            let phi = apply_operation(&op, m, rho).map_err(|e| e.to_string())?;
            sum = ComplexMatrix::new(sum.as_mat() + phi.as_mat()).unwrap();
        }
        let ns = nonselective_post_state(&op, rho).map_err(|e| e.to_string())?;
        post_err = post_err.max(ns.matrix().max_abs_diff(&sum));
    }
    let mut min_eig = f64::INFINITY;
    for m in 0..op.len() {
        let choi = op.choi(m).map_err(|e| e.to_string())?;
        let eig = choi.as_mat().clone().symmetric_eigenvalues();
        min_eig = min_eig.min(eig.iter().copied().fold(f64::INFINITY, f64::min));
    }
    let detail = format!("|sum P - 1| {prob_err:.1e}, nonselective {post_err:.1e}, min Choi eigenvalue {min_eig:.1e}");
    if prob_err <= 1e-10 && post_err <= 1e-12 && min_eig >= -1e-10 { Ok(detail) } else { Err(detail) }
}

fn c6() -> Outcome {
    let model = fixture("qubit_two_mode.toml");
    let mut worst: f64 = 0.0;
    for (tau, rho) in [("0.8", "{psi = [1, 1]}"), ("1.7", "basis(0)"), ("0.35", "{psi = [[0.6, 0], [0, 0.8]]}")] {
        let (exact, _) = run(&["evolve-exact", "--model", p(&model), "--t-max", tau, "--steps", "1", "--rho", rho, "--density"])?;
        let exact = Table::parse(&exact)?.density(1)?;
        let (measured, _) = run(&["measure", "--model", p(&model), "--tau", tau, "--rho", rho, "--mode", "nonselective"])?;
        let post = measured.split("\n\n").nth(1).ok_or("measure printed no post-state")?;
        let doc: toml::Table = post.parse().map_err(|e: toml::de::Error| e.to_string())?;
        let rho_m = opensys_cli::values::parse_density(&doc["rho"], exact.dim(), "rho").map_err(|e| e.to_string())?;
        worst = worst.max(rho_m.matrix().max_abs_diff(&exact));
    }
    let detail = format!("max |probe update - reduced exact| {worst:.1e} over 3 (tau, state) pairs");
    if worst <= 1e-10 { Ok(detail) } else { Err(detail) }
}

fn c7() -> Outcome {
    let mut worst: f64 = 0.0;
    for path in lindblad_fixture_files() {
        let common = ["--model", p(&path), "--t-max", "5", "--steps", "50", "--density"];
        let (tcl, _) = run(&[&["evolve-tcl"][..], &common].concat())?;
        let (lind, _) = run(&[&["evolve-lindblad"][..], &common].concat())?;
        let (tcl, lind) = (Table::parse(&tcl)?, Table::parse(&lind)?);
        for k in 0..lind.rows.len() {
            let diff = ComplexMatrix::new(tcl.density(k)?.as_mat() - lind.density(k)?.as_mat()).unwrap();
            worst = worst.max(diff.trace_norm());
        }
    }
    let detail = format!("max trace-norm gap {worst:.1e} over {} models", lindblad_fixture_files().len());
    if worst <= 1e-8 { Ok(detail) } else { Err(detail) }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let h = (b - a) / intervals as f64;
    let inner: f64 = (1..intervals).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    h / 3.0 * (f(a) + f(b) + inner)
}

fn c8() -> Outcome {
    let (out, _) = run(&[
        "evolve-tcl", "--model", p(&fixture("tcl_time_dependent_qubit.toml")),
        "--t-max", "5", "--steps", "100", "--rho", "basis(0)", "--observables", "pe=projector(2, 0)",
    ])?;
    let table = Table::parse(&out)?;
    let pe = table.col("pe")?;
    let mut worst: f64 = 0.0;
    for row in &table.rows {
        let integral = simpson(|s| 1.0 + (2.0 * s).sin(), 0.0, row[0], 2000);
        let expected = (-integral).exp();
        worst = worst.max((row[pe] - expected).abs() / expected);
    }
    let detail = format!("max relative error {worst:.2e}");
    if worst <= 1e-6 { Ok(detail) } else { Err(detail) }
}

fn c9_args(model: &str, threads: &str) -> Vec<String> {
    [
        "hnm", "--model", p(&fixture(model)), "--t-max", "4", "--steps", "40",
        "--trajectories", "10000", "--seed", "7", "--density", "--threads", threads,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

const C9_MODELS: [&str; 2] = ["driven_damped_qubit.toml", "asymmetric_doubled.toml"];

fn c9() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for model in C9_MODELS {
        let (est, elapsed) = run(&as_strs(&c9_args(model, "1")))?;
        let (reference, _) = run(&["evolve-tcl", "--model", p(&fixture(model)), "--t-max", "4", "--steps", "40", "--density"])?;
        let (est, reference) = (Table::parse(&est)?, Table::parse(&reference)?);
        let se = est.col("rho_stderr")?;
        let mut worst: f64 = 0.0;
        for k in 0..reference.rows.len() {
            let gap = ComplexMatrix::new(est.density(k)?.as_mat() - reference.density(k)?.as_mat()).unwrap().trace_norm();
            let bound = 5.0 * est.rows[k][se];
            if gap > bound {
                ok = false;
            }
            if gap > 0.0 {
                worst = worst.max(gap / est.rows[k][se]);
            }
        }
        ok &= elapsed < Duration::from_secs(120);
        details.push(format!("{model}: max gap/SE {worst:.2}, runtime {:.1} s", elapsed.as_secs_f64()));
    }
    let detail = details.join("; ");
    if ok { Ok(detail) } else { Err(detail) }
}

fn c10() -> Outcome {
    let model = embed_lindblad(&fixtures::driven_damped_qubit());
    let psi0 = StateVector::from_slice(&[C64::new(0.6, 0.0), C64::new(0.0, 0.8)]).map_err(|e| e.to_string())?;
    let theta0 = DoubledState::symmetric(&psi0);
    let grid: Vec<f64> = (0..=50).map(|k| 0.1 * k as f64).collect();
    let mut worst: f64 = 0.0;
    let mut jumps = 0;
    for k in 0..1000 {
        let rec = sample_doubled_trajectory(&model, &theta0, &grid, RngStream::new(31, k), JumpScheme::RateIntegral)
            .map_err(|e| e.to_string())?;
        jumps += rec.jump_log.len();
        for s in &rec.states {
            worst = worst.max((&s.phi - &s.psi).norm());
        }
    }
    let detail = format!("max |phi - psi| {worst:.1e} over 1000 trajectories ({jumps} jumps)");
    if worst <= 1e-9 { Ok(detail) } else { Err(detail) }
}

fn c11() -> Outcome {
    let mut runs = vec![c2_args("1"), c2_args("4")];
    for model in C9_MODELS {
        runs.push(c9_args(model, "1"));
        runs.push(c9_args(model, "4"));
    }
    let mut identical = 0;
    for pair in runs.chunks(2) {
        let (a, _) = run(&as_strs(&pair[0]))?;
        let (b, _) = run(&as_strs(&pair[1]))?;
        if a == b {
            identical += 1;
        }
    }
    let detail = format!("{identical}/3 runs byte-identical for --threads 1 vs 4");
    if identical == 3 { Ok(detail) } else { Err(detail) }
}

fn c12() -> Outcome {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let state = |a: C64, b: C64| StateVector::from_slice(&[a, b]).unwrap();
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    let plus_minus = WeightedStateEnsemble::from_weights(vec![
        (0.5, state(one * r, one * r)),
        (0.5, state(one * r, -one * r)),
    ])
    .map_err(|e| e.to_string())?;
    let e_g = WeightedStateEnsemble::from_weights(vec![(0.5, state(one, zero)), (0.5, state(zero, one))]).map_err(|e| e.to_string())?;
    let half = DensityMatrix::maximally_mixed(2);
    let pm_err = covariance_density(&plus_minus).map_err(|e| e.to_string())?.matrix().max_abs_diff(half.matrix());
    let eg_err = covariance_density(&e_g).map_err(|e| e.to_string())?.matrix().max_abs_diff(half.matrix());

    let mut phase_err: f64 = 0.0;
    for seed in 0..10u64 {
        let members: Vec<(f64, StateVector)> = (0..5).map(|j| ((1.0 + j as f64) / 15.0, fixtures::random_state(3, 10 * seed + j))).collect();
        let rephased: Vec<(f64, StateVector)> = members
            .iter()
            .enumerate()
            .map(|(j, (w, psi))| {
                let phase = C64::from_polar(1.0, 0.7 * (j as f64 + 1.0) + seed as f64);
                (*w, StateVector::new(psi.amplitudes() * phase).unwrap())
            })
            .collect();
        let a = WeightedStateEnsemble::from_weights(members).and_then(|e| covariance_density(&e)).map_err(|e| e.to_string())?;
        let b = WeightedStateEnsemble::from_weights(rephased).and_then(|e| covariance_density(&e)).map_err(|e| e.to_string())?;
        phase_err = phase_err.max(a.matrix().max_abs_diff(b.matrix()));
    }
    let detail = format!("{{+,-}} vs I/2 {pm_err:.1e}, {{e,g}} vs I/2 {eg_err:.1e}, phase invariance {phase_err:.1e}");
    if pm_err <= 1e-12 && eg_err <= 1e-12 && phase_err <= 1e-12 { Ok(detail) } else { Err(detail) }
}

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome); 12] = [
        ("1", "analytic decay", c1),
        ("2", "quantum-jump unraveling", c2),
        ("3", "waiting-time statistics", c3),
        ("4", "semigroup property", c4),
        ("5", "measurement algebra", c5),
        ("6", "probe vs exact reduced state", c6),
        ("7", "time-local embedding", c7),
        ("8", "time-dependent rate", c8),
        ("9", "doubled-space recovery", c9),
        ("10", "symmetric trajectories", c10),
        ("11", "determinism across threads", c11),
        ("12", "ensemble identities", c12),
    ];
    let mut failures = 0;
    for (id, name, check) in criteria {
        match check() {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
