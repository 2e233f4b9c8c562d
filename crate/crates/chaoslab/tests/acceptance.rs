//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Every run goes through the same config and pipeline code as the
//! CLI.

use std::collections::BTreeMap;
use std::f64::consts::{E, TAU};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use chaoslab::config::parse_config;
use chaoslab::pipeline::{self, Outcome};
use chaoslab::ExperimentConfig;
use chaoslab_core::lde;
use chaoslab_core::meanfield::Trajectory;
use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, TestRunner};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict, String> {
    Ok(Verdict {
        pass,
        detail: detail.into(),
    })
}

/// Runs shared between criteria, executed once and reused.
struct Runs {
    root: tempfile::TempDir,
    cache: BTreeMap<&'static str, (ExperimentConfig, Outcome, Duration)>,
}

impl Runs {
    fn get(&mut self, name: &'static str) -> Result<&(ExperimentConfig, Outcome, Duration), String> {
        if !self.cache.contains_key(name) {
            let cfg = parse_config(config_text(name)).map_err(|e| e.to_string())?;
            let start = Instant::now();
            let out = pipeline::execute(&cfg, &self.root.path().join(name)).map_err(|e| e.to_string())?;
            self.cache.insert(name, (cfg, out, start.elapsed()));
        }
        Ok(&self.cache[name])
    }
}

fn config_text(name: &str) -> &'static str {
    match name {
        "heat" => {
            r#"
experiment = "solve_pde"
[kernel]
drift = "zero_drift"
drift_params = []
diffusion = "constant_sigma"
diffusion_params = [1]
[initial]
modes = [{ wave = [1], amp = 0.5 }]
[discretization]
n = 128
t_end = 0.1
checkpoints = [0.05, 0.1]
"#
        }
        "null" => {
            r#"
experiment = "chaos_study"
seed = 11
[kernel]
drift = "zero_drift"
drift_params = []
diffusion = "constant_sigma"
diffusion_params = [0.5]
[discretization]
n = 64
dt = 1e-3
t_end = 0.25
[particles]
N_list = [32, 64]
replicas = 64
"#
        }
        "sweep" => {
            r#"
experiment = "chaos_study"
seed = 1
[kernel]
drift = "trig_drift"
drift_params = [0.2, 1]
diffusion = "trig_sigma"
diffusion_params = [1, 0.1, 1]
[discretization]
n = 64
dt = 1e-3
t_end = 0.25
checkpoints = [0.05, 0.25]
[particles]
N_list = [16, 32, 64, 128, 256, 512]
replicas = 64
"#
        }
        "lde" => {
            r#"
experiment = "lde_audit"
seed = 3
[kernel]
drift_params = [0.3, 1]
diffusion_params = [1, 0.25, 1]
[initial]
modes = [{ wave = [1], amp = 0.3 }, { wave = [2], amp = 0.1 }]
[lde]
probes = 64
quad_n = 128
mc_samples = 10000
mc_n_list = [8, 32, 128]
quadrature_nodes = 64
term_n_list = [3, 16]
term_m = [1, 2]
"#
        }
        "enumerate" => {
            r#"
experiment = "enumerate"
[kernel]
drift_params = [0.3, 1]
diffusion_params = [1, 0.25, 1]
[enumerate]
cases = [[1, 2], [1, 3], [1, 4], [2, 2], [2, 3]]
oracle = true
oracle_quad_n = 32
"#
        }
        "march" => {
            r#"
experiment = "solve_pde"
[discretization]
n = 64
t_end = 0.05
mode = "march"
"#
        }
        "picard" => {
            r#"
experiment = "solve_pde"
[discretization]
n = 64
t_end = 0.05
mode = "picard"
picard_tol = 1e-8
picard_max_iters = 50
"#
        }
        other => panic!("no config named {other}"),
    }
}

fn trajectory<'a>(runs: &'a mut Runs, name: &'static str) -> Result<&'a Trajectory, String> {
    runs.get(name)?.1.trajectory.as_ref().ok_or_else(|| format!("{name}: no trajectory"))
}

fn c1_heat(runs: &mut Runs) -> Result<Verdict, String> {
    let (_, out, wall) = runs.get("heat")?;
    let g = out.trajectory.as_ref().unwrap().last();
    let decay = (-TAU * TAU * 0.1).exp();
    let err = g
        .values()
        .iter()
        .enumerate()
        .map(|(j, v)| (v - (1.0 + 0.5 * decay * (TAU * j as f64 / 128.0).cos())).abs())
        .fold(0.0, f64::max);
    verdict(
        err < 1e-6 && wall.as_secs_f64() < 10.0,
        format!("max error {err:.3e} at t = 0.1 (n = 128), {:.2} s", wall.as_secs_f64()),
    )
}

fn c2_invariants(runs: &mut Runs) -> Result<Verdict, String> {
    let mut worst = (0.0f64, f64::INFINITY, 0.0f64);
    for name in ["heat", "march", "picard", "sweep", "null"] {
        let t = trajectory(runs, name)?;
        let mass_err = t.grids.iter().map(|g| (g.mass() - 1.0).abs()).fold(t.mass_drift, f64::max);
        worst.0 = worst.0.max(mass_err);
        worst.1 = worst.1.min(t.min_value);
        worst.2 = worst.2.max(t.max_rhs_integral);
    }
    verdict(
        worst.0 < 1e-8 && worst.1 > 0.0 && worst.2 < 1e-10,
        format!(
            "5 solves: max |mass - 1| {:.2e}, min density {:.4}, max |int rhs| {:.2e}",
            worst.0, worst.1, worst.2
        ),
    )
}

fn c3_null(runs: &mut Runs) -> Result<Verdict, String> {
    let (_, out, wall) = runs.get("null")?;
    let report = out.chaos.as_ref().unwrap();
    let row = report
        .rows
        .iter()
        .find(|r| r.n == 64 && (r.t - 0.25).abs() < 1e-12)
        .ok_or("no N = 64 row at t = 0.25")?;
    let limit = row.bias_1 + 3.0 * row.sigma_h1;
    verdict(
        row.ok() && row.h1 < limit && wall.as_secs_f64() < 120.0,
        format!(
            "H1 = {:.3e} < bias {:.3e} + 3 sigma {:.3e} (bins {}), {:.1} s",
            row.h1,
            row.bias_1,
            3.0 * row.sigma_h1,
            report.bins,
            wall.as_secs_f64()
        ),
    )
}

fn c4_decay(runs: &mut Runs) -> Result<Verdict, String> {
    let (_, out, wall) = runs.get("sweep")?;
    let report = out.chaos.as_ref().unwrap();
    let rows = report.final_rows();
    let all_ok = rows.len() == 6 && rows.iter().all(|r| r.ok());
    let mut worst_rise = f64::NEG_INFINITY;
    for w in rows.windows(2) {
        let tol = 3.0 * w[0].sigma_h1.hypot(w[1].sigma_h1);
        worst_rise = worst_rise.max(w[1].h1 - w[0].h1 - tol);
    }
    let monotone = worst_rise <= 0.0;
    verdict(
        all_ok && report.slope <= -0.7 && monotone && wall.as_secs_f64() < 1800.0,
        format!(
            "slope {:.3} at t = 0.25, monotone within 3 sigma: {monotone}, envelope(C=1) {:.3e}, minimal C {:.3e}, {:.1} s",
            report.slope,
            rows.last().map_or(f64::NAN, |r| r.envelope),
            report.min_c,
            wall.as_secs_f64()
        ),
    )
}

fn c5_ckp(runs: &mut Runs) -> Result<Verdict, String> {
    let mut rows = 0;
    let mut violations = 0;
    for name in ["sweep", "null"] {
        for r in &runs.get(name)?.1.chaos.as_ref().unwrap().rows {
            rows += 1;
            if !(r.ok() && r.ckp_holds()) {
                violations += 1;
            }
        }
    }
    verdict(violations == 0, format!("{violations} violations over {rows} rows"))
}

fn c6_cancellations(runs: &mut Runs) -> Result<Verdict, String> {
    let (_, out, wall) = runs.get("lde")?;
    let reps = &out.lde.as_ref().unwrap().cancellations;
    let at = |n: usize| reps.iter().filter(|r| r.n == n).map(|r| r.max_residual()).fold(0.0, f64::max);
    let (r128, r256) = (at(128), at(256));
    let probes_ok = reps.iter().all(|r| r.probes == 64);
    verdict(
        probes_ok && r128 < 1e-8 && r256 < 1e-11 && wall.as_secs_f64() < 600.0,
        format!("max residual {r128:.2e} at n = 128, {r256:.2e} at n = 256 (phi2 and phi1, 64 probes)"),
    )
}

fn c7_moments(runs: &mut Runs) -> Result<Verdict, String> {
    let (_, out, wall) = runs.get("lde")?;
    let l = out.lde.as_ref().unwrap();
    let c = l.constants.c_bound;
    let within = l.moments.iter().all(|m| m.within(c)) && l.moments.len() == 3;
    let worst = l.moments.iter().map(|m| m.mean + 3.0 * m.std_err).fold(0.0, f64::max);
    let (_, quad, mc) = l.quadrature.as_ref().ok_or("no quadrature")?;
    let agrees = chaoslab::output::quadrature_agrees(*quad, mc);
    let eta_certified = 1.0 / (12.0 * E * E * l.constants.b);
    verdict(
        within && agrees && (l.constants.eta - eta_certified).abs() <= 1e-15 * eta_certified && wall.as_secs_f64() < 600.0,
        format!(
            "max mean + 3 sigma {worst:.9} <= C = {c:.6}; N = 2 quadrature {quad:.9} in CI [{:.9}, {:.9}]",
            mc.ci_low, mc.ci_high
        ),
    )
}

fn c8_constants() -> Result<Verdict, String> {
    let start = Instant::now();
    let top = 1.0 / (6.0 * E * E);
    let mut runner = TestRunner::new(RunnerConfig {
        cases: 1000,
        failure_persistence: None,
        ..RunnerConfig::default()
    });
    let strategy = (1e-9..top, 1e-9..top);
    let result = runner.run(&strategy, |(a, b)| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (alpha, beta, c) = lde::alpha_beta_c(lo).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(alpha < 1.0 && beta < 1.0 && c.is_finite());
        let expect = 2.0 * (1.0 + 4.0 * alpha / (1.0 - alpha).powi(3) + 1.0 / (1.0 - beta));
        prop_assert!((c - expect).abs() <= 1e-12 * expect);
        let (_, _, c_hi) = lde::alpha_beta_c(hi).map_err(|e| TestCaseError::fail(e.to_string()))?;
        if hi > lo {
            prop_assert!(c_hi > c, "C({hi}) = {c_hi} <= C({lo}) = {c}");
        }
        Ok(())
    });
    let wall = start.elapsed().as_secs_f64();
    match result {
        Ok(()) => verdict(wall < 1.0, format!("1000 cases on (0, 1/(6e^2)), {wall:.3} s")),
        Err(e) => verdict(false, e.to_string()),
    }
}

fn c9_counting(runs: &mut Runs) -> Result<Verdict, String> {
    let (_, out, wall) = runs.get("enumerate")?;
    let expected = [(1, 2), (1, 3), (1, 4), (2, 2), (2, 3)];
    let mut ok = out.enumeration.len() == 5 && out.soundness.len() == 5;
    let mut lines = Vec::new();
    for (&(m, n), (e, s)) in expected.iter().zip(out.enumeration.iter().zip(&out.soundness)) {
        let stars = lde::binomial(2 * m as i64 + n as i64 - 1, n as i64 - 1);
        let case_ok = e.m == m
            && e.n == n
            && e.identity_checks_passed
            && (e.survivors as f64) <= e.stated_bound
            && e.stars_bars_direct as u128 == stars
            && s.rejected_nonvanishing == 0
            && s.max_rejected_ratio < 1e-6;
        ok &= case_ok;
        lines.push(format!(
            "(m={m},N={n}) {}/{} survive <= {:.0}, rejected {} all vanish",
            e.survivors, e.triples, e.stated_bound, s.rejected
        ));
    }
    verdict(ok && wall.as_secs_f64() < 300.0, lines.join("; "))
}

fn c10_terms(runs: &mut Runs) -> Result<Verdict, String> {
    let (_, out, _) = runs.get("lde")?;
    let l = out.lde.as_ref().unwrap();
    let mp = l.constants.m_p_sup;
    let mut ok = true;
    let mut lines = Vec::new();
    for (n, m, large) in [(16usize, 1u32, false), (16, 2, false), (3, 1, true)] {
        let row = l.terms.iter().find(|r| r.n == n && r.m == m).ok_or(format!("missing N = {n}, m = {m}"))?;
        let bound = if large {
            2.0 * (3.0 * E * E * mp).powi(2 * m as i32)
        } else {
            2.0 * 2.0 * (m * m) as f64 * ((32.0 * E.powi(3)).sqrt() * mp).powi(2 * m as i32)
        };
        let regime_ok = row.regime == if large { "large_m" } else { "small_m" };
        ok &= regime_ok && row.value <= bound && (row.bound - bound).abs() <= 1e-12 * bound;
        lines.push(format!("N={n} m={m}: {:.2e} <= {:.2e}", row.value, bound));
    }
    verdict(ok, lines.join("; "))
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .filter(|e| {
            let n = e.file_name().to_string_lossy().into_owned();
            n.ends_with(".csv") || n.ends_with(".svg")
        })
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect()
}

fn c11_determinism(runs: &mut Runs) -> Result<Verdict, String> {
    let names = ["heat", "null", "sweep", "lde", "enumerate", "picard"];
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().map_err(|e| e.to_string())?;
    let mut files = 0;
    let mut diffs = Vec::new();
    for name in names {
        let (cfg, _, _) = runs.get(name)?;
        let cfg = cfg.clone();
        let again = runs.root.path().join(format!("{name}_again"));
        pool.install(|| pipeline::execute(&cfg, &again)).map_err(|e| e.to_string())?;
        let a = csv_files(&runs.root.path().join(name));
        let b = csv_files(&again);
        if a.keys().ne(b.keys()) {
            diffs.push(format!("{name}: file sets differ"));
        }
        for (k, v) in &a {
            files += 1;
            if b.get(k) != Some(v) {
                diffs.push(format!("{name}/{k}"));
            }
        }
    }
    let detail = if diffs.is_empty() {
        format!("{files} CSV/SVG files byte-identical across reruns on a 3-thread pool")
    } else {
        format!("differing: {}", diffs.join(", "))
    };
    verdict(diffs.is_empty() && files > 0, detail)
}

fn c12_picard(runs: &mut Runs) -> Result<Verdict, String> {
    let start = Instant::now();
    let march = trajectory(runs, "march")?.last().clone();
    let picard = trajectory(runs, "picard")?.clone();
    let wall = start.elapsed().as_secs_f64();
    let dist = picard.last().l2_distance(&march).map_err(|e| e.to_string())?;
    let res = &picard.residuals;
    let max_ratio = res.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    verdict(
        dist < 1e-7 && res.len() >= 2 && max_ratio < 1.0 && res.last().is_some_and(|&r| r <= 1e-8) && wall < 120.0,
        format!(
            "L2 gap {dist:.2e} after {} iterations, max residual ratio {max_ratio:.3}",
            res.len()
        ),
    )
}

type Criterion = (&'static str, fn(&mut Runs) -> Result<Verdict, String>);

fn main() {
    let mut runs = Runs {
        root: tempfile::tempdir().expect("temp dir"),
        cache: BTreeMap::new(),
    };
    let criteria: [Criterion; 12] = [
        ("C1 heat-kernel reduction", c1_heat),
        ("C2 mass/positivity invariants", c2_invariants),
        ("C3 exact-chaos null test", c3_null),
        ("C4 1/N entropy decay", c4_decay),
        ("C5 CKP inequality", c5_ckp),
        ("C6 cancellation identities", c6_cancellations),
        ("C7 exponential-moment bound", c7_moments),
        ("C8 constants arithmetic", |_| c8_constants()),
        ("C9 counting-rule soundness", c9_counting),
        ("C10 term bounds", c10_terms),
        ("C11 determinism", c11_determinism),
        ("C12 Picard-march agreement", c12_picard),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| check(&mut runs)));
        let (pass, detail) = match result {
            Ok(Ok(v)) => (v.pass, v.detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".to_string()),
        };
        failed += !pass as usize;
        println!(
            "{} {name}: {detail} [{:.1} s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
