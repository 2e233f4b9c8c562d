//! Experiment orchestration. Work is spread with rayon over particle counts,
//! replicas, Monte Carlo chunks and enumeration cases; every reduction keeps
//! input order, so results do not depend on the thread count.

use std::path::Path;

use chaoslab_core::chaos::{self, ChaosReport, SweepConfig};
use chaoslab_core::lde::{
    self, BoundConstants, CancellationReport, EnumerationReport, MomentEstimate, PhiField, PhiKind, SoundnessReport,
    TermRegime, VanishingOracle,
};
use chaoslab_core::meanfield::{self, EnergyReport, Trajectory};
use chaoslab_core::particles::{self, ParticleEnsemble, SimConfig};
use chaoslab_core::{DensityGrid, KernelSpec};
use rayon::prelude::*;

use crate::config::{BackgroundName, ConfigError, ExperimentConfig, ExperimentKind, SolveMode};
use crate::error::{AppError, AppResult};
use crate::manifest::OutputDir;
use crate::output::{self, TermRow};

/// Storage cap of the Picard solver, in stored grid values.
pub const PICARD_STORAGE_BUDGET: u64 = 50_000_000;

/// Monte Carlo samples per parallel work item.
const MC_CHUNK: usize = 256;

/// Cancellation tolerance at the configured quadrature size.
pub const CANCELLATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub snapshots: Vec<ParticleEnsemble>,
    pub trajectory: Option<Trajectory>,
    pub energy: Option<EnergyReport>,
    pub chaos: Option<ChaosReport>,
    pub lde: Option<LdeOutcome>,
    pub enumeration: Vec<EnumerationReport>,
    pub soundness: Vec<SoundnessReport>,
}

#[derive(Debug, Clone)]
pub struct LdeOutcome {
    pub cancellations: Vec<CancellationReport>,
    pub constants: BoundConstants,
    pub moments: Vec<MomentEstimate>,
    /// `(nodes, quadrature value, N = 2 Monte Carlo estimate)`
    pub quadrature: Option<(usize, f64, MomentEstimate)>,
    pub terms: Vec<TermRow>,
}

fn core(stage: &str) -> impl Fn(chaoslab_core::Error) -> AppError + '_ {
    move |e| AppError::core(stage, e)
}

/// Refuse work whose size is known to exceed a budget before anything runs.
pub fn budget_check(cfg: &ExperimentConfig) -> AppResult<()> {
    if matches!(cfg.experiment, ExperimentKind::Enumerate | ExperimentKind::LdeAudit) {
        for &[m, n] in &cfg.enumerate.cases {
            lde::enumeration_size(n, m).map_err(core("enumerate"))?;
        }
    }
    let picard = cfg.discretization.mode == SolveMode::Picard
        && matches!(cfg.experiment, ExperimentKind::SolvePde | ExperimentKind::ChaosStudy);
    if picard {
        let spec = cfg.kernel_spec().map_err(core("kernels"))?;
        let pde = cfg.pde_config(&spec);
        let steps = (pde.t_end / pde.dt).round() as u64;
        let nodes = (cfg.discretization.n as u64).pow(cfg.kernel.dim as u32);
        let stored = (steps + 1).saturating_mul(nodes);
        if stored > PICARD_STORAGE_BUDGET {
            return Err(AppError::core(
                "meanfield",
                chaoslab_core::Error::Budget(format!(
                    "Picard stores every step: {} steps x {nodes} nodes = {stored} values > {PICARD_STORAGE_BUDGET}",
                    steps + 1
                )),
            ));
        }
    }
    Ok(())
}

/// Run `cfg`, writing every artefact and `manifest.json` under `out`.
pub fn execute(cfg: &ExperimentConfig, out: &Path) -> AppResult<Outcome> {
    let problems = cfg.violations();
    if !problems.is_empty() {
        return Err(ConfigError(problems).into());
    }
    budget_check(cfg)?;
    let toml = cfg.to_toml();
    let mut dir = OutputDir::create(out, cfg.experiment.as_str(), cfg.seed, &toml)?;
    let result = match cfg.experiment {
        ExperimentKind::Simulate => run_simulate(cfg, &mut dir),
        ExperimentKind::SolvePde => run_solve_pde(cfg, &mut dir),
        ExperimentKind::ChaosStudy => run_chaos(cfg, &mut dir),
        ExperimentKind::LdeAudit => run_lde(cfg, &mut dir),
        ExperimentKind::Enumerate => run_enumerate(cfg, &mut dir),
    };
    let status = if result.is_ok() { "ok" } else { "failed" };
    let written = dir.finish(status);
    let outcome = result?;
    written?;
    Ok(outcome)
}

/// Particle run with replicas advanced in parallel; identical to the serial
/// `particles::run` because each replica owns its noise stream.
pub fn run_particles(
    ens: &mut ParticleEnsemble,
    spec: &KernelSpec,
    sim: &SimConfig,
    checkpoints: &[f64],
) -> chaoslab_core::Result<Vec<ParticleEnsemble>> {
    sim.validate(spec)?;
    if spec.dim() != ens.dim() {
        return Err(chaoslab_core::Error::InvalidArgument("kernel and ensemble dimensions differ".into()));
    }
    let cps = particles::checkpoint_steps(sim, checkpoints)?;
    let start = ens.step_index();
    let d = ens.dim();
    let chunks: Vec<&mut [f64]> = ens.replica_chunks_mut().collect();
    let per_replica = chunks
        .into_par_iter()
        .enumerate()
        .map(|(r, chunk)| particles::run_replica(chunk, d, spec, sim, r, start, &cps))
        .collect::<chaoslab_core::Result<Vec<_>>>()?;
    ens.advance_clock(sim.steps(), sim.dt);
    Ok(particles::assemble_snapshots(ens, &cps, sim.dt, start, per_replica))
}

fn run_simulate(cfg: &ExperimentConfig, dir: &mut OutputDir) -> AppResult<Outcome> {
    let (spec, rho0) = dir.stage("setup", |_| setup(cfg))?;
    let (law, _) = chaos::initial_law(&rho0, cfg.initial.perturbation).map_err(core("setup"))?;
    let checkpoints = cfg.checkpoints();
    let mut all = Vec::new();
    for &n in &cfg.particles.n_list {
        let snaps = dir.stage(&format!("simulate_N{n}"), |dir| {
            let seed = chaos::sweep_seed(cfg.seed, n);
            let mut ens = particles::sample_initial(&law, n, cfg.particles.replicas, seed).map_err(core("particles"))?;
            let sim = SimConfig { seed, ..cfg.sim_config() };
            let snaps = run_particles(&mut ens, &spec, &sim, &checkpoints).map_err(core("particles"))?;
            for (c, s) in snaps.iter().enumerate() {
                dir.write(&format!("snapshot_N{n}_c{c}.csv"), &output::snapshot_csv(s)?)?;
                if cfg.particles.binary_snapshots {
                    dir.write(&format!("snapshot_N{n}_c{c}.bin"), &output::snapshot_binary(s))?;
                }
            }
            Ok(snaps)
        })?;
        all.extend(snaps);
    }
    Ok(Outcome {
        snapshots: all,
        ..Outcome::default()
    })
}

fn setup(cfg: &ExperimentConfig) -> AppResult<(KernelSpec, DensityGrid)> {
    let spec = cfg.kernel_spec().map_err(core("kernels"))?;
    let rho0 = cfg.initial_density().map_err(core("meanfield"))?;
    Ok((spec, rho0))
}

fn solve_and_write(
    cfg: &ExperimentConfig,
    spec: &KernelSpec,
    rho0: &DensityGrid,
    dir: &mut OutputDir,
) -> AppResult<(Trajectory, EnergyReport)> {
    let traj = dir.stage("solve_pde", |_| {
        meanfield::solve(rho0, spec, &cfg.pde_config(spec)).map_err(core("meanfield"))
    })?;
    let energy = meanfield::energy_diagnostics(&traj.grids).map_err(core("meanfield"))?;
    dir.stage("write_pde", |dir| {
        for (c, g) in traj.grids.iter().enumerate() {
            dir.write(&format!("density_c{c}.csv"), &output::density_csv(g)?)?;
        }
        dir.write("pde_run.json", &output::pde_summary_json(&traj, &energy, &spec.label(), stepper_name(cfg))?)?;
        dir.write("energy.csv", &output::energy_csv(&energy)?)?;
        if !traj.residuals.is_empty() {
            dir.write("picard_residuals.csv", &output::picard_csv(&traj.residuals)?)?;
        }
        Ok(())
    })?;
    Ok((traj, energy))
}

fn stepper_name(cfg: &ExperimentConfig) -> &'static str {
    match cfg.discretization.stepper {
        crate::config::StepperName::ExplicitRk2 => "explicit_rk2",
        crate::config::StepperName::SemiImplicit => "semi_implicit",
    }
}

fn run_solve_pde(cfg: &ExperimentConfig, dir: &mut OutputDir) -> AppResult<Outcome> {
    let (spec, rho0) = dir.stage("setup", |_| setup(cfg))?;
    let (traj, energy) = solve_and_write(cfg, &spec, &rho0, dir)?;
    Ok(Outcome {
        trajectory: Some(traj),
        energy: Some(energy),
        ..Outcome::default()
    })
}

/// The N-sweep with one parallel task per particle count.
pub fn sweep(spec: &KernelSpec, rho0: &DensityGrid, limit: &[DensityGrid], sweep: &SweepConfig) -> chaoslab_core::Result<ChaosReport> {
    sweep.validate()?;
    sweep.sim.validate(spec)?;
    let bins = sweep.resolve_bins(spec.dim(), rho0.n());
    let (law, h0) = chaos::initial_law(rho0, sweep.initial_perturbation)?;
    let metrics = sweep.metrics(bins, h0);
    let rows = sweep
        .n_list
        .par_iter()
        .map(|&n| chaos::sweep_rows_for_n(n, spec, &law, limit, sweep, &metrics))
        .collect::<Vec<_>>()
        .concat();
    Ok(ChaosReport::assemble(rows, bins))
}

fn run_chaos(cfg: &ExperimentConfig, dir: &mut OutputDir) -> AppResult<Outcome> {
    let (spec, rho0) = dir.stage("setup", |_| setup(cfg))?;
    let (traj, energy) = solve_and_write(cfg, &spec, &rho0, dir)?;
    let report = dir.stage("chaos_sweep", |_| sweep(&spec, &rho0, &traj.grids, &cfg.sweep_config()).map_err(core("chaos")))?;
    dir.stage("write_chaos", |dir| {
        dir.write("chaos_report.csv", &output::chaos_csv(&report)?)?;
        dir.write("chaos_bootstrap.csv", &output::chaos_bootstrap_csv(&report)?)?;
        dir.write("chaos_loglog.svg", output::chaos_svg(&report).as_bytes())
    })?;
    for r in report.rows.iter().filter(|r| !r.ok()) {
        log::warn!("N = {} t = {}: {}", r.n, r.t, r.status);
    }
    Ok(Outcome {
        trajectory: Some(traj),
        energy: Some(energy),
        chaos: Some(report),
        ..Outcome::default()
    })
}

/// Exponents for `samples` configurations, computed in fixed-size chunks.
pub fn parallel_exponents(field: &PhiField, eta: f64, n: usize, samples: usize, seed: u64) -> chaoslab_core::Result<Vec<f64>> {
    let chunks: Vec<std::ops::Range<usize>> =
        (0..samples).step_by(MC_CHUNK).map(|s| s..(s + MC_CHUNK).min(samples)).collect();
    let parts = chunks
        .into_par_iter()
        .map(|r| lde::mc_exponents(field, eta, n, r, seed))
        .collect::<chaoslab_core::Result<Vec<_>>>()?;
    Ok(parts.concat())
}

fn lde_background(cfg: &ExperimentConfig, spec: &KernelSpec, rho0: &DensityGrid, dir: &mut OutputDir) -> AppResult<DensityGrid> {
    match cfg.lde.background {
        BackgroundName::Initial => Ok(rho0.clone()),
        BackgroundName::Pde => Ok(solve_and_write(cfg, spec, rho0, dir)?.0.last().clone()),
    }
}

fn run_lde(cfg: &ExperimentConfig, dir: &mut OutputDir) -> AppResult<Outcome> {
    let l = &cfg.lde;
    let seed = cfg.seed;
    let (spec, rho0) = dir.stage("setup", |_| setup(cfg))?;
    let bg = lde_background(cfg, &spec, &rho0, dir)?;
    let field2 = PhiField::new(PhiKind::Phi2, &spec, &bg).map_err(core("lde"))?;
    let field1 = PhiField::new(PhiKind::Phi1, &spec, &bg).map_err(core("lde"))?;

    let cancellations = dir.stage("cancellations", |dir| {
        let jobs: Vec<(&PhiField, usize)> = [&field2, &field1]
            .into_iter()
            .flat_map(|f| [(f, l.quad_n), (f, 2 * l.quad_n)])
            .collect();
        let reps = jobs
            .into_par_iter()
            .map(|(f, n)| lde::cancellation_residuals(f, l.probes, n, seed))
            .collect::<chaoslab_core::Result<Vec<_>>>()
            .map_err(core("lde"))?;
        dir.write("lde_cancellation.csv", &output::cancellation_csv(&reps)?)?;
        for r in reps.iter().filter(|r| r.n == l.quad_n) {
            if r.max_residual() > CANCELLATION_TOL {
                let (family, residual, probe) = if r.first_max >= r.second_max {
                    ("first", r.first_max, r.first_probe)
                } else {
                    ("second", r.second_max, r.second_probe)
                };
                return Err(AppError::core(
                    "lde",
                    chaoslab_core::Error::CancellationFailure { family, residual, probe },
                ));
            }
        }
        Ok(reps)
    })?;

    let constants = dir.stage("constants", |dir| {
        let c = lde::constants(&field2, cfg.eta_mode()).map_err(core("lde"))?;
        dir.write("lde_constants.csv", &output::constants_csv(&c)?)?;
        Ok(c)
    })?;
    let eta = constants.eta;

    let mut n_all: Vec<usize> = l.mc_n_list.iter().chain(&l.term_n_list).copied().collect();
    n_all.sort_unstable();
    n_all.dedup();
    let exponents = dir.stage("monte_carlo", |_| {
        n_all
            .iter()
            .map(|&n| parallel_exponents(&field2, eta, n, l.mc_samples, seed).map(|e| (n, e)))
            .collect::<chaoslab_core::Result<Vec<_>>>()
            .map_err(core("lde"))
    })?;
    let exps_for = |n: usize| &exponents.iter().find(|(m, _)| *m == n).expect("sampled").1;

    let moments = dir.stage("moments", |dir| {
        let rows = l
            .mc_n_list
            .iter()
            .map(|&n| lde::summarize_exp_moment(exps_for(n), n, l.mc_resamples, seed))
            .collect::<chaoslab_core::Result<Vec<_>>>()
            .map_err(core("lde"))?;
        dir.write("lde_mc_moments.csv", &output::moments_csv(&rows, constants.c_bound)?)?;
        Ok(rows)
    })?;

    let quadrature = if l.quadrature_nodes > 0 {
        Some(dir.stage("quadrature_n2", |dir| {
            let quad = lde::tensor_quadrature_n2(&field2, eta, l.quadrature_nodes).map_err(core("lde"))?;
            let exps = parallel_exponents(&field2, eta, 2, l.mc_samples, seed).map_err(core("lde"))?;
            let mc = lde::summarize_exp_moment(&exps, 2, l.mc_resamples, seed).map_err(core("lde"))?;
            dir.write("lde_quadrature.csv", &output::quadrature_csv(l.quadrature_nodes, quad, &mc)?)?;
            Ok((l.quadrature_nodes, quad, mc))
        })?)
    } else {
        None
    };

    let terms = dir.stage("term_bounds", |dir| {
        let mut rows = Vec::new();
        for &n in &l.term_n_list {
            for &m in &l.term_m {
                let est = lde::moment_term(exps_for(n), m).map_err(core("lde"))?;
                let (regime, bound) = lde::term_bound(m, n, constants.m_p_sup).map_err(core("lde"))?;
                rows.push(TermRow {
                    n,
                    m,
                    regime: match regime {
                        TermRegime::SmallM => "small_m",
                        TermRegime::LargeM => "large_m",
                    },
                    value: est.value,
                    std_err: est.std_err,
                    bound,
                });
            }
        }
        dir.write("lde_term_bounds.csv", &output::terms_csv(&rows)?)?;
        Ok(rows)
    })?;
    let enumeration = enumeration_stage(cfg, dir)?;

    Ok(Outcome {
        enumeration,
        lde: Some(LdeOutcome {
            cancellations,
            constants,
            moments,
            quadrature,
            terms,
        }),
        ..Outcome::default()
    })
}

/// Exhaustive survivor count with one parallel task per leading index.
pub fn enumerate_case(n: u32, m: u32) -> chaoslab_core::Result<EnumerationReport> {
    lde::enumeration_size(n, m)?;
    let counts = (1..=n)
        .into_par_iter()
        .map(|lead| lde::count_survivors_with_lead(n, m, lead))
        .collect::<chaoslab_core::Result<Vec<u64>>>()?;
    EnumerationReport::assemble(n, m, counts.iter().sum())
}

fn enumeration_stage(cfg: &ExperimentConfig, dir: &mut OutputDir) -> AppResult<Vec<EnumerationReport>> {
    dir.stage("enumerate", |dir| {
        let reps = cfg
            .enumerate
            .cases
            .par_iter()
            .map(|&[m, n]| enumerate_case(n, m))
            .collect::<chaoslab_core::Result<Vec<_>>>()
            .map_err(core("enumerate"))?;
        dir.write("enumeration.csv", &output::enumeration_csv(&reps)?)?;
        dir.write("enumeration_detail.csv", &output::enumeration_detail_csv(&reps)?)?;
        Ok(reps)
    })
}

fn run_enumerate(cfg: &ExperimentConfig, dir: &mut OutputDir) -> AppResult<Outcome> {
    let e = &cfg.enumerate;
    let reports = enumeration_stage(cfg, dir)?;
    let soundness = if e.oracle {
        dir.stage("oracle", |dir| {
            let (spec, rho0) = setup(cfg)?;
            let field = PhiField::new(PhiKind::Phi2, &spec, &rho0).map_err(core("lde"))?;
            let rows = e
                .cases
                .par_iter()
                .map(|&[m, n]| {
                    let mut oracle = VanishingOracle::new(&field, e.oracle_quad_n)?;
                    lde::audit_counting_rule(&mut oracle, n, m)
                })
                .collect::<chaoslab_core::Result<Vec<_>>>()
                .map_err(core("lde"))?;
            dir.write("enumeration_oracle.csv", &output::soundness_csv(&rows)?)?;
            Ok(rows)
        })?
    } else {
        Vec::new()
    };
    Ok(Outcome {
        enumeration: reports,
        soundness,
        ..Outcome::default()
    })
}
