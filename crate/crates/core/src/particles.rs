//! Euler–Maruyama integration of the mean-field particle system
//! `dX^i = (1/N) Σ_k K(X^i − X^k) dt + (√2/N) Σ_k σ(X^i − X^k) dB^i`
//! for an ensemble of independent replicas.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::DensityGrid;
use crate::kernels::KernelSpec;
use crate::math::{floor, sqrt, SQRT_2};
use crate::rng::{normal, stream, Domain};
use crate::torus::{as_multiple, min_image, wrap_coord};

/// How interaction sums are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Interaction {
    /// Exact full sums through the modal (trigonometric) expansion, `O(N)` per
    /// kernel term.
    Direct,
    /// Literal `O(N²)` pair loop; reference implementation.
    Pairwise,
    /// Pairs within Chebyshev distance `cutoff`, found by cell binning.
    CellList { cutoff: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    EulerMaruyama,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    pub seed: u64,
    pub interaction: Interaction,
    /// Keep the `k = i` term in both interaction sums.
    pub include_self: bool,
}

impl SimConfig {
    pub fn new(dt: f64, t_end: f64, seed: u64) -> Self {
        SimConfig {
            dt,
            t_end,
            scheme: Scheme::EulerMaruyama,
            seed,
            interaction: Interaction::Direct,
            include_self: true,
        }
    }

    pub fn validate(&self, spec: &KernelSpec) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.dt > self.t_end {
            return Err(Error::Config(format!("dt = {} exceeds t_end = {}", self.dt, self.t_end)));
        }
        check_interaction(self.interaction, spec)
    }

    /// Number of steps to reach `t_end`.
    pub fn steps(&self) -> u64 {
        let q = self.t_end / self.dt;
        let r = libm::round(q);
        if (q - r).abs() < 1e-9 * r.max(1.0) {
            r as u64
        } else {
            libm::ceil(q) as u64
        }
    }
}

fn check_interaction(interaction: Interaction, spec: &KernelSpec) -> Result<()> {
    if let Interaction::CellList { cutoff } = interaction {
        if !(cutoff > 0.0 && cutoff.is_finite()) {
            return Err(Error::Config(format!("cell-list cutoff must be positive, got {cutoff}")));
        }
        let full = cutoff >= 0.5;
        let covered = spec.support_radius().is_some_and(|r| r <= cutoff);
        if !(full || covered) {
            return Err(Error::Config(format!(
                "cell_list with cutoff {cutoff} needs kernels with a declared support radius <= cutoff \
                 ({} kernels are global; use direct or cutoff >= 0.5)",
                spec.label()
            )));
        }
    }
    Ok(())
}

/// `M` independent replicas of `N` particles on `T^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    n_particles: usize,
    dim: usize,
    replicas: usize,
    /// `[replica][particle][axis]`
    positions: Vec<f64>,
    time: f64,
    seed: u64,
    step_index: u64,
}

impl ParticleEnsemble {
    pub fn from_positions(n_particles: usize, dim: usize, replicas: usize, positions: Vec<f64>, seed: u64) -> Result<Self> {
        if n_particles == 0 || dim == 0 || replicas == 0 {
            return Err(Error::invalid("ensemble dimensions must be positive"));
        }
        if positions.len() != n_particles * dim * replicas {
            return Err(Error::invalid("position array has the wrong length"));
        }
        Ok(ParticleEnsemble {
            n_particles,
            dim,
            replicas,
            positions: positions.into_iter().map(wrap_coord).collect(),
            time: 0.0,
            seed,
            step_index: 0,
        })
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn replicas(&self) -> usize {
        self.replicas
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn replica(&self, r: usize) -> &[f64] {
        let w = self.n_particles * self.dim;
        &self.positions[r * w..(r + 1) * w]
    }

    /// Mutable per-replica slices, for callers that step replicas on their own.
    pub fn replica_chunks_mut(&mut self) -> core::slice::ChunksExactMut<'_, f64> {
        let w = self.n_particles * self.dim;
        self.positions.chunks_exact_mut(w)
    }

    /// Record that `steps` steps of size `dt` were applied through
    /// [`ParticleEnsemble::replica_chunks_mut`].
    pub fn advance_clock(&mut self, steps: u64, dt: f64) {
        self.step_index += steps;
        self.time = self.step_index as f64 * dt;
    }
}

/// I.i.d. initial positions from the piecewise-constant law of `density`.
pub fn sample_initial(density: &DensityGrid, n_particles: usize, n_replicas: usize, seed: u64) -> Result<ParticleEnsemble> {
    if n_particles == 0 || n_replicas == 0 {
        return Err(Error::invalid("particle and replica counts must be positive"));
    }
    let total: f64 = density.values().iter().sum();
    if density.min() < 0.0 || total <= 0.0 {
        return Err(Error::InvalidDensity("density needs nonnegative nodes and positive mass".into()));
    }
    let d = density.dim();
    let mut positions = Vec::with_capacity(n_particles * d * n_replicas);
    for r in 0..n_replicas {
        let mut rng = stream(seed, Domain::Init, r as u64, 0);
        density.sample_cells(&mut rng, n_particles, &mut positions)?;
    }
    ParticleEnsemble::from_positions(n_particles, d, n_replicas, positions, seed)
}

/// Interaction sums for one replica: `drift[i·d+α] = (1/N) Σ_k K_α(x_i − x_k)`
/// and `diag[i·d+α] = (√2/N) Σ_k σ_αα(x_i − x_k)`.
pub fn interaction_sums(
    pos: &[f64],
    dim: usize,
    spec: &KernelSpec,
    interaction: Interaction,
    include_self: bool,
    drift: &mut [f64],
    diag: &mut [f64],
) {
    let n = pos.len() / dim;
    match interaction {
        Interaction::Direct => {
            for a in 0..dim {
                let k = &spec.drift()[a];
                let s = &spec.diffusion()[a];
                let ks = k.phase_sums(pos);
                let ss = s.phase_sums(pos);
                for i in 0..n {
                    let x = &pos[i * dim..(i + 1) * dim];
                    drift[i * dim + a] = k.pair_sum(x, n, &ks);
                    diag[i * dim + a] = s.pair_sum(x, n, &ss);
                }
            }
        }
        Interaction::Pairwise => pair_loop(pos, dim, spec, None, drift, diag),
        Interaction::CellList { cutoff } => pair_loop(pos, dim, spec, Some(cutoff), drift, diag),
    }
    if !include_self {
        let origin = vec![0.0; dim];
        let mut k0 = vec![0.0; dim];
        let mut s0 = vec![0.0; dim];
        spec.eval_drift(&origin, &mut k0);
        spec.eval_diffusion(&origin, &mut s0);
        for i in 0..n {
            for a in 0..dim {
                drift[i * dim + a] -= k0[a];
                diag[i * dim + a] -= s0[a];
            }
        }
    }
    let inv = 1.0 / n as f64;
    for v in drift.iter_mut() {
        *v *= inv;
    }
    for v in diag.iter_mut() {
        *v *= SQRT_2 * inv;
    }
}

fn pair_loop(pos: &[f64], dim: usize, spec: &KernelSpec, cutoff: Option<f64>, drift: &mut [f64], diag: &mut [f64]) {
    let n = pos.len() / dim;
    drift.iter_mut().for_each(|v| *v = 0.0);
    diag.iter_mut().for_each(|v| *v = 0.0);
    let mut disp = vec![0.0; dim];
    let mut kv = vec![0.0; dim];
    let mut sv = vec![0.0; dim];
    let mut visit = |i: usize, k: usize, drift: &mut [f64], diag: &mut [f64]| {
        for a in 0..dim {
            disp[a] = min_image(pos[i * dim + a] - pos[k * dim + a]);
        }
        if let Some(c) = cutoff {
            if disp.iter().any(|v| v.abs() > c) {
                return;
            }
        }
        spec.eval_drift(&disp, &mut kv);
        spec.eval_diffusion(&disp, &mut sv);
        for a in 0..dim {
            drift[i * dim + a] += kv[a];
            diag[i * dim + a] += sv[a];
        }
    };
    let cells_per_axis = cutoff.map_or(1, |c| (floor(1.0 / c) as usize).max(1));
    if cells_per_axis < 3 {
        for i in 0..n {
            for k in 0..n {
                visit(i, k, drift, diag);
            }
        }
        return;
    }
    // bin particles; neighbours are the 3^d surrounding cells
    let nc = cells_per_axis;
    let cell_of = |p: &[f64]| -> Vec<usize> { p.iter().map(|&x| ((x * nc as f64) as usize).min(nc - 1)).collect() };
    let flat = |c: &[usize]| c.iter().fold(0usize, |acc, &v| acc * nc + v);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); nc.pow(dim as u32)];
    for k in 0..n {
        buckets[flat(&cell_of(&pos[k * dim..(k + 1) * dim]))].push(k);
    }
    let offsets: Vec<Vec<i64>> = (0..3usize.pow(dim as u32))
        .map(|mut code| {
            (0..dim)
                .map(|_| {
                    let o = (code % 3) as i64 - 1;
                    code /= 3;
                    o
                })
                .collect()
        })
        .collect();
    let mut neighbour = vec![0usize; dim];
    for i in 0..n {
        let ci = cell_of(&pos[i * dim..(i + 1) * dim]);
        for off in &offsets {
            for a in 0..dim {
                neighbour[a] = (ci[a] as i64 + off[a]).rem_euclid(nc as i64) as usize;
            }
            for &k in &buckets[flat(&neighbour)] {
                visit(i, k, drift, diag);
            }
        }
    }
}

/// Standard normal increments for one replica at one step.
pub fn replica_noise(seed: u64, replica: usize, step: u64, len: usize) -> Vec<f64> {
    let mut rng = stream(seed, Domain::Step, replica as u64, step);
    (0..len).map(|_| normal(&mut rng)).collect()
}

/// One Euler–Maruyama step of a single replica with the given noise.
#[allow(clippy::too_many_arguments)]
pub fn advance_replica(
    pos: &mut [f64],
    dim: usize,
    spec: &KernelSpec,
    dt: f64,
    noise: &[f64],
    interaction: Interaction,
    include_self: bool,
    replica: usize,
    step: u64,
) -> Result<()> {
    let mut drift = vec![0.0; pos.len()];
    let mut diag = vec![0.0; pos.len()];
    interaction_sums(pos, dim, spec, interaction, include_self, &mut drift, &mut diag);
    let sdt = sqrt(dt);
    for (j, x) in pos.iter_mut().enumerate() {
        let y = *x + drift[j] * dt + diag[j] * noise[j] * sdt;
        if !y.is_finite() {
            return Err(Error::NumericalBlowup { replica, step });
        }
        *x = wrap_coord(y);
    }
    Ok(())
}

fn check_step(ens: &ParticleEnsemble, spec: &KernelSpec, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if spec.dim() != ens.dim {
        return Err(Error::invalid(format!("kernel dimension {} != ensemble dimension {}", spec.dim(), ens.dim)));
    }
    Ok(())
}

/// Advance every replica by one step of size `dt` (direct sums, self term kept).
pub fn step(ens: &mut ParticleEnsemble, spec: &KernelSpec, dt: f64) -> Result<()> {
    step_with(ens, spec, dt, Interaction::Direct, true)
}

pub fn step_with(ens: &mut ParticleEnsemble, spec: &KernelSpec, dt: f64, interaction: Interaction, include_self: bool) -> Result<()> {
    check_step(ens, spec, dt)?;
    check_interaction(interaction, spec)?;
    let (seed, s, d) = (ens.seed, ens.step_index, ens.dim);
    for (r, chunk) in ens.replica_chunks_mut().enumerate() {
        let noise = replica_noise(seed, r, s, chunk.len());
        advance_replica(chunk, d, spec, dt, &noise, interaction, include_self, r, s)?;
    }
    ens.advance_clock(1, dt);
    Ok(())
}

/// One step with caller-supplied noise for every replica (`[replica][particle][axis]`).
pub fn step_with_noise(
    ens: &mut ParticleEnsemble,
    spec: &KernelSpec,
    dt: f64,
    interaction: Interaction,
    include_self: bool,
    noise: &[f64],
) -> Result<()> {
    check_step(ens, spec, dt)?;
    check_interaction(interaction, spec)?;
    if noise.len() != ens.positions.len() {
        return Err(Error::invalid("noise array has the wrong length"));
    }
    let (s, d, w) = (ens.step_index, ens.dim, ens.n_particles * ens.dim);
    for (r, chunk) in ens.replica_chunks_mut().enumerate() {
        advance_replica(chunk, d, spec, dt, &noise[r * w..(r + 1) * w], interaction, include_self, r, s)?;
    }
    ens.advance_clock(1, dt);
    Ok(())
}

/// Step indices (counted from the ensemble's current step) of the checkpoints.
pub fn checkpoint_steps(cfg: &SimConfig, checkpoints: &[f64]) -> Result<Vec<u64>> {
    let total = cfg.steps();
    let mut out = Vec::with_capacity(checkpoints.len().max(1));
    let mut last: Option<f64> = None;
    for &t in checkpoints {
        if last.is_some_and(|p| t < p) {
            return Err(Error::Config("checkpoint times must be sorted".into()));
        }
        last = Some(t);
        if !(0.0..=cfg.t_end * (1.0 + 1e-12)).contains(&t) {
            return Err(Error::Config(format!("checkpoint {t} outside [0, {}]", cfg.t_end)));
        }
        let k = as_multiple(t, cfg.dt, 1e-6)
            .ok_or_else(|| Error::Config(format!("checkpoint {t} is not a multiple of dt = {}", cfg.dt)))?;
        out.push(k.min(total));
    }
    if out.is_empty() {
        out.push(total);
    }
    Ok(out)
}

/// Run one replica through `steps` steps starting at absolute step `start`,
/// returning its positions at each requested (relative) checkpoint step.
#[allow(clippy::too_many_arguments)]
pub fn run_replica(
    pos: &mut [f64],
    dim: usize,
    spec: &KernelSpec,
    cfg: &SimConfig,
    replica: usize,
    start: u64,
    checkpoint_steps: &[u64],
) -> Result<Vec<Vec<f64>>> {
    let total = checkpoint_steps.iter().copied().max().unwrap_or(0).max(cfg.steps());
    let mut out = Vec::with_capacity(checkpoint_steps.len());
    let mut next = 0;
    for s in 0..=total {
        while next < checkpoint_steps.len() && checkpoint_steps[next] == s {
            out.push(pos.to_vec());
            next += 1;
        }
        if s == total {
            break;
        }
        let noise = replica_noise(cfg.seed, replica, start + s, pos.len());
        advance_replica(pos, dim, spec, cfg.dt, &noise, cfg.interaction, cfg.include_self, replica, start + s)?;
    }
    Ok(out)
}

/// Run the ensemble to `cfg.t_end`, returning a snapshot at each checkpoint
/// (or just the final state when `checkpoints` is empty).
pub fn run(ens: &mut ParticleEnsemble, spec: &KernelSpec, cfg: &SimConfig, checkpoints: &[f64]) -> Result<Vec<ParticleEnsemble>> {
    cfg.validate(spec)?;
    check_step(ens, spec, cfg.dt)?;
    ens.seed = cfg.seed;
    let cps = checkpoint_steps(cfg, checkpoints)?;
    let start = ens.step_index;
    let d = ens.dim;
    let mut per_replica = Vec::with_capacity(ens.replicas);
    for (r, chunk) in ens.replica_chunks_mut().enumerate() {
        per_replica.push(run_replica(chunk, d, spec, cfg, r, start, &cps)?);
    }
    ens.advance_clock(cfg.steps(), cfg.dt);
    Ok(assemble_snapshots(ens, &cps, cfg.dt, start, per_replica))
}

/// Gather per-replica checkpoint positions into ensemble snapshots.
pub fn assemble_snapshots(
    template: &ParticleEnsemble,
    cps: &[u64],
    dt: f64,
    start: u64,
    per_replica: Vec<Vec<Vec<f64>>>,
) -> Vec<ParticleEnsemble> {
    cps.iter()
        .enumerate()
        .map(|(c, &s)| {
            let mut positions = Vec::with_capacity(template.positions.len());
            for rep in &per_replica {
                positions.extend_from_slice(&rep[c]);
            }
            ParticleEnsemble {
                positions,
                time: (start + s) as f64 * dt,
                step_index: start + s,
                ..template.clone()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{builtin_diffusion, builtin_drift, builtin_kernel};
    use crate::math::{cos, exp, PI, TAU};

    fn model(drift: (&str, &[f64]), diff: (&str, &[f64]), d: usize) -> KernelSpec {
        KernelSpec::new(builtin_drift(drift.0, d, drift.1).unwrap(), builtin_diffusion(diff.0, d, diff.1).unwrap()).unwrap()
    }

    #[test]
    fn single_particle_pure_noise() {
        let spec = model(("zero_drift", &[]), ("constant_sigma", &[0.7]), 1);
        let mut ens = ParticleEnsemble::from_positions(1, 1, 1, vec![0.2], 0).unwrap();
        step_with_noise(&mut ens, &spec, 0.01, Interaction::Direct, true, &[0.5]).unwrap();
        let expect = wrap_coord(0.2 + SQRT_2 * 0.7 * 0.5 * 0.1);
        assert!((ens.positions()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn antipodal_pair_is_stationary_without_noise() {
        let spec = model(("trig_drift", &[1.0, 1.0]), ("constant_sigma", &[1.0]), 1);
        let mut ens = ParticleEnsemble::from_positions(2, 1, 1, vec![0.25, 0.75], 0).unwrap();
        step_with_noise(&mut ens, &spec, 0.1, Interaction::Direct, true, &[0.0, 0.0]).unwrap();
        assert!((ens.positions()[0] - 0.25).abs() < 1e-15);
        assert!((ens.positions()[1] - 0.75).abs() < 1e-15);
        assert!(step(&mut ens, &spec, 0.0).is_err());
    }

    #[test]
    fn interaction_modes_agree() {
        let spec = model(("trig_drift", &[0.3, 2.0, 0.2]), ("trig_sigma", &[1.0, 0.2, 1.0]), 2);
        let init = DensityGrid::uniform(2, 8).unwrap();
        let ens = sample_initial(&init, 40, 1, 9).unwrap();
        let p = ens.replica(0);
        let mut out = [vec![0.0; 80], vec![0.0; 80], vec![0.0; 80], vec![0.0; 80], vec![0.0; 80], vec![0.0; 80]];
        let [d0, s0, d1, s1, d2, s2] = &mut out;
        interaction_sums(p, 2, &spec, Interaction::Direct, true, d0, s0);
        interaction_sums(p, 2, &spec, Interaction::Pairwise, true, d1, s1);
        interaction_sums(p, 2, &spec, Interaction::CellList { cutoff: 0.5 }, true, d2, s2);
        for j in 0..80 {
            assert!((d0[j] - d1[j]).abs() < 1e-13 && (d0[j] - d2[j]).abs() < 1e-13);
            assert!((s0[j] - s1[j]).abs() < 1e-13 && (s0[j] - s2[j]).abs() < 1e-13);
        }
        let cfg = SimConfig { interaction: Interaction::CellList { cutoff: 0.2 }, ..SimConfig::new(0.01, 0.1, 0) };
        assert!(matches!(cfg.validate(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn excluding_self_removes_origin_term() {
        let spec = model(("zero_drift", &[]), ("constant_sigma", &[2.0]), 1);
        let pos = [0.1, 0.4, 0.8, 0.3];
        let mut d = [0.0; 4];
        let mut s = [0.0; 4];
        interaction_sums(&pos, 1, &spec, Interaction::Direct, false, &mut d, &mut s);
        for v in s {
            assert!((v - SQRT_2 * 2.0 * 3.0 / 4.0).abs() < 1e-14);
        }
    }

    #[test]
    fn run_checkpoints() {
        let spec = builtin_kernel("constant_sigma", 1, &[1.0]).unwrap();
        let init = DensityGrid::uniform(1, 16).unwrap();
        let mut ens = sample_initial(&init, 4, 2, 1).unwrap();
        let cfg = SimConfig::new(0.01, 0.03, 5);
        let snaps = run(&mut ens, &spec, &cfg, &[0.01, 0.02, 0.03]).unwrap();
        let times: Vec<f64> = snaps.iter().map(|s| s.time()).collect();
        assert!((times[0] - 0.01).abs() < 1e-15 && (times[2] - 0.03).abs() < 1e-15);
        assert_eq!(snaps[2].positions(), ens.positions());
        let mut again = sample_initial(&init, 4, 2, 1).unwrap();
        let snaps2 = run(&mut again, &spec, &cfg, &[0.01, 0.02, 0.03]).unwrap();
        assert_eq!(snaps, snaps2);
        assert!(run(&mut again, &spec, &cfg, &[0.015]).is_err());
        assert!(run(&mut again, &spec, &cfg, &[0.02, 0.01]).is_err());
    }

    #[test]
    fn heat_kernel_characteristic_function() {
        // independent particles: E cos 2π(X_t − X_0) = exp(−4π² c² t)
        let c = 0.8;
        let spec = builtin_kernel("constant_sigma", 1, &[c]).unwrap();
        let init = DensityGrid::uniform(1, 16).unwrap();
        let mut ens = sample_initial(&init, 50, 200, 2).unwrap();
        let x0 = ens.positions().to_vec();
        let cfg = SimConfig::new(0.002, 0.02, 4);
        run(&mut ens, &spec, &cfg, &[]).unwrap();
        let n = x0.len() as f64;
        let m: f64 = x0.iter().zip(ens.positions()).map(|(a, b)| cos(TAU * (b - a))).sum::<f64>() / n;
        let expect = exp(-4.0 * PI * PI * c * c * 0.02);
        assert!((m - expect).abs() < 4.0 / n.sqrt(), "{m} vs {expect}");
    }
}
