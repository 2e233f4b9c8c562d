//! Propagation-of-chaos diagnostics: binned marginals of particle snapshots,
//! plug-in relative entropy and L¹ distance against the mean-field limit, the
//! theoretical entropy envelope, and the N-sweep.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::DensityGrid;
use crate::kernels::KernelSpec;
use crate::math::{exp, floor, ln, powf, sqrt, E};
use crate::particles::ParticleEnsemble;
use crate::rng::{stream, Domain};
use crate::stats::{linear_fit, mean_std};

/// Normalised periodic histogram of the k-particle marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalEstimate {
    pub order: usize,
    pub dim: usize,
    /// Bins per axis.
    pub bins: usize,
    /// `bins^{dk}` counts, row-major.
    pub counts: Vec<u64>,
    pub n_samples: u64,
}

impl MarginalEstimate {
    pub fn probs(&self) -> Vec<f64> {
        let s = self.n_samples.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / s).collect()
    }

    fn from_counts(order: usize, dim: usize, bins: usize, counts: Vec<u64>) -> Self {
        let n_samples = counts.iter().sum();
        MarginalEstimate {
            order,
            dim,
            bins,
            counts,
            n_samples,
        }
    }
}

/// Sampling controls shared by marginal estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSampling {
    /// Upper bound on the total number of ordered pairs used for `k = 2`.
    pub cap: usize,
    pub seed: u64,
}

impl Default for PairSampling {
    fn default() -> Self {
        PairSampling { cap: 2_000_000, seed: 0 }
    }
}

#[inline]
fn cell(p: &[f64], bins: usize) -> usize {
    p.iter().fold(0usize, |acc, &x| {
        let b = ((x * bins as f64) as usize).min(bins - 1);
        acc * bins + b
    })
}

/// Shifts `s` defining the ordered pairs `(i, (i+s) mod N)` used for one replica.
fn pair_shifts(n: usize, per_replica: usize, seed: u64, replica: usize) -> Vec<usize> {
    let all: Vec<usize> = (1..n).collect();
    if per_replica >= all.len() {
        return all;
    }
    let mut pool = all;
    let mut rng = stream(seed, Domain::PairShift, replica as u64, n as u64);
    let len = pool.len();
    for i in 0..per_replica {
        let j = i + (crate::rng::uniform(&mut rng) * (len - i) as f64) as usize;
        pool.swap(i, j.min(len - 1));
    }
    pool.truncate(per_replica);
    pool.sort_unstable();
    pool
}

/// Number of pooled samples the estimator will use.
pub fn sample_count(n: usize, replicas: usize, k: usize, pairs: &PairSampling) -> usize {
    match k {
        1 => n * replicas,
        _ => n * replicas * shifts_per_replica(n, replicas, pairs),
    }
}

fn shifts_per_replica(n: usize, replicas: usize, pairs: &PairSampling) -> usize {
    let per = pairs.cap.div_ceil((n * replicas).max(1)).max(1);
    per.min(n.saturating_sub(1))
}

/// Per-replica histograms of the k-marginal (`k = 1` pools all particles;
/// `k = 2` pools ordered pairs `i ≠ j` along cyclic shifts, so both
/// coordinates of the pair sample stay exactly balanced).
pub fn replica_histograms(snap: &ParticleEnsemble, k: usize, bins: usize, pairs: &PairSampling) -> Result<Vec<Vec<u64>>> {
    if !(k == 1 || k == 2) {
        return Err(Error::invalid(format!("marginal order must be 1 or 2, got {k}")));
    }
    if bins == 0 {
        return Err(Error::invalid("bins must be positive"));
    }
    let (n, d, m) = (snap.n_particles(), snap.dim(), snap.replicas());
    if k == 2 && n < 2 {
        return Err(Error::invalid("pair marginal needs N >= 2"));
    }
    let cells = bins.pow((d * k) as u32);
    let needed = 10 * cells;
    let available = sample_count(n, m, k, pairs);
    if available < needed {
        return Err(Error::Undersampled { needed, available });
    }
    let single = bins.pow(d as u32);
    let per = shifts_per_replica(n, m, pairs);
    let mut out = Vec::with_capacity(m);
    for r in 0..m {
        let pos = snap.replica(r);
        let ids: Vec<usize> = pos.chunks_exact(d).map(|p| cell(p, bins)).collect();
        let mut h = vec![0u64; cells];
        if k == 1 {
            for &c in &ids {
                h[c] += 1;
            }
        } else {
            for s in pair_shifts(n, per, pairs.seed, r) {
                for i in 0..n {
                    h[ids[i] * single + ids[(i + s) % n]] += 1;
                }
            }
        }
        out.push(h);
    }
    Ok(out)
}

/// Pooled k-marginal histogram of a snapshot.
pub fn estimate_marginal(snap: &ParticleEnsemble, k: usize, bins: usize, pairs: &PairSampling) -> Result<MarginalEstimate> {
    let hists = replica_histograms(snap, k, bins, pairs)?;
    let mut counts = vec![0u64; hists[0].len()];
    for h in &hists {
        for (c, v) in counts.iter_mut().zip(h) {
            *c += v;
        }
    }
    Ok(MarginalEstimate::from_counts(k, snap.dim(), bins, counts))
}

/// Cell masses of `ρ̄^{⊗k}` on the `bins^{dk}` grid.
pub fn limit_masses(limit: &DensityGrid, bins: usize, k: usize) -> Result<Vec<f64>> {
    let q1 = limit.cell_masses(bins)?;
    if let Some(bad) = q1.iter().find(|&&q| !(q > 0.0)) {
        return Err(Error::Domain(format!("limit density has a cell of mass {bad}; log ratio undefined")));
    }
    Ok(match k {
        1 => q1,
        2 => q1.iter().flat_map(|a| q1.iter().map(move |b| a * b)).collect(),
        _ => return Err(Error::invalid("order must be 1 or 2")),
    })
}

/// `(1/k) Σ p log(p/q)` with `0 log 0 = 0`.
pub fn kl_binned(p: &[f64], q: &[f64], k: usize) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * ln(p / q))
        .sum::<f64>()
        / k as f64
}

pub fn l1_binned(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

fn check_marginal(marg: &MarginalEstimate, limit: &DensityGrid, k: usize) -> Result<()> {
    if marg.order != k || marg.dim != limit.dim() {
        return Err(Error::invalid("marginal order/dimension does not match"));
    }
    if marg.n_samples == 0 {
        return Err(Error::invalid("empty marginal"));
    }
    Ok(())
}

/// Rescaled plug-in relative entropy `H_k = (1/k) KL(p̂ | ρ̄^{⊗k})` on cells.
pub fn relative_entropy(marg: &MarginalEstimate, limit: &DensityGrid, k: usize) -> Result<f64> {
    check_marginal(marg, limit, k)?;
    Ok(kl_binned(&marg.probs(), &limit_masses(limit, marg.bins, k)?, k))
}

/// `Σ_cells |p̂ − q|`.
pub fn l1_distance(marg: &MarginalEstimate, limit: &DensityGrid, k: usize) -> Result<f64> {
    check_marginal(marg, limit, k)?;
    Ok(l1_binned(&marg.probs(), &limit_masses(limit, marg.bins, k)?))
}

/// Leading-order bias `(cells − 1)/(2 n)` of the plug-in KL under i.i.d. sampling, rescaled by `1/k`.
pub fn plugin_bias(cells: usize, n_samples: usize, k: usize) -> f64 {
    (cells as f64 - 1.0) / (2.0 * n_samples as f64) / k as f64
}

/// `n^{1/(d+2)}` bins per axis, at least 2 and at most `cap`.
pub fn default_bins(n_samples: usize, dim: usize, cap: usize) -> usize {
    let b = floor(powf(n_samples as f64, 1.0 / (dim as f64 + 2.0))) as usize;
    b.clamp(2, cap.max(2))
}

/// Ingredients of the constant `M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeInputs {
    /// `sup_s ‖∇ρ̄(s)‖_∞ / inf ρ̄(s)`
    pub grad_ratio: f64,
    /// `sup_s ‖∇²ρ̄(s)‖_∞ / inf ρ̄(s)`
    pub hess_ratio: f64,
    /// `inf_s inf_x ρ̄(s, x)`
    pub inf_rho: f64,
}

/// `M = (‖K‖ + ‖g‖)·G + (d/σ̲²)‖g‖² + 12e²(8d s² + 8d s² G + 2d s² H)`
/// with `G`, `H` the gradient and Hessian ratios and `s = ‖σ‖_{W^{2,∞}}`.
pub fn chaos_constant(spec: &KernelSpec, grad_ratio: f64, hess_ratio: f64) -> f64 {
    let nd = spec.norms();
    let d = spec.dim() as f64;
    let s2 = nd.sigma_w2inf * nd.sigma_w2inf;
    let floor = spec.sigma_floor();
    (nd.drift_sup + nd.potential_sup) * grad_ratio
        + d / (floor * floor) * nd.potential_sup * nd.potential_sup
        + 12.0 * E * E * (8.0 * d * s2 + 8.0 * d * s2 * grad_ratio + 2.0 * d * s2 * hess_ratio)
}

/// Sup over the stored grids with `time ≤ t` of the ρ̄-dependent ratios.
pub fn envelope_inputs(traj: &[DensityGrid], t: f64) -> Result<EnvelopeInputs> {
    let mut out = EnvelopeInputs {
        grad_ratio: 0.0,
        hess_ratio: 0.0,
        inf_rho: f64::INFINITY,
    };
    let mut any = false;
    for g in traj.iter().filter(|g| g.time() <= t + 1e-9 * t.max(1.0)) {
        let s = g.sup_norms(4);
        if !(s.inf > 0.0) {
            return Err(Error::Domain(format!("limit density reaches {} at t = {}", s.inf, g.time())));
        }
        out.grad_ratio = out.grad_ratio.max(s.grad / s.inf);
        out.hess_ratio = out.hess_ratio.max(s.hess / s.inf);
        out.inf_rho = out.inf_rho.min(s.inf);
        any = true;
    }
    if !any {
        return Err(Error::invalid(format!("trajectory has no grid at or before t = {t}")));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub m: f64,
    pub value: f64,
}

/// `e^{C·M·t}(H_N(0) + 1/N)`.
pub fn theoretical_envelope(
    spec: &KernelSpec,
    limit_traj: &[DensityGrid],
    t: f64,
    n_particles: usize,
    universal_c: f64,
    h0: f64,
) -> Result<Envelope> {
    if !(universal_c > 0.0) {
        return Err(Error::invalid("universal constant must be positive"));
    }
    if n_particles == 0 {
        return Err(Error::invalid("N must be positive"));
    }
    let inp = envelope_inputs(limit_traj, t)?;
    let m = chaos_constant(spec, inp.grad_ratio, inp.hess_ratio);
    Ok(Envelope {
        m,
        value: exp(universal_c * m * t) * (h0 + 1.0 / n_particles as f64),
    })
}

/// Smallest `C ≥ 0` with `e^{CMt}(h0 + 1/N) ≥ h`; infinite when `t = 0` and
/// the bound already fails.
pub fn minimal_constant(h: f64, m: f64, t: f64, n_particles: usize, h0: f64) -> f64 {
    let base = h0 + 1.0 / n_particles as f64;
    if h <= base {
        return 0.0;
    }
    if t <= 0.0 || m <= 0.0 {
        return f64::INFINITY;
    }
    ln(h / base) / (m * t)
}

/// Bootstrap spreads `[σ(H_1), σ(H_2), σ(L1_1), σ(L1_2)]` over replicas.
pub fn bootstrap_sigmas(
    h1: &[Vec<u64>],
    h2: &[Vec<u64>],
    q1: &[f64],
    q2: &[f64],
    resamples: usize,
    seed: u64,
    key: u64,
) -> [f64; 4] {
    let m = h1.len();
    let mut samples: [Vec<f64>; 4] = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    let mut rng = stream(seed, Domain::Bootstrap, key, 0);
    let mut acc1 = vec![0u64; q1.len()];
    let mut acc2 = vec![0u64; q2.len()];
    for _ in 0..resamples {
        acc1.iter_mut().for_each(|v| *v = 0);
        acc2.iter_mut().for_each(|v| *v = 0);
        for _ in 0..m {
            let r = ((crate::rng::uniform(&mut rng) * m as f64) as usize).min(m - 1);
            for (a, v) in acc1.iter_mut().zip(&h1[r]) {
                *a += v;
            }
            for (a, v) in acc2.iter_mut().zip(&h2[r]) {
                *a += v;
            }
        }
        let norm = |acc: &[u64]| {
            let s = acc.iter().sum::<u64>().max(1) as f64;
            acc.iter().map(|&c| c as f64 / s).collect::<Vec<f64>>()
        };
        let p1 = norm(&acc1);
        let p2 = norm(&acc2);
        samples[0].push(kl_binned(&p1, q1, 1));
        samples[1].push(kl_binned(&p2, q2, 2));
        samples[2].push(l1_binned(&p1, q1));
        samples[3].push(l1_binned(&p2, q2));
    }
    let sd = |v: &[f64]| if v.len() > 1 { mean_std(v).1 } else { 0.0 };
    [sd(&samples[0]), sd(&samples[1]), sd(&samples[2]), sd(&samples[3])]
}

/// One `(N, t)` row of the chaos report.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosRow {
    pub n: usize,
    pub t: f64,
    pub h1: f64,
    pub h2: f64,
    pub l1_1: f64,
    pub l1_2: f64,
    pub ckp_1: f64,
    pub ckp_2: f64,
    pub envelope: f64,
    pub m: f64,
    /// Slope of `log H_1` against `log N` at this `t` (filled at assembly).
    pub slope: f64,
    pub sigma_h1: f64,
    pub sigma_h2: f64,
    pub sigma_l1_1: f64,
    pub sigma_l1_2: f64,
    /// `(cells − 1)/(2 n)` for the k = 1 estimator.
    pub bias_1: f64,
    /// Smallest universal constant for which the envelope covers `h1`.
    pub min_c: f64,
    pub status: String,
}

impl ChaosRow {
    /// A placeholder row carrying a failure message.
    pub fn failed(n: usize, t: f64, msg: String) -> Self {
        let nan = f64::NAN;
        ChaosRow {
            n,
            t,
            h1: nan,
            h2: nan,
            l1_1: nan,
            l1_2: nan,
            ckp_1: nan,
            ckp_2: nan,
            envelope: nan,
            m: nan,
            slope: nan,
            sigma_h1: nan,
            sigma_h2: nan,
            sigma_l1_1: nan,
            sigma_l1_2: nan,
            bias_1: nan,
            min_c: nan,
            status: msg,
        }
    }

    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    /// `l1_1 ≤ √(2 h1) + 3σ`, with σ the larger of the two bootstrap spreads.
    pub fn ckp_holds(&self) -> bool {
        self.l1_1 <= self.ckp_1 + 3.0 * self.sigma_l1_1.max(self.sigma_h1)
    }
}

/// Controls for the marginal metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsConfig {
    pub bins: usize,
    pub bootstrap: usize,
    pub pairs: PairSampling,
    pub universal_c: f64,
    /// `H_N(0)`; zero for i.i.d. initialisation from the limit.
    pub h0: f64,
}

/// Metrics for one snapshot against the limit trajectory.
pub fn chaos_row(
    snap: &ParticleEnsemble,
    spec: &KernelSpec,
    limit_traj: &[DensityGrid],
    metrics: &MetricsConfig,
) -> Result<ChaosRow> {
    let t = snap.time();
    let limit = limit_traj
        .iter()
        .find(|g| (g.time() - t).abs() <= 1e-9 * t.max(1.0))
        .ok_or_else(|| Error::invalid(format!("no limit density stored at t = {t}")))?;
    let n = snap.n_particles();
    let bins = metrics.bins;
    let h1s = replica_histograms(snap, 1, bins, &metrics.pairs)?;
    let h2s = replica_histograms(snap, 2, bins, &metrics.pairs)?;
    let pool = |hs: &[Vec<u64>], k: usize| {
        let mut c = vec![0u64; hs[0].len()];
        for h in hs {
            for (a, v) in c.iter_mut().zip(h) {
                *a += v;
            }
        }
        MarginalEstimate::from_counts(k, snap.dim(), bins, c)
    };
    let m1 = pool(&h1s, 1);
    let m2 = pool(&h2s, 2);
    let q1 = limit_masses(limit, bins, 1)?;
    let q2 = limit_masses(limit, bins, 2)?;
    let (p1, p2) = (m1.probs(), m2.probs());
    let h1 = kl_binned(&p1, &q1, 1);
    let h2 = kl_binned(&p2, &q2, 2);
    let env = theoretical_envelope(spec, limit_traj, t, n, metrics.universal_c, metrics.h0)?;
    let key = ((n as u64) << 32) ^ snap.step_index();
    let sig = bootstrap_sigmas(&h1s, &h2s, &q1, &q2, metrics.bootstrap, metrics.pairs.seed, key);
    Ok(ChaosRow {
        n,
        t,
        h1,
        h2,
        l1_1: l1_binned(&p1, &q1),
        l1_2: l1_binned(&p2, &q2),
        ckp_1: sqrt(2.0 * h1.max(0.0)),
        ckp_2: sqrt(4.0 * h2.max(0.0)),
        envelope: env.value,
        m: env.m,
        slope: f64::NAN,
        sigma_h1: sig[0],
        sigma_h2: sig[1],
        sigma_l1_1: sig[2],
        sigma_l1_2: sig[3],
        bias_1: plugin_bias(q1.len(), m1.n_samples as usize, 1),
        min_c: minimal_constant(h1, env.m, t, n, metrics.h0),
        status: "ok".to_string(),
    })
}

/// All rows of a sweep with the per-time slope fits.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosReport {
    pub rows: Vec<ChaosRow>,
    pub bins: usize,
    /// Slope of `log H_1` vs `log N` at the final time.
    pub slope: f64,
    /// Largest minimal universal constant over all rows.
    pub min_c: f64,
}

impl ChaosReport {
    /// Rows sorted by `(t, N)` with slopes filled in.
    pub fn assemble(mut rows: Vec<ChaosRow>, bins: usize) -> Self {
        rows.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.n.cmp(&b.n)));
        let mut times: Vec<f64> = rows.iter().map(|r| r.t).collect();
        times.dedup();
        let mut final_slope = f64::NAN;
        for &t in &times {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.t == t && r.ok() && r.h1 > 0.0)
                .map(|r| (ln(r.n as f64), ln(r.h1)))
                .collect();
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let slope = linear_fit(&xs, &ys).map_or(f64::NAN, |f| f.1);
            for r in rows.iter_mut().filter(|r| r.t == t) {
                r.slope = slope;
            }
            final_slope = slope;
        }
        let min_c = rows.iter().filter(|r| r.ok()).map(|r| r.min_c).fold(0.0, f64::max);
        ChaosReport {
            rows,
            bins,
            slope: final_slope,
            min_c,
        }
    }

    /// Rows at the last time, ascending in N.
    pub fn final_rows(&self) -> Vec<&ChaosRow> {
        let t = self.rows.iter().map(|r| r.t).fold(f64::NEG_INFINITY, f64::max);
        self.rows.iter().filter(|r| r.t == t).collect()
    }
}

/// Sweep inputs beyond the kernel and the limit trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub n_list: Vec<usize>,
    pub replicas: usize,
    pub checkpoints: Vec<f64>,
    pub sim: crate::particles::SimConfig,
    /// Bins per axis; `0` selects `n^{1/(d+2)}` from the smallest N, capped at the PDE grid.
    pub bins: usize,
    pub bootstrap: usize,
    pub pair_cap: usize,
    pub universal_c: f64,
    /// Amplitude `ε` of the initial perturbation `ρ̄₀ + ε cos(2πx₁)`.
    pub initial_perturbation: f64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_list.len() < 2 {
            return Err(Error::Config("chaos sweep needs at least two N values".into()));
        }
        if self.n_list.windows(2).any(|w| w[1] <= w[0]) || self.n_list[0] < 2 {
            return Err(Error::Config("N_list must be strictly increasing with N >= 2".into()));
        }
        if self.replicas < 2 {
            return Err(Error::Config("need at least two replicas for the bootstrap".into()));
        }
        Ok(())
    }

    /// Bin count used for every row.
    pub fn resolve_bins(&self, dim: usize, pde_n: usize) -> usize {
        if self.bins > 0 {
            self.bins
        } else {
            default_bins(self.n_list[0] * self.replicas, dim, pde_n)
        }
    }

    pub fn metrics(&self, bins: usize, h0: f64) -> MetricsConfig {
        MetricsConfig {
            bins,
            bootstrap: self.bootstrap,
            pairs: PairSampling {
                cap: self.pair_cap,
                seed: self.sim.seed,
            },
            universal_c: self.universal_c,
            h0,
        }
    }
}

/// Initial law of the particles and its relative entropy to the limit's initial datum.
pub fn initial_law(rho0: &DensityGrid, eps: f64) -> Result<(DensityGrid, f64)> {
    if eps == 0.0 {
        return Ok((rho0.clone(), 0.0));
    }
    if eps.abs() >= rho0.min() {
        return Err(Error::Config(format!(
            "initial perturbation {eps} must be smaller than inf rho0 = {}",
            rho0.min()
        )));
    }
    let pert = DensityGrid::from_fn(rho0.dim(), rho0.n(), 0.0, |x| libm::cos(crate::math::TAU * x[0]))?;
    let vals: Vec<f64> = rho0.values().iter().zip(pert.values()).map(|(r, p)| r + eps * p).collect();
    let law = DensityGrid::new(rho0.dim(), rho0.n(), vals, 0.0)?;
    let h0 = law
        .values()
        .iter()
        .zip(rho0.values())
        .map(|(a, b)| a * ln(a / b))
        .sum::<f64>()
        * law.cell_volume();
    Ok((law, h0))
}

/// Seed of the N-th row family, derived from the sweep seed.
pub fn sweep_seed(seed: u64, n: usize) -> u64 {
    seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Rows for one N: sample, run to every checkpoint, measure.
pub fn sweep_rows_for_n(
    n: usize,
    spec: &KernelSpec,
    law: &DensityGrid,
    limit_traj: &[DensityGrid],
    cfg: &SweepConfig,
    metrics: &MetricsConfig,
) -> Vec<ChaosRow> {
    let attempt = || -> Result<Vec<ChaosRow>> {
        let seed = sweep_seed(cfg.sim.seed, n);
        let mut ens = crate::particles::sample_initial(law, n, cfg.replicas, seed)?;
        let sim = crate::particles::SimConfig { seed, ..cfg.sim.clone() };
        let snaps = crate::particles::run(&mut ens, spec, &sim, &cfg.checkpoints)?;
        snaps.iter().map(|s| chaos_row(s, spec, limit_traj, metrics)).collect()
    };
    attempt().unwrap_or_else(|e| {
        let msg = format!("failed: {e}");
        cfg.checkpoints.iter().map(|&t| ChaosRow::failed(n, t, msg.clone())).collect()
    })
}

/// Sequential N-sweep.
pub fn chaos_sweep(spec: &KernelSpec, rho0: &DensityGrid, limit_traj: &[DensityGrid], cfg: &SweepConfig) -> Result<ChaosReport> {
    cfg.validate()?;
    cfg.sim.validate(spec)?;
    let bins = cfg.resolve_bins(spec.dim(), rho0.n());
    let (law, h0) = initial_law(rho0, cfg.initial_perturbation)?;
    let metrics = cfg.metrics(bins, h0);
    let rows = cfg
        .n_list
        .iter()
        .flat_map(|&n| sweep_rows_for_n(n, spec, &law, limit_traj, cfg, &metrics))
        .collect();
    Ok(ChaosReport::assemble(rows, bins))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::builtin_kernel;

    fn ensemble(points: Vec<f64>, n: usize, m: usize) -> ParticleEnsemble {
        ParticleEnsemble::from_positions(n, 1, m, points, 0).unwrap()
    }

    #[test]
    fn point_mass_histogram() {
        let ens = ensemble(vec![0.3; 200], 100, 2);
        let m = estimate_marginal(&ens, 1, 16, &PairSampling::default()).unwrap();
        let p = m.probs();
        assert_eq!(p[4], 1.0);
        assert_eq!(p.iter().sum::<f64>(), 1.0);
        let uni = DensityGrid::uniform(1, 64).unwrap();
        assert!((relative_entropy(&m, &uni, 1).unwrap() - ln(16.0)).abs() < 1e-12);
        assert!((l1_distance(&m, &uni, 1).unwrap() - 1.875).abs() < 1e-12);
        assert!(matches!(
            estimate_marginal(&ensemble(vec![0.3; 20], 10, 2), 1, 16, &PairSampling::default()),
            Err(Error::Undersampled { needed: 160, available: 20 })
        ));
    }

    #[test]
    fn uniform_samples_concentrate() {
        let mut rng = stream(11, Domain::Probe, 0, 0);
        let pts: Vec<f64> = (0..100_000).map(|_| crate::rng::uniform(&mut rng)).collect();
        let ens = ensemble(pts, 1000, 100);
        let m = estimate_marginal(&ens, 1, 16, &PairSampling::default()).unwrap();
        let dev = m.probs().iter().map(|p| (p - 1.0 / 16.0).abs()).fold(0.0, f64::max);
        assert!(dev < 5.0 * sqrt(16.0 / 1e5) / 16.0 * 4.0, "{dev}");
        let uni = DensityGrid::uniform(1, 64).unwrap();
        let h = relative_entropy(&m, &uni, 1).unwrap();
        assert!(h < 3.0 * 15.0 / 2e5 + 1e-4, "{h}");
        let p2 = estimate_marginal(&ens, 2, 8, &PairSampling::default()).unwrap();
        assert!(relative_entropy(&p2, &uni, 2).unwrap() >= 0.0);
    }

    #[test]
    fn pair_marginal_has_exact_product_marginals() {
        let mut rng = stream(12, Domain::Probe, 0, 0);
        let pts: Vec<f64> = (0..6400).map(|_| crate::rng::uniform(&mut rng)).collect();
        let ens = ensemble(pts, 64, 100);
        let m1 = estimate_marginal(&ens, 1, 4, &PairSampling::default()).unwrap();
        let m2 = estimate_marginal(&ens, 2, 4, &PairSampling { cap: 30_000, seed: 3 }).unwrap();
        let p1 = m1.probs();
        let p2 = m2.probs();
        for a in 0..4 {
            let row: f64 = (0..4).map(|b| p2[a * 4 + b]).sum();
            let col: f64 = (0..4).map(|b| p2[b * 4 + a]).sum();
            assert!((row - p1[a]).abs() < 1e-12 && (col - p1[a]).abs() < 1e-12);
        }
        let gap: f64 = (0..16).map(|c| (p2[c] - p1[c / 4] * p1[c % 4]).powi(2)).sum::<f64>();
        assert!(sqrt(gap) < 0.02);
    }

    #[test]
    fn envelope_examples() {
        let spec = builtin_kernel("constant_sigma", 1, &[1.0]).unwrap();
        let uni = DensityGrid::uniform(1, 32).unwrap();
        let env = theoretical_envelope(&spec, &[uni.clone()], 0.0, 10, 1.0, 0.0).unwrap();
        assert!((env.m - 96.0 * E * E).abs() < 1e-9);
        assert!((env.m - 709.3).abs() < 0.1);
        assert_eq!(env.value, 0.1);
        let later = uni.with_time(0.1);
        let big = theoretical_envelope(&spec, &[later], 0.1, 1 << 40, 1.0, 0.0).unwrap();
        assert!(big.value < 1e-10 * exp(70.93));
        assert_eq!(minimal_constant(0.01, 709.3, 0.1, 10, 0.0), 0.0);
        let c = minimal_constant(1.0, 10.0, 0.1, 10, 0.0);
        assert!((exp(c * 10.0 * 0.1) / 10.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_needs_two_sizes() {
        let mut cfg = SweepConfig {
            n_list: vec![16],
            replicas: 4,
            checkpoints: vec![],
            sim: crate::particles::SimConfig::new(1e-3, 1e-2, 0),
            bins: 0,
            bootstrap: 10,
            pair_cap: 1000,
            universal_c: 1.0,
            initial_perturbation: 0.0,
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.n_list = vec![16, 32];
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn ckp_holds_for_discrete_kl() {
        let q = [0.1, 0.2, 0.3, 0.4];
        for p in [[0.25; 4], [1.0, 0.0, 0.0, 0.0], [0.1, 0.25, 0.25, 0.4]] {
            assert!(l1_binned(&p, &q) <= sqrt(2.0 * kl_binned(&p, &q, 1)) + 1e-15);
        }
    }
}
