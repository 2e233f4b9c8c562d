//! Fourier-spectral solver for the mean-field equation
//! `∂_t ρ + ∇·((K*ρ)ρ) = Σ_α ∂²_α (ρ (σ_αα*ρ)²)` on `T^d`, `d ∈ {1, 2}`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{wavenumber, Fft};
use crate::grid::DensityGrid;
use crate::kernels::KernelSpec;
use crate::math::{ceil, exp, ln, sqrt, TAU};
use crate::stats::linear_fit;
use crate::torus::as_multiple;

const MASS_DRIFT_LIMIT: f64 = 1e-8;
const RHS_INTEGRAL_LIMIT: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stepper {
    /// Heun's method (explicit RK2), stages at `t` and `t + dt`.
    ExplicitRk2,
    /// First-order IMEX Euler with a frozen Laplacian treated implicitly.
    SemiImplicit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    DirectMarch,
    Picard { max_iters: usize, tol: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeConfig {
    pub dt: f64,
    pub t_end: f64,
    pub stepper: Stepper,
    pub mode: Mode,
    pub dealias: bool,
    pub c_cfl: f64,
    /// Output times besides `0` and `t_end`; each a multiple of `dt`.
    pub checkpoints: Vec<f64>,
    /// Spectral low-pass of the initial data (mollification), off when `None`.
    pub mollify: Option<usize>,
}

impl PdeConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        PdeConfig {
            dt,
            t_end,
            stepper: Stepper::ExplicitRk2,
            mode: Mode::DirectMarch,
            dealias: true,
            c_cfl: 0.2,
            checkpoints: Vec::new(),
            mollify: None,
        }
    }

    /// Largest explicit step allowed for `spec` on `n` nodes per axis.
    pub fn cfl_limit(spec: &KernelSpec, n: usize, c_cfl: f64) -> f64 {
        let s = spec.norms().sigma_w2inf;
        let h = 1.0 / n as f64;
        c_cfl * h * h / (s * s)
    }

    /// Largest step within the CFL limit that divides `t_end` exactly.
    pub fn auto_dt(spec: &KernelSpec, n: usize, t_end: f64, c_cfl: f64) -> f64 {
        let limit = Self::cfl_limit(spec, n, c_cfl);
        t_end / ceil(t_end / limit * (1.0 + 1e-12))
    }

    fn validate(&self, spec: &KernelSpec, n: usize) -> Result<u64> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("t_end must be nonnegative, got {}", self.t_end)));
        }
        if !(self.c_cfl > 0.0) {
            return Err(Error::Config("c_cfl must be positive".into()));
        }
        if self.stepper == Stepper::ExplicitRk2 {
            let limit = Self::cfl_limit(spec, n, self.c_cfl);
            if self.dt > limit * (1.0 + 1e-12) {
                return Err(Error::Config(format!(
                    "dt = {:e} violates the explicit CFL bound {:e} = c_cfl·h²/‖σ‖²_W2∞ (n = {n})",
                    self.dt, limit
                )));
            }
        }
        if let Mode::Picard { max_iters, tol } = self.mode {
            if max_iters < 1 || !(tol > 0.0) {
                return Err(Error::Config("Picard needs max_iters >= 1 and tol > 0".into()));
            }
        }
        as_multiple(self.t_end, self.dt, 1e-6)
            .ok_or_else(|| Error::Config(format!("t_end = {} is not a multiple of dt = {:e}", self.t_end, self.dt)))
    }

    fn checkpoint_steps(&self, total: u64) -> Result<Vec<u64>> {
        let mut steps = vec![0, total];
        for &t in &self.checkpoints {
            let k = as_multiple(t, self.dt, 1e-6)
                .filter(|&k| k <= total)
                .ok_or_else(|| Error::Config(format!("checkpoint {t} is not a multiple of dt within [0, t_end]")))?;
            steps.push(k);
        }
        steps.sort_unstable();
        steps.dedup();
        Ok(steps)
    }
}

/// Spectral operators for one kernel pair on one grid.
#[derive(Debug, Clone)]
pub struct MeanFieldOperator {
    dim: usize,
    n: usize,
    fft: Fft,
    drift_hat: Vec<Vec<Complex64>>,
    sigma_hat: Vec<Vec<Complex64>>,
    /// `2π k_α` per bin and axis (zero at Nyquist for odd derivatives).
    ik: Vec<Vec<f64>>,
    /// `(2π k_α)²` per bin and axis.
    k2: Vec<Vec<f64>>,
    mask: Vec<f64>,
}

impl MeanFieldOperator {
    pub fn new(spec: &KernelSpec, n: usize, dealias: bool) -> Result<Self> {
        let dim = spec.dim();
        if !(dim == 1 || dim == 2) {
            return Err(Error::invalid(format!("mean-field solves support d = 1 or 2, got {dim}")));
        }
        let fft = Fft::new(n)?;
        let sample_hat = |f: &dyn Fn(&[f64]) -> f64| -> Result<Vec<Complex64>> {
            let g = DensityGrid::from_fn(dim, n, 0.0, f)?;
            Ok(g.spectrum())
        };
        let mut drift_hat = Vec::new();
        let mut sigma_hat = Vec::new();
        for a in 0..dim {
            drift_hat.push(sample_hat(&|x| spec.drift()[a].eval(x))?);
            sigma_hat.push(sample_hat(&|x| spec.diffusion()[a].eval(x))?);
        }
        let total = n.pow(dim as u32);
        let mut ik = vec![vec![0.0; total]; dim];
        let mut k2 = vec![vec![0.0; total]; dim];
        let mut mask = vec![1.0; total];
        for flat in 0..total {
            let idx = if dim == 1 { [flat, 0] } else { [flat / n, flat % n] };
            for a in 0..dim {
                let k = wavenumber(idx[a], n);
                let w = TAU * k as f64;
                ik[a][flat] = if idx[a] == n / 2 { 0.0 } else { w };
                k2[a][flat] = w * w;
                if dealias && 3 * k.unsigned_abs() as usize > n {
                    mask[flat] = 0.0;
                }
            }
        }
        Ok(MeanFieldOperator {
            dim,
            n,
            fft,
            drift_hat,
            sigma_hat,
            ik,
            k2,
            mask,
        })
    }

    /// Nodes per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn forward(&self, v: &[f64]) -> Vec<Complex64> {
        let mut b: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft.forward_nd(&mut b, self.dim);
        b
    }

    fn inverse(&self, mut b: Vec<Complex64>) -> Vec<f64> {
        self.fft.inverse_nd(&mut b, self.dim);
        b.into_iter().map(|c| c.re).collect()
    }

    /// Frozen coefficients `V_α = K_α*ρ` and `U_α = (σ_αα*ρ)²`.
    pub fn coefficients(&self, rho: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let rh = self.forward(rho);
        let conv = |kh: &Vec<Complex64>| self.inverse(kh.iter().zip(&rh).map(|(a, b)| a * b).collect());
        let v = self.drift_hat.iter().map(conv).collect();
        let u = self
            .sigma_hat
            .iter()
            .map(|sh| conv(sh).into_iter().map(|s| s * s).collect())
            .collect();
        (v, u)
    }

    /// `−Σ_α ∂_α(V_α ρ) + Σ_α ∂²_α(U_α ρ)` in Fourier space (masked).
    fn linear_rhs_hat(&self, rho: &[f64], v: &[Vec<f64>], u: &[Vec<f64>]) -> Vec<Complex64> {
        let total = rho.len();
        let mut acc = vec![Complex64::new(0.0, 0.0); total];
        let mut prod = vec![0.0; total];
        for a in 0..self.dim {
            for j in 0..total {
                prod[j] = v[a][j] * rho[j];
            }
            let ph = self.forward(&prod);
            for j in 0..total {
                acc[j] -= Complex64::new(0.0, self.ik[a][j]) * ph[j];
            }
            for j in 0..total {
                prod[j] = u[a][j] * rho[j];
            }
            let qh = self.forward(&prod);
            for j in 0..total {
                acc[j] -= self.k2[a][j] * qh[j];
            }
        }
        for (c, m) in acc.iter_mut().zip(&self.mask) {
            *c *= *m;
        }
        acc
    }

    pub fn linear_rhs(&self, rho: &[f64], v: &[Vec<f64>], u: &[Vec<f64>]) -> Vec<f64> {
        self.inverse(self.linear_rhs_hat(rho, v, u))
    }

    pub fn rhs_values(&self, rho: &[f64]) -> Vec<f64> {
        let (v, u) = self.coefficients(rho);
        self.linear_rhs(rho, &v, &u)
    }

    fn step(&self, rho: &[f64], dt: f64, stepper: Stepper, c0: &Coeffs, c1: &Coeffs) -> Vec<f64> {
        match stepper {
            Stepper::ExplicitRk2 => {
                let k1 = self.eval_rhs(rho, c0);
                let mid: Vec<f64> = rho.iter().zip(&k1).map(|(r, k)| r + dt * k).collect();
                let k2 = self.eval_rhs(&mid, c1);
                rho.iter()
                    .zip(k1.iter().zip(&k2))
                    .map(|(r, (a, b))| r + 0.5 * dt * (a + b))
                    .collect()
            }
            Stepper::SemiImplicit => {
                let (v, u) = c0.resolve(self, rho);
                let lambda = u.iter().flat_map(|x| x.iter()).fold(0.0f64, |m, &x| m.max(x));
                let fh = self.linear_rhs_hat(rho, &v, &u);
                let mut rh = self.forward(rho);
                for j in 0..rh.len() {
                    let lap: f64 = (0..self.dim).map(|a| self.k2[a][j]).sum();
                    let den = 1.0 + dt * lambda * lap;
                    rh[j] = (rh[j] + dt * (fh[j] + lambda * lap * rh[j])) / den;
                }
                self.inverse(rh)
            }
        }
    }

    fn eval_rhs(&self, rho: &[f64], c: &Coeffs) -> Vec<f64> {
        let (v, u) = c.resolve(self, rho);
        self.linear_rhs(rho, &v, &u)
    }
}

/// Source of the transport/diffusion coefficients for one stage.
enum Coeffs<'a> {
    /// Computed from the stage's own state (the nonlinear equation).
    SelfConsistent,
    /// Computed from a frozen density (Picard).
    Frozen(&'a [f64]),
}

impl Coeffs<'_> {
    fn resolve(&self, op: &MeanFieldOperator, rho: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        match self {
            Coeffs::SelfConsistent => op.coefficients(rho),
            Coeffs::Frozen(f) => op.coefficients(f),
        }
    }
}

/// Periodic convolution `(f * ρ)(x_j) = ∫ f(x_j − y) ρ(y) dy` with `f` sampled
/// on the same grid.
pub fn convolve(grid: &DensityGrid, kernel: &[f64]) -> Result<Vec<f64>> {
    if kernel.len() != grid.values().len() {
        return Err(Error::invalid(format!(
            "kernel has {} samples, grid has {}",
            kernel.len(),
            grid.values().len()
        )));
    }
    let fft = Fft::new(grid.n())?;
    let k = DensityGrid::new(grid.dim(), grid.n(), kernel.to_vec(), 0.0)?.spectrum();
    let mut r: Vec<Complex64> = grid.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.forward_nd(&mut r, grid.dim());
    for (a, b) in r.iter_mut().zip(&k) {
        *a *= b;
    }
    fft.inverse_nd(&mut r, grid.dim());
    Ok(r.into_iter().map(|c| c.re).collect())
}

/// Time derivative of the mean-field equation at `grid` (dealiased).
pub fn rhs(grid: &DensityGrid, spec: &KernelSpec) -> Result<Vec<f64>> {
    if spec.dim() != grid.dim() {
        return Err(Error::invalid("kernel and grid dimensions differ"));
    }
    let min = grid.min();
    if !(min > 0.0) {
        return Err(Error::Domain(format!("density must be strictly positive, min = {min}")));
    }
    Ok(MeanFieldOperator::new(spec, grid.n(), true)?.rhs_values(grid.values()))
}

/// A solved trajectory with its invariant bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Density at `t = 0`, each checkpoint, and `t_end`.
    pub grids: Vec<DensityGrid>,
    pub dt: f64,
    pub steps: u64,
    /// `max_t |∫ρ(t) − ∫ρ(0)|`
    pub mass_drift: f64,
    /// `min_t min_x ρ`
    pub min_value: f64,
    /// `max_t |∫ rhs|` over all evaluated steps.
    pub max_rhs_integral: f64,
    /// Successive-iterate residuals (Picard mode only).
    pub residuals: Vec<f64>,
}

impl Trajectory {
    pub fn last(&self) -> &DensityGrid {
        self.grids.last().expect("trajectory is never empty")
    }

    /// Grid at a stored time (within `1e-9`).
    pub fn at(&self, t: f64) -> Option<&DensityGrid> {
        self.grids.iter().find(|g| (g.time() - t).abs() <= 1e-9 * t.abs().max(1.0))
    }
}

fn prepare(grid0: &DensityGrid, spec: &KernelSpec, cfg: &PdeConfig) -> Result<(MeanFieldOperator, Vec<f64>, u64, Vec<u64>)> {
    if spec.dim() != grid0.dim() {
        return Err(Error::invalid("kernel and grid dimensions differ"));
    }
    let total = cfg.validate(spec, grid0.n())?;
    let start = match cfg.mollify {
        Some(c) => grid0.low_pass(c),
        None => grid0.clone(),
    };
    start.check_density(1e-10)?;
    if !(start.min() > 0.0) {
        return Err(Error::Domain(format!("initial density must be strictly positive, min = {}", start.min())));
    }
    let op = MeanFieldOperator::new(spec, grid0.n(), cfg.dealias)?;
    let cps = cfg.checkpoint_steps(total)?;
    Ok((op, start.into_values(), total, cps))
}

struct Monitor {
    mass0: f64,
    vol: f64,
    drift: f64,
    min: f64,
    rhs_int: f64,
}

impl Monitor {
    fn new(rho: &[f64]) -> Self {
        let vol = 1.0 / rho.len() as f64;
        Monitor {
            mass0: rho.iter().sum::<f64>() * vol,
            vol,
            drift: 0.0,
            min: rho.iter().cloned().fold(f64::INFINITY, f64::min),
            rhs_int: 0.0,
        }
    }

    fn observe(&mut self, rho: &[f64], t: f64) -> Result<()> {
        let m = rho.iter().sum::<f64>() * self.vol;
        let min = rho.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) || !m.is_finite() {
            return Err(Error::PositivityLoss { time: t, min });
        }
        self.min = self.min.min(min);
        self.drift = self.drift.max((m - self.mass0).abs());
        if self.drift > MASS_DRIFT_LIMIT {
            return Err(Error::MassDrift {
                drift: self.drift,
                limit: MASS_DRIFT_LIMIT,
            });
        }
        Ok(())
    }

    fn observe_rhs(&mut self, r: &[f64]) -> Result<()> {
        let i = (r.iter().sum::<f64>() * self.vol).abs();
        self.rhs_int = self.rhs_int.max(i);
        if self.rhs_int > RHS_INTEGRAL_LIMIT {
            return Err(Error::Domain(format!("rhs integrates to {i:e}, not zero")));
        }
        Ok(())
    }
}

fn solve_pass(
    op: &MeanFieldOperator,
    rho0: &[f64],
    cfg: &PdeConfig,
    total: u64,
    frozen: Option<&[Vec<f64>]>,
    keep_all: bool,
    mon: &mut Monitor,
) -> Result<Vec<Vec<f64>>> {
    let mut rho = rho0.to_vec();
    let mut states = Vec::new();
    if keep_all {
        states.reserve(total as usize + 1);
    }
    states.push(rho.clone());
    // the rhs integral is sampled every few steps; it is exactly zero in exact arithmetic
    let probe_every = (total / 64).max(1);
    for s in 0..total {
        let (c0, c1) = match frozen {
            None => (Coeffs::SelfConsistent, Coeffs::SelfConsistent),
            Some(f) => (Coeffs::Frozen(&f[s as usize]), Coeffs::Frozen(&f[s as usize + 1])),
        };
        if s % probe_every == 0 {
            mon.observe_rhs(&op.eval_rhs(&rho, &c0))?;
        }
        rho = op.step(&rho, cfg.dt, cfg.stepper, &c0, &c1);
        mon.observe(&rho, (s + 1) as f64 * cfg.dt)?;
        if keep_all {
            states.push(rho.clone());
        }
    }
    if !keep_all {
        states.push(rho);
    }
    Ok(states)
}

fn build_trajectory(
    grid0: &DensityGrid,
    cfg: &PdeConfig,
    total: u64,
    snaps: Vec<(u64, Vec<f64>)>,
    mon: &Monitor,
    residuals: Vec<f64>,
) -> Result<Trajectory> {
    let grids = snaps
        .into_iter()
        .map(|(s, v)| DensityGrid::new(grid0.dim(), grid0.n(), v, s as f64 * cfg.dt))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory {
        grids,
        dt: cfg.dt,
        steps: total,
        mass_drift: mon.drift,
        min_value: mon.min,
        max_rhs_integral: mon.rhs_int,
        residuals,
    })
}

/// March the nonlinear equation to `cfg.t_end`.
pub fn march(grid0: &DensityGrid, spec: &KernelSpec, cfg: &PdeConfig) -> Result<Trajectory> {
    let (op, rho0, total, cps) = prepare(grid0, spec, cfg)?;
    let mut mon = Monitor::new(&rho0);
    let mut rho = rho0;
    let mut snaps = vec![(0u64, rho.clone())];
    let probe_every = (total / 64).max(1);
    let mut next = 1;
    for s in 0..total {
        if s % probe_every == 0 {
            mon.observe_rhs(&op.rhs_values(&rho))?;
        }
        rho = op.step(&rho, cfg.dt, cfg.stepper, &Coeffs::SelfConsistent, &Coeffs::SelfConsistent);
        mon.observe(&rho, (s + 1) as f64 * cfg.dt)?;
        if next < cps.len() && cps[next] == s + 1 {
            snaps.push((s + 1, rho.clone()));
            next += 1;
        }
    }
    build_trajectory(grid0, cfg, total, snaps, &mon, Vec::new())
}

/// Picard iteration: each sweep solves the linear equation with coefficients
/// frozen from the previous iterate. The first sweep freezes the initial data.
pub fn picard_solve(grid0: &DensityGrid, spec: &KernelSpec, cfg: &PdeConfig) -> Result<Trajectory> {
    let (max_iters, tol) = match cfg.mode {
        Mode::Picard { max_iters, tol } => (max_iters, tol),
        Mode::DirectMarch => (25, 1e-10),
    };
    let (op, rho0, total, cps) = prepare(grid0, spec, cfg)?;
    let stored = (total as usize + 1).saturating_mul(rho0.len());
    if stored > 50_000_000 {
        return Err(Error::Budget(format!(
            "Picard stores every step: {} steps x {} nodes = {stored} values > 5e7",
            total + 1,
            rho0.len()
        )));
    }
    let mut mon = Monitor::new(&rho0);
    let seed: Vec<Vec<f64>> = vec![rho0.clone(); total as usize + 1];
    let mut prev = solve_pass(&op, &rho0, cfg, total, Some(&seed), true, &mut mon)?;
    drop(seed);
    let vol = 1.0 / rho0.len() as f64;
    let mut residuals = Vec::new();
    for _ in 0..max_iters {
        let next = solve_pass(&op, &rho0, cfg, total, Some(&prev), true, &mut mon)?;
        let res = cps
            .iter()
            .map(|&s| {
                let (a, b) = (&next[s as usize], &prev[s as usize]);
                sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() * vol)
            })
            .fold(0.0, f64::max);
        residuals.push(res);
        prev = next;
        if res < tol {
            let snaps = cps.iter().map(|&s| (s, prev[s as usize].clone())).collect();
            return build_trajectory(grid0, cfg, total, snaps, &mon, residuals);
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        residuals,
    })
}

/// Dispatch on `cfg.mode`.
pub fn solve(grid0: &DensityGrid, spec: &KernelSpec, cfg: &PdeConfig) -> Result<Trajectory> {
    match cfg.mode {
        Mode::DirectMarch => march(grid0, spec, cfg),
        Mode::Picard { .. } => picard_solve(grid0, spec, cfg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRow {
    pub t: f64,
    /// `‖ρ‖²_{L²}`, `‖∇ρ‖²_{L²}`, `‖∇²ρ‖²_{L²}`
    pub energies: [f64; 3],
}

/// `A·e^{Bt}` envelope of one energy sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeFit {
    pub a: f64,
    pub b: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub rows: Vec<EnergyRow>,
    pub fits: [EnvelopeFit; 3],
    pub gradient_nonincreasing: bool,
}

fn fit_envelope(ts: &[f64], vs: &[f64]) -> EnvelopeFit {
    let tiny = 1e-300;
    let b = if vs.iter().all(|&v| v > tiny) {
        let logs: Vec<f64> = vs.iter().map(|&v| ln(v)).collect();
        linear_fit(ts, &logs).map_or(0.0, |(_, slope)| slope.max(0.0))
    } else {
        0.0
    };
    let a = ts.iter().zip(vs).map(|(&t, &v)| v * exp(-b * t)).fold(0.0, f64::max);
    let holds = a.is_finite() && b.is_finite() && ts.iter().zip(vs).all(|(&t, &v)| v <= a * exp(b * t) * (1.0 + 1e-12) + tiny);
    EnvelopeFit { a, b, holds }
}

/// Energy monitors at every stored grid, with exponential envelope fits.
pub fn energy_diagnostics(traj: &[DensityGrid]) -> Result<EnergyReport> {
    if traj.is_empty() {
        return Err(Error::invalid("empty trajectory"));
    }
    let rows: Vec<EnergyRow> = traj
        .iter()
        .map(|g| EnergyRow {
            t: g.time(),
            energies: g.sobolev_energies(),
        })
        .collect();
    let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let fit = |i: usize| fit_envelope(&ts, &rows.iter().map(|r| r.energies[i]).collect::<Vec<_>>());
    let gradient_nonincreasing = rows
        .windows(2)
        .all(|w| w[1].energies[1] <= w[0].energies[1] * (1.0 + 1e-12) + 1e-14);
    Ok(EnergyReport {
        fits: [fit(0), fit(1), fit(2)],
        rows,
        gradient_nonincreasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{builtin_diffusion, builtin_drift, builtin_kernel};
    use crate::math::{cos, sin, PI};

    #[test]
    fn convolution_examples() {
        let n = 64;
        let uni = DensityGrid::uniform(1, n).unwrap();
        let ones = vec![1.0; n];
        let sine: Vec<f64> = (0..n).map(|j| sin(TAU * j as f64 / n as f64)).collect();
        for v in convolve(&uni, &ones).unwrap() {
            assert!((v - 1.0).abs() < 1e-14);
        }
        for v in convolve(&uni, &sine).unwrap() {
            assert!(v.abs() < 1e-14);
        }
        assert!(convolve(&uni, &sine[..32]).is_err());
    }

    #[test]
    fn convolution_matches_direct_quadrature() {
        // oracle: O(n²) periodic quadrature at n = 512
        let oracle = |x: f64| {
            let m = 512;
            (0..m)
                .map(|l| {
                    let y = l as f64 / m as f64;
                    sin(TAU * (x - y)) * (1.0 + 0.5 * sin(TAU * y))
                })
                .sum::<f64>()
                / m as f64
        };
        let n = 64;
        let g = DensityGrid::from_fn(1, n, 0.0, |x| 1.0 + 0.5 * sin(TAU * x[0])).unwrap();
        let sine: Vec<f64> = (0..n).map(|j| sin(TAU * j as f64 / n as f64)).collect();
        let c = convolve(&g, &sine).unwrap();
        for (j, v) in c.iter().enumerate() {
            let x = j as f64 / n as f64;
            assert!((v - oracle(x)).abs() < 1e-12);
            assert!((v + 0.25 * cos(TAU * x)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_sigma_rhs_is_heat_operator() {
        let c = 0.7;
        let spec = builtin_kernel("constant_sigma", 1, &[c]).unwrap();
        let g = DensityGrid::cosine_family(1, 64, &[(vec![1], 0.3), (vec![3], 0.2)]).unwrap();
        let r = rhs(&g, &spec).unwrap();
        for (j, v) in r.iter().enumerate() {
            let x = j as f64 / 64.0;
            let lap = -0.3 * TAU * TAU * cos(TAU * x) - 0.2 * 9.0 * TAU * TAU * cos(3.0 * TAU * x);
            assert!((v - c * c * lap).abs() < 1e-9);
        }
        let uni = DensityGrid::uniform(1, 64).unwrap();
        assert!(rhs(&uni, &spec).unwrap().iter().all(|v| v.abs() < 1e-12));
        let bad = DensityGrid::new(1, 4, vec![1.0, 0.0, 1.0, 2.0], 0.0).unwrap();
        assert!(matches!(rhs(&bad, &spec), Err(Error::Domain(_))));
    }

    #[test]
    fn full_rhs_matches_closed_form() {
        // oracle from exact trigonometric convolutions and finite products
        let spec = KernelSpec::new(
            builtin_drift("trig_drift", 1, &[0.4, 1.0]).unwrap(),
            builtin_diffusion("trig_sigma", 1, &[1.0, 0.2, 1.0]).unwrap(),
        )
        .unwrap();
        let g = DensityGrid::cosine_family(1, 64, &[(vec![1], 0.3)]).unwrap();
        let r = rhs(&g, &spec).unwrap();
        // ρ = 1 + a cos θ; K*ρ = 0.4·(a/2) sin θ ... via series convolution
        let f = g.spectral_field();
        let v = spec.drift()[0].convolve(|k| f.coeff(k));
        let s = spec.diffusion()[0].convolve(|k| f.coeff(k));
        let h = 1e-4;
        let flux = |x: f64| v.eval(&[x]) * f.value(&[x]);
        let diff = |x: f64| s.eval(&[x]).powi(2) * f.value(&[x]);
        for j in (0..64).step_by(5) {
            let x = j as f64 / 64.0;
            let d1 = (flux(x + h) - flux(x - h)) / (2.0 * h);
            let d2 = (diff(x + h) - 2.0 * diff(x) + diff(x - h)) / (h * h);
            assert!((r[j] - (-d1 + d2)).abs() < 1e-5, "{} vs {}", r[j], -d1 + d2);
        }
    }

    #[test]
    fn heat_reduction_and_invariants() {
        let spec = builtin_kernel("constant_sigma", 1, &[1.0]).unwrap();
        let g = DensityGrid::cosine_family(1, 64, &[(vec![1], 0.5)]).unwrap();
        let t_end = 0.02;
        let mut cfg = PdeConfig::new(PdeConfig::auto_dt(&spec, 64, t_end, 0.2), t_end);
        cfg.checkpoints = vec![cfg.dt * 10.0];
        let tr = march(&g, &spec, &cfg).unwrap();
        assert_eq!(tr.grids.len(), 3);
        let decay = exp(-4.0 * PI * PI * t_end);
        for (j, v) in tr.last().values().iter().enumerate() {
            let x = j as f64 / 64.0;
            assert!((v - (1.0 + 0.5 * decay * cos(TAU * x))).abs() < 1e-6);
        }
        assert!(tr.mass_drift < 1e-12 && tr.min_value > 0.0 && tr.max_rhs_integral < 1e-12);
        let e = energy_diagnostics(&tr.grids).unwrap();
        assert!(e.gradient_nonincreasing);
        assert!(e.fits.iter().all(|f| f.holds));
    }

    #[test]
    fn cfl_violation_is_config_error() {
        let spec = builtin_kernel("constant_sigma", 1, &[1.0]).unwrap();
        let g = DensityGrid::uniform(1, 64).unwrap();
        let cfg = PdeConfig::new(1e-3, 0.01);
        assert!(matches!(march(&g, &spec, &cfg), Err(Error::Config(_))));
        let mut semi = cfg.clone();
        semi.stepper = Stepper::SemiImplicit;
        let tr = march(&g, &spec, &semi).unwrap();
        assert!(tr.last().values().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn picard_is_one_shot_for_linear_problem() {
        let spec = builtin_kernel("constant_sigma", 1, &[1.0]).unwrap();
        let g = DensityGrid::cosine_family(1, 32, &[(vec![1], 0.5)]).unwrap();
        let mut cfg = PdeConfig::new(PdeConfig::auto_dt(&spec, 32, 0.01, 0.2), 0.01);
        cfg.mode = Mode::Picard { max_iters: 1, tol: 1e-12 };
        let tr = picard_solve(&g, &spec, &cfg).unwrap();
        assert_eq!(tr.residuals.len(), 1);
        let m = march(&g, &spec, &cfg).unwrap();
        assert!(tr.last().max_abs_diff(m.last()).unwrap() < 1e-13);
    }

    #[test]
    fn picard_single_iteration_fails_on_nonlinear_case() {
        let spec = KernelSpec::new(
            builtin_drift("trig_drift", 1, &[0.5, 1.0]).unwrap(),
            builtin_diffusion("trig_sigma", 1, &[1.0, 0.1, 1.0]).unwrap(),
        )
        .unwrap();
        let g = DensityGrid::cosine_family(1, 32, &[(vec![1], 0.5)]).unwrap();
        let mut cfg = PdeConfig::new(PdeConfig::auto_dt(&spec, 32, 0.01, 0.2), 0.01);
        cfg.mode = Mode::Picard { max_iters: 1, tol: 1e-14 };
        assert!(matches!(picard_solve(&g, &spec, &cfg), Err(Error::NonConvergence { .. })));
    }
}
