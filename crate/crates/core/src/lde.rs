//! The error fields φ₁, φ₂ of the relative-entropy expansion, their two
//! cancellation identities, the exponential-moment bound with explicit
//! constants, and exact enumeration of the index-counting rule.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::grid::{DensityGrid, SpectralField, SupNorms};
use crate::kernels::{for_each_node, KernelSpec};
use crate::math::{exp, powf, powi, sqrt, E};
use crate::rng::{self, Domain};
use crate::series::TrigSeries;
use crate::stats::{mean_std, quantile_sorted};
use crate::torus::TorusPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiKind {
    Phi1,
    Phi2,
}

#[derive(Debug, Clone)]
struct AxisCache {
    sigma: TrigSeries,
    sigma1: TrigSeries,
    sigma2: TrigSeries,
    conv: TrigSeries,
    conv1: TrigSeries,
    conv2: TrigSeries,
    drift: TrigSeries,
    drift_conv: TrigSeries,
}

/// `φ₁` or `φ₂` for a kernel pair against a fixed positive background `ρ̄`.
///
/// The background is rescaled to unit mass on construction; both
/// cancellation identities depend on it.
#[derive(Debug, Clone)]
pub struct PhiField {
    kind: PhiKind,
    spec: KernelSpec,
    background: DensityGrid,
    density: SpectralField,
    norms: SupNorms,
    axes: Vec<AxisCache>,
    divergence: TrigSeries,
    div_conv: TrigSeries,
    degenerate: bool,
}

/// Value, gradient and axis second derivatives of `ρ̄` at a point.
type Jet = (f64, [f64; 2], [f64; 2]);

/// One axis of the φ₂ bracket given `(u, ∂u, ∂²u)` and `(v, ∂v, ∂²v)` for the
/// two diffusion factors, the convolution `(c, ∂c, ∂²c)` and the weight `w2`
/// multiplying `c²`.
#[inline]
fn bracket(jet: &Jet, axis: usize, c: [f64; 3], u: [f64; 3], v: [f64; 3], w2: f64) -> f64 {
    let f = u[0] * v[0] - w2 * c[0] * c[0];
    let f1 = u[1] * v[0] + u[0] * v[1] - 2.0 * w2 * c[0] * c[1];
    let f2 = u[2] * v[0] + 2.0 * u[1] * v[1] + u[0] * v[2] - 2.0 * w2 * (c[1] * c[1] + c[0] * c[2]);
    f2 + (2.0 * f1 * jet.1[axis] + f * jet.2[axis]) / jet.0
}

fn sub(x: &[f64], z: &[f64], out: &mut [f64; 2]) {
    for (a, o) in out.iter_mut().enumerate().take(x.len()) {
        *o = x[a] - z[a];
    }
}

impl PhiField {
    pub fn new(kind: PhiKind, spec: &KernelSpec, background: &DensityGrid) -> Result<Self> {
        if spec.dim() != background.dim() {
            return Err(Error::invalid(format!(
                "kernel dimension {} differs from background dimension {}",
                spec.dim(),
                background.dim()
            )));
        }
        if spec.dim() > 2 {
            return Err(Error::invalid("error fields are implemented for d <= 2"));
        }
        let mut field = PhiField {
            kind,
            spec: spec.clone(),
            background: background.clone(),
            density: background.spectral_field(),
            norms: background.sup_norms(1),
            axes: Vec::new(),
            divergence: spec.divergence().clone(),
            div_conv: TrigSeries::zero(spec.dim()),
            degenerate: spec.sigma_is_constant(),
        };
        field.set_background(background)?;
        Ok(field)
    }

    /// Replace `ρ̄` and rebuild every cached convolution.
    pub fn set_background(&mut self, background: &DensityGrid) -> Result<()> {
        if background.dim() != self.spec.dim() {
            return Err(Error::invalid("background dimension mismatch"));
        }
        let mass = background.mass();
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::InvalidDensity(format!("background mass {mass}")));
        }
        let scaled: Vec<f64> = background.values().iter().map(|v| v / mass).collect();
        let grid = DensityGrid::new(background.dim(), background.n(), scaled, background.time())?;
        let norms = grid.sup_norms(4);
        if !(norms.inf > 0.0) {
            return Err(Error::InvalidDensity(format!(
                "background must be strictly positive, interpolant minimum {}",
                norms.inf
            )));
        }
        let density = grid.spectral_field();
        let coeff = |k: &[i32]| density.coeff(k);
        let spec = &self.spec;
        self.axes = (0..spec.dim())
            .map(|a| {
                let conv = spec.diffusion()[a].convolve(coeff);
                let conv1 = conv.derivative(a);
                let conv2 = conv1.derivative(a);
                AxisCache {
                    sigma: spec.diffusion()[a].clone(),
                    sigma1: spec.diffusion_d1()[a].clone(),
                    sigma2: spec.diffusion_d2()[a].clone(),
                    conv,
                    conv1,
                    conv2,
                    drift: spec.drift()[a].clone(),
                    drift_conv: spec.drift()[a].convolve(coeff),
                }
            })
            .collect();
        self.div_conv = self.divergence.convolve(coeff);
        self.density = density;
        self.norms = norms;
        self.background = grid;
        Ok(())
    }

    pub fn kind(&self) -> PhiKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    /// The unit-mass background.
    pub fn background(&self) -> &DensityGrid {
        &self.background
    }

    pub fn density(&self) -> &SpectralField {
        &self.density
    }

    /// Sup norms of the background on the 4× interpolant.
    pub fn background_norms(&self) -> SupNorms {
        self.norms
    }

    /// True when σ is constant, so φ₂ vanishes identically.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    fn jet(&self, x: &[f64]) -> Jet {
        self.density.jet(x)
    }

    #[inline]
    fn conv_at(&self, a: usize, x: &[f64]) -> [f64; 3] {
        let ax = &self.axes[a];
        [ax.conv.eval(x), ax.conv1.eval(x), ax.conv2.eval(x)]
    }

    #[inline]
    fn sigma_at(&self, a: usize, diff: &[f64]) -> [f64; 3] {
        let ax = &self.axes[a];
        [ax.sigma.eval(diff), ax.sigma1.eval(diff), ax.sigma2.eval(diff)]
    }

    /// `φ₂(x, z, z2)` on raw coordinates.
    pub fn phi2(&self, x: &[f64], z: &[f64], z2: &[f64]) -> f64 {
        if self.degenerate {
            return 0.0;
        }
        let d = self.dim();
        let jet = self.jet(x);
        let (mut d1, mut d2) = ([0.0; 2], [0.0; 2]);
        sub(x, z, &mut d1);
        sub(x, z2, &mut d2);
        (0..d)
            .map(|a| {
                bracket(&jet, a, self.conv_at(a, x), self.sigma_at(a, &d1[..d]), self.sigma_at(a, &d2[..d]), 1.0)
            })
            .sum()
    }

    /// `φ₁(x, z)` on raw coordinates.
    pub fn phi1(&self, x: &[f64], z: &[f64]) -> f64 {
        let d = self.dim();
        let jet = self.jet(x);
        let mut diff = [0.0; 2];
        sub(x, z, &mut diff);
        let diff = &diff[..d];
        let mut v = -(self.divergence.eval(diff) - self.div_conv.eval(x));
        for (a, ax) in self.axes.iter().enumerate() {
            v -= (ax.drift.eval(diff) - ax.drift_conv.eval(x)) * jet.1[a] / jet.0;
        }
        v
    }

    pub fn eval_phi2(&self, x: &TorusPoint, z: &TorusPoint, z2: &TorusPoint) -> f64 {
        self.phi2(x.coords(), z.coords(), z2.coords())
    }

    pub fn eval_phi1(&self, x: &TorusPoint, z: &TorusPoint) -> f64 {
        self.phi1(x.coords(), z.coords())
    }

    /// The field selected by `kind`; `z2` is ignored for φ₁.
    pub fn eval(&self, x: &[f64], z: &[f64], z2: &[f64]) -> f64 {
        match self.kind {
            PhiKind::Phi1 => self.phi1(x, z),
            PhiKind::Phi2 => self.phi2(x, z, z2),
        }
    }

    /// `Σ_{i,j,k} φ₂(x_i, x_j, x_k)` over a flat point list in
    /// `O(N·G)`, `G` the number of kernel modes.
    pub fn grouped_triple_sum(&self, points: &[f64]) -> f64 {
        if self.degenerate {
            return 0.0;
        }
        let d = self.dim();
        let count = points.len() / d;
        let w2 = (count * count) as f64;
        let sums: Vec<Vec<(f64, f64)>> = self.axes.iter().map(|ax| ax.sigma.phase_sums(points)).collect();
        let mut total = 0.0;
        for x in points.chunks_exact(d) {
            let jet = self.jet(x);
            for (a, ax) in self.axes.iter().enumerate() {
                let s = &sums[a];
                let g = [
                    ax.sigma.pair_sum(x, count, s),
                    ax.sigma1.pair_sum(x, count, s),
                    ax.sigma2.pair_sum(x, count, s),
                ];
                total += bracket(&jet, a, self.conv_at(a, x), g, g, w2);
            }
        }
        total
    }

    /// The same sum by direct `O(N³)` evaluation.
    pub fn naive_triple_sum(&self, points: &[f64]) -> f64 {
        let d = self.dim();
        let mut total = 0.0;
        for x in points.chunks_exact(d) {
            for z in points.chunks_exact(d) {
                for z2 in points.chunks_exact(d) {
                    total += self.phi2(x, z, z2);
                }
            }
        }
        total
    }

    fn node_points(&self, n: usize) -> Vec<f64> {
        let mut pts = Vec::new();
        for_each_node(self.dim(), n, |x| pts.extend_from_slice(x));
        pts
    }

    /// For each `x` node, the sup over node pairs `(z, z')` of `|φ₂(x, z, z')|`,
    /// using a table of σ values at the node differences.
    fn pair_sups(&self, n: usize) -> Vec<(f64, f64)> {
        let d = self.dim();
        let pts = self.node_points(n);
        let mut out = Vec::with_capacity(pts.len() / d);
        let mut table: Vec<[f64; 3]> = Vec::new();
        for x in pts.chunks_exact(d) {
            let weight = self.density.value(x);
            if self.degenerate {
                out.push((0.0, weight));
                continue;
            }
            let jet = self.jet(x);
            let convs: Vec<[f64; 3]> = (0..d).map(|a| self.conv_at(a, x)).collect();
            table.clear();
            let mut diff = [0.0; 2];
            for z in pts.chunks_exact(d) {
                sub(x, z, &mut diff);
                for a in 0..d {
                    table.push(self.sigma_at(a, &diff[..d]));
                }
            }
            let nodes = pts.len() / d;
            let mut sup = 0.0f64;
            for p in 0..nodes {
                for q in p..nodes {
                    let v: f64 = (0..d)
                        .map(|a| bracket(&jet, a, convs[a], table[p * d + a], table[q * d + a], 1.0))
                        .sum();
                    sup = sup.max(v.abs());
                }
            }
            out.push((sup, weight));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Cancellation identities

#[derive(Debug, Clone, PartialEq)]
pub struct CancellationReport {
    pub kind: PhiKind,
    pub n: usize,
    pub probes: usize,
    /// `max |∫ φ(x, z, z') ρ̄(x) dx|` over the probes.
    pub first_max: f64,
    pub first_probe: usize,
    /// `max |∫∫ φ(x, z, z') ρ̄(z) ρ̄(z') dz dz'|` (φ₂), or
    /// `max |∫ φ₁(x, z) ρ̄(z) dz|` (φ₁).
    pub second_max: f64,
    pub second_probe: usize,
}

impl CancellationReport {
    pub fn max_residual(&self) -> f64 {
        self.first_max.max(self.second_max)
    }
}

fn probe_point(seed: u64, family: u64, p: usize, d: usize) -> [f64; 2] {
    let mut r = rng::stream(seed, Domain::Probe, family, p as u64);
    let mut out = [0.0; 2];
    for o in out.iter_mut().take(d) {
        *o = rng::uniform(&mut r);
    }
    out
}

/// Periodic-grid quadrature of both cancellation families at `probes` random
/// probe points, `n` nodes per axis.
pub fn cancellation_residuals(field: &PhiField, probes: usize, n: usize, seed: u64) -> Result<CancellationReport> {
    if probes == 0 || n < 2 {
        return Err(Error::invalid("need at least one probe and two nodes"));
    }
    let d = field.dim();
    let pts = field.node_points(n);
    let nodes = pts.len() / d;
    let weights: Vec<f64> = pts.chunks_exact(d).map(|x| field.density.value(x) / nodes as f64).collect();
    let mut report = CancellationReport {
        kind: field.kind,
        n,
        probes,
        first_max: 0.0,
        first_probe: 0,
        second_max: 0.0,
        second_probe: 0,
    };
    let mut record = |slot: u8, p: usize, v: f64| {
        let (max, idx) = if slot == 0 {
            (&mut report.first_max, &mut report.first_probe)
        } else {
            (&mut report.second_max, &mut report.second_probe)
        };
        if v.abs() > *max || v.is_nan() {
            *max = if v.is_nan() { f64::INFINITY } else { v.abs() };
            *idx = p;
        }
    };
    for p in 0..probes {
        let z = probe_point(seed, 1, p, d);
        let z2 = probe_point(seed, 2, p, d);
        let (z, z2) = (&z[..d], &z2[..d]);
        let first: f64 = pts
            .chunks_exact(d)
            .zip(&weights)
            .map(|(x, w)| w * field.eval(x, z, z2))
            .sum();
        record(0, p, first);

        let xp = probe_point(seed, 3, p, d);
        let x = &xp[..d];
        let second = match field.kind {
            PhiKind::Phi1 => pts.chunks_exact(d).zip(&weights).map(|(z, w)| w * field.phi1(x, z)).sum(),
            PhiKind::Phi2 => pair_quadrature(field, x, &pts, &weights),
        };
        record(1, p, second);
    }
    Ok(report)
}

/// `Σ_{z,z'} w(z) w(z') φ₂(x, z, z')`: explicit double sum when it is small,
/// otherwise the algebraically equal factored form.
fn pair_quadrature(field: &PhiField, x: &[f64], pts: &[f64], weights: &[f64]) -> f64 {
    if field.degenerate {
        return 0.0;
    }
    let d = field.dim();
    let jet = field.jet(x);
    let convs: Vec<[f64; 3]> = (0..d).map(|a| field.conv_at(a, x)).collect();
    let mut table: Vec<[f64; 3]> = Vec::with_capacity(weights.len() * d);
    let mut diff = [0.0; 2];
    for z in pts.chunks_exact(d) {
        sub(x, z, &mut diff);
        for a in 0..d {
            table.push(field.sigma_at(a, &diff[..d]));
        }
    }
    let nodes = weights.len();
    if nodes * nodes <= 1 << 20 {
        let mut acc = 0.0;
        for p in 0..nodes {
            let mut row = 0.0;
            for q in 0..nodes {
                let v: f64 = (0..d)
                    .map(|a| bracket(&jet, a, convs[a], table[p * d + a], table[q * d + a], 1.0))
                    .sum();
                row += weights[q] * v;
            }
            acc += weights[p] * row;
        }
        acc
    } else {
        let total: f64 = weights.iter().sum();
        (0..d)
            .map(|a| {
                let mut g = [0.0; 3];
                for (p, w) in weights.iter().enumerate() {
                    for (gi, ti) in g.iter_mut().zip(table[p * d + a]) {
                        *gi += w * ti;
                    }
                }
                bracket(&jet, a, convs[a], g, g, total * total)
            })
            .sum()
    }
}

/// As [`cancellation_residuals`], failing when either family exceeds `tol`.
pub fn check_cancellations(
    field: &PhiField,
    probes: usize,
    n: usize,
    seed: u64,
    tol: f64,
) -> Result<CancellationReport> {
    let report = cancellation_residuals(field, probes, n, seed)?;
    if !(report.first_max < tol) {
        return Err(Error::CancellationFailure {
            family: "integral against rho(x)",
            residual: report.first_max,
            probe: report.first_probe,
        });
    }
    if !(report.second_max < tol) {
        return Err(Error::CancellationFailure {
            family: "integral against rho(z) rho(z')",
            residual: report.second_max,
            probe: report.second_probe,
        });
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Constants

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaMode {
    /// `η = 1/(12e²B)`.
    Certified,
    Given(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    /// Pointwise bound `B ≥ |φ₂|`.
    pub b: f64,
    /// `‖∇ρ̄‖∞ / inf ρ̄`
    pub g: f64,
    /// `‖∇²ρ̄‖∞ / inf ρ̄`
    pub h: f64,
    pub eta: f64,
    /// Certified `sup_p M_p/p` for `ηφ₂`, namely `ηB`.
    pub m_p_sup: f64,
    /// `max_{p ∈ {1,2,4,8,16}} M_p/p` from a node grid, for comparison.
    pub m_p_sampled: f64,
    /// Largest sampled `|φ₂|`.
    pub sup_sampled: f64,
    pub alpha: f64,
    pub beta: f64,
    pub c_bound: f64,
}

/// `α = 32e³M²`, `β = (3e²M)²` and `C = 2(1 + 4α/(1−α)³ + 1/(1−β))`.
pub fn alpha_beta_c(m_p_sup: f64) -> Result<(f64, f64, f64)> {
    if !(m_p_sup.is_finite() && m_p_sup >= 0.0) {
        return Err(Error::invalid(format!("M_p_sup must be finite and nonnegative, got {m_p_sup}")));
    }
    let alpha = 32.0 * E * E * E * m_p_sup * m_p_sup;
    let beta = powi(3.0 * E * E * m_p_sup, 2);
    let detail = format!("M_p_sup = {m_p_sup}, alpha = {alpha}, beta = {beta}");
    match (alpha < 1.0, beta < 1.0) {
        (true, true) => {}
        (false, true) => return Err(Error::ConstraintViolation { assumption: "alpha < 1", detail }),
        (true, false) => return Err(Error::ConstraintViolation { assumption: "beta < 1", detail }),
        (false, false) => {
            return Err(Error::ConstraintViolation { assumption: "alpha < 1 and beta < 1", detail })
        }
    }
    let c = 2.0 * (1.0 + 4.0 * alpha / powi(1.0 - alpha, 3) + 1.0 / (1.0 - beta));
    Ok((alpha, beta, c))
}

fn default_sup_pts(dim: usize) -> usize {
    if dim == 1 {
        64
    } else {
        12
    }
}

/// Bound constants for `ηφ₂`.
pub fn constants(field: &PhiField, mode: EtaMode) -> Result<BoundConstants> {
    let d = field.dim() as f64;
    let s = field.spec.norms().sigma_w2inf;
    let g = field.norms.grad / field.norms.inf;
    let h = field.norms.hess / field.norms.inf;
    let s2 = s * s;
    let b = 8.0 * d * s2 + 8.0 * d * s2 * g + 2.0 * d * s2 * h;
    let eta = match mode {
        EtaMode::Certified => 1.0 / (12.0 * E * E * b),
        EtaMode::Given(e) => {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::invalid(format!("eta must be positive, got {e}")));
            }
            e
        }
    };
    let m_p_sup = eta * b;
    let (alpha, beta, c_bound) = alpha_beta_c(m_p_sup)?;
    let sups = field.pair_sups(default_sup_pts(field.dim()));
    let nodes = sups.len() as f64;
    let sup_sampled = sups.iter().fold(0.0f64, |m, s| m.max(s.0));
    let m_p_sampled = [1.0f64, 2.0, 4.0, 8.0, 16.0]
        .iter()
        .map(|&p| {
            let integral: f64 = sups.iter().map(|(s, w)| powf(eta * s, p) * w).sum::<f64>() / nodes;
            powf(integral, 1.0 / p) / p
        })
        .fold(0.0f64, f64::max);
    Ok(BoundConstants {
        b,
        g,
        h,
        eta,
        m_p_sup,
        m_p_sampled,
        sup_sampled,
        alpha,
        beta,
        c_bound,
    })
}

/// Which bound governs the `m`-th term at particle number `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermRegime {
    /// `4 ≤ 4m ≤ N`
    SmallM,
    /// `4m > N`
    LargeM,
}

/// `2m²(√(32e³)·M)^{2m}`, the bound on `(1/(2m)!)E[(N⁻²Σφ)^{2m}]` for `4 ≤ 4m ≤ N`.
pub fn small_m_bound(m: u32, m_p_sup: f64) -> f64 {
    let mf = m as f64;
    2.0 * mf * mf * powi(sqrt(32.0 * E * E * E) * m_p_sup, 2 * m as i32)
}

/// `(3e²·M)^{2m}`, the same quantity's bound for `4m > N`.
pub fn large_m_bound(m: u32, m_p_sup: f64) -> f64 {
    powi(3.0 * E * E * m_p_sup, 2 * m as i32)
}

/// Regime and bound for `r_m = (2/(2m)!)E[(N⁻²Σφ)^{2m}]`.
pub fn term_bound(m: u32, n_particles: usize, m_p_sup: f64) -> Result<(TermRegime, f64)> {
    if m == 0 {
        return Err(Error::invalid("term bounds start at m = 1"));
    }
    if 4 * m as usize > n_particles {
        Ok((TermRegime::LargeM, 2.0 * large_m_bound(m, m_p_sup)))
    } else {
        Ok((TermRegime::SmallM, 2.0 * small_m_bound(m, m_p_sup)))
    }
}

// ---------------------------------------------------------------------------
// Monte Carlo

/// Exponents `N⁻²·η·Σ_{i,j,k} φ₂(x_i, x_j, x_k)` for configurations
/// `X ~ ρ̄^{⊗N}` with indices in `samples`; each index has its own stream.
pub fn mc_exponents(
    field: &PhiField,
    eta: f64,
    n_particles: usize,
    samples: Range<usize>,
    seed: u64,
) -> Result<Vec<f64>> {
    if field.kind != PhiKind::Phi2 {
        return Err(Error::invalid("exponential moments are defined for phi2"));
    }
    if n_particles < 2 {
        return Err(Error::invalid("need N >= 2"));
    }
    let d = field.dim();
    let scale = eta / (n_particles * n_particles) as f64;
    let mut pts = vec![0.0; n_particles * d];
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let mut r = rng::stream(seed, Domain::MonteCarlo, n_particles as u64, s as u64);
        for p in pts.chunks_exact_mut(d) {
            field.density.sample_point(&mut r, p);
        }
        out.push(scale * field.grouped_triple_sum(&pts));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub n_particles: usize,
    pub samples: usize,
    pub mean: f64,
    pub std_err: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub max_exponent: f64,
}

impl MomentEstimate {
    /// `mean + 3σ ≤ bound`
    pub fn within(&self, bound: f64) -> bool {
        self.mean + 3.0 * self.std_err <= bound
    }
}

/// Mean of `exp(E_s)` with standard error and a 95% percentile bootstrap
/// interval.
pub fn summarize_exp_moment(
    exponents: &[f64],
    n_particles: usize,
    resamples: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    if exponents.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    let max_exponent = exponents.iter().fold(f64::NEG_INFINITY, |m, &e| m.max(e));
    if !(max_exponent < 700.0) || exponents.iter().any(|e| e.is_nan()) {
        return Err(Error::Overflow { max_exponent });
    }
    let values: Vec<f64> = exponents.iter().map(|&e| exp(e)).collect();
    let (mean, std) = mean_std(&values);
    let count = values.len();
    let mut r = rng::stream(seed, Domain::Bootstrap, n_particles as u64, u64::MAX);
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut acc = 0.0;
        for _ in 0..count {
            let idx = ((rng::uniform(&mut r) * count as f64) as usize).min(count - 1);
            acc += values[idx];
        }
        means.push(acc / count as f64);
    }
    means.sort_by(f64::total_cmp);
    let (ci_low, ci_high) = if means.is_empty() {
        (mean, mean)
    } else {
        (quantile_sorted(&means, 0.025), quantile_sorted(&means, 0.975))
    };
    Ok(MomentEstimate {
        n_particles,
        samples: count,
        mean,
        std_err: std / sqrt(count as f64),
        ci_low,
        ci_high,
        max_exponent,
    })
}

/// `∫ρ̄^{⊗N} exp(N⁻²Σηφ₂) dX` by Monte Carlo.
pub fn exp_moment_mc(field: &PhiField, eta: f64, n_particles: usize, n_mc: usize, seed: u64) -> Result<MomentEstimate> {
    if n_mc < 1000 {
        return Err(Error::invalid(format!("need at least 1000 Monte Carlo samples, got {n_mc}")));
    }
    let exps = mc_exponents(field, eta, n_particles, 0..n_mc, seed)?;
    summarize_exp_moment(&exps, n_particles, 200, seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermEstimate {
    pub m: u32,
    pub value: f64,
    pub std_err: f64,
}

/// `r_m = (2/(2m)!)·E[E_s^{2m}]` from sampled exponents.
pub fn moment_term(exponents: &[f64], m: u32) -> Result<TermEstimate> {
    if exponents.is_empty() || m == 0 {
        return Err(Error::invalid("need samples and m >= 1"));
    }
    let fact: f64 = (1..=2 * m).map(|k| k as f64).product();
    let vals: Vec<f64> = exponents.iter().map(|&e| 2.0 * powi(e, 2 * m as i32) / fact).collect();
    let (mean, std) = mean_std(&vals);
    Ok(TermEstimate {
        m,
        value: mean,
        std_err: std / sqrt(vals.len() as f64),
    })
}

/// Tensor-grid quadrature of the `N = 2` exponential moment, `d = 1`.
pub fn tensor_quadrature_n2(field: &PhiField, eta: f64, nodes: usize) -> Result<f64> {
    if field.dim() != 1 || field.kind != PhiKind::Phi2 {
        return Err(Error::invalid("tensor quadrature needs d = 1 and phi2"));
    }
    if nodes < 4 {
        return Err(Error::invalid("need at least 4 nodes"));
    }
    let xs: Vec<f64> = (0..nodes).map(|a| a as f64 / nodes as f64).collect();
    let w: Vec<f64> = xs.iter().map(|&x| field.density.value(&[x]) / nodes as f64).collect();
    let mut acc = 0.0;
    for (a, &x1) in xs.iter().enumerate() {
        for (b, &x2) in xs.iter().enumerate() {
            let e = eta / 4.0 * field.grouped_triple_sum(&[x1, x2]);
            acc += w[a] * w[b] * exp(e);
        }
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Index triples and the counting rule

/// `(I, J, K)` with entries in `1..=N`, each of length `2m`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexTriple {
    n: u32,
    i: Vec<u32>,
    j: Vec<u32>,
    k: Vec<u32>,
}

impl IndexTriple {
    pub fn new(n: u32, i: Vec<u32>, j: Vec<u32>, k: Vec<u32>) -> Result<Self> {
        let len = i.len();
        if len == 0 || len % 2 != 0 || j.len() != len || k.len() != len {
            return Err(Error::invalid("I, J, K must share one even, positive length"));
        }
        if i.iter().chain(&j).chain(&k).any(|&v| v == 0 || v > n) {
            return Err(Error::invalid(format!("entries must lie in 1..={n}")));
        }
        Ok(IndexTriple { n, i, j, k })
    }

    pub fn m(&self) -> usize {
        self.i.len() / 2
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn i(&self) -> &[u32] {
        &self.i
    }

    pub fn j(&self) -> &[u32] {
        &self.j
    }

    pub fn k(&self) -> &[u32] {
        &self.k
    }

    /// `a_t`, the number of times `t` occurs in `I`, for `t = 1..=N`.
    pub fn multiplicities(&self) -> Vec<usize> {
        let mut a = vec![0; self.n as usize];
        for &v in &self.i {
            a[v as usize - 1] += 1;
        }
        a
    }
}

fn survives_raw(i: &[u32], j: &[u32], k: &[u32]) -> bool {
    let len = i.len();
    for l in 0..len {
        let v = i[l];
        let elsewhere = i.iter().enumerate().any(|(p, &x)| p != l && x == v) || j.contains(&v) || k.contains(&v);
        if !elsewhere {
            return false;
        }
    }
    for l in 0..len {
        if j[l] == k[l] {
            continue;
        }
        let shared = |v: u32| i.contains(&v) || (0..len).any(|p| p != l && (j[p] == v || k[p] == v));
        if !shared(j[l]) && !shared(k[l]) {
            return false;
        }
    }
    true
}

/// False when either cancellation rule forces the integral to vanish:
/// some `i_l` occurs nowhere else in `I, J, K`, or some `j_l ≠ k_l` both
/// occur nowhere in `I` nor in the other `J, K` slots.
pub fn survives(triple: &IndexTriple) -> bool {
    survives_raw(&triple.i, &triple.j, &triple.k)
}

pub const ENUMERATION_BUDGET: u64 = 100_000_000;

/// `N^{6m}`, refusing beyond the enumeration budget.
pub fn enumeration_size(n: u32, m: u32) -> Result<u64> {
    if n == 0 || m == 0 {
        return Err(Error::invalid("need N >= 1 and m >= 1"));
    }
    match (n as u64).checked_pow(6 * m) {
        Some(t) if t <= ENUMERATION_BUDGET => Ok(t),
        _ => Err(Error::Budget(format!(
            "N^(6m) = {n}^{} exceeds the enumeration budget of {ENUMERATION_BUDGET}",
            6 * m
        ))),
    }
}

/// Visit every triple whose leading index `i_1` equals `lead` (1-based).
fn for_each_with_lead<F: FnMut(&[u32], &[u32], &[u32])>(n: u32, m: u32, lead: u32, mut f: F) {
    let len = 2 * m as usize;
    let mut digits = vec![1u32; 3 * len];
    digits[0] = lead;
    loop {
        f(&digits[..len], &digits[len..2 * len], &digits[2 * len..]);
        let mut pos = 1;
        loop {
            if pos == digits.len() {
                return;
            }
            digits[pos] += 1;
            if digits[pos] <= n {
                break;
            }
            digits[pos] = 1;
            pos += 1;
        }
    }
}

/// Survivors among the triples with `i_1 = lead`.
pub fn count_survivors_with_lead(n: u32, m: u32, lead: u32) -> Result<u64> {
    enumeration_size(n, m)?;
    if lead == 0 || lead > n {
        return Err(Error::invalid("lead index out of range"));
    }
    let mut count = 0;
    for_each_with_lead(n, m, lead, |i, j, k| {
        if survives_raw(i, j, k) {
            count += 1;
        }
    });
    Ok(count)
}

/// `C(a, b)`, zero when `a < 0`, `b < 0` or `a < b`.
pub fn binomial(a: i64, b: i64) -> u128 {
    if a < 0 || b < 0 || a < b {
        return 0;
    }
    let b = b.min(a - b) as u128;
    let a = a as u128;
    let mut r: u128 = 1;
    for t in 0..b {
        r = r * (a - t) / (t + 1);
    }
    r
}

/// Visit every `(a_1..a_len)` with `a_t ≥ floor` summing to `total`.
fn for_each_composition<F: FnMut(&[u32])>(len: usize, total: u32, floor: u32, f: &mut F) {
    fn rec<F: FnMut(&[u32])>(buf: &mut Vec<u32>, len: usize, left: u32, floor: u32, f: &mut F) {
        if buf.len() + 1 == len {
            if left >= floor {
                buf.push(left);
                f(buf);
                buf.pop();
            }
            return;
        }
        let mut v = floor;
        while v <= left {
            buf.push(v);
            rec(buf, len, left - v, floor, f);
            buf.pop();
            v += 1;
        }
    }
    if len == 0 {
        if total == 0 {
            f(&[]);
        }
        return;
    }
    let mut buf = Vec::with_capacity(len);
    rec(&mut buf, len, total, floor, f);
}

/// Number of `(a_1..a_len)`, `a_t ≥ floor`, summing to `total`, by listing them.
pub fn count_compositions(len: usize, total: u32, floor: u32) -> u64 {
    let mut c = 0;
    for_each_composition(len, total, floor, &mut |_| c += 1);
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RestrictedCount {
    pub s: u32,
    /// Direct count of `a_1 + … + a_s = 2m`, `a_t ≥ 2`.
    pub direct: u64,
    /// `C(2m−2s−1, s−1)` under the zero convention.
    pub printed_formula: u128,
    /// `C(2m−s−1, s−1)`.
    pub corrected: u128,
}

/// `Σ_{s=1..m} Σ_{a_t ≥ 2, Σa = 2m} (2m)!/Π a_t!`
pub fn multinomial_sum(m: u32) -> f64 {
    let fact = |k: u32| -> f64 { (1..=k).map(|t| t as f64).product() };
    let top = fact(2 * m);
    let mut total = 0.0;
    for s in 1..=m {
        for_each_composition(s as usize, 2 * m, 2, &mut |a: &[u32]| {
            total += top / a.iter().map(|&x| fact(x)).product::<f64>();
        });
    }
    total
}

/// The counting bound `2m(8e)^m N^{4m} Σ_s Σ_a (2m)!/Πa_t!`.
pub fn counting_bound(n: u32, m: u32) -> f64 {
    let mf = m as f64;
    2.0 * mf * powi(8.0 * E, m as i32) * powi(n as f64, 4 * m as i32) * multinomial_sum(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationReport {
    pub n: u32,
    pub m: u32,
    pub triples: u64,
    pub survivors: u64,
    pub stated_bound: f64,
    /// Direct count of `a_1 + … + a_N = 2m`, `a_t ≥ 0`.
    pub stars_bars_direct: u64,
    /// `C(2m+N−1, N−1)`
    pub stars_bars_formula: u128,
    pub restricted: Vec<RestrictedCount>,
    /// Stars-and-bars identity holds, the corrected restricted formula
    /// matches every direct count, and survivors stay under the bound.
    pub identity_checks_passed: bool,
}

impl EnumerationReport {
    /// Attach the combinatorial checks to a survivor count.
    pub fn assemble(n: u32, m: u32, survivors: u64) -> Result<Self> {
        let triples = enumeration_size(n, m)?;
        let total = 2 * m;
        let stars_bars_direct = count_compositions(n as usize, total, 0);
        let stars_bars_formula = binomial((total + n - 1) as i64, (n - 1) as i64);
        let restricted: Vec<RestrictedCount> = (1..=m)
            .map(|s| {
                let (t, s_) = (total as i64, s as i64);
                RestrictedCount {
                    s,
                    direct: count_compositions(s as usize, total, 2),
                    printed_formula: binomial(t - 2 * s_ - 1, s_ - 1),
                    corrected: binomial(t - s_ - 1, s_ - 1),
                }
            })
            .collect();
        let stated_bound = counting_bound(n, m);
        let identity_checks_passed = stars_bars_direct as u128 == stars_bars_formula
            && restricted.iter().all(|r| r.direct as u128 == r.corrected)
            && (survivors as f64) <= stated_bound;
        Ok(EnumerationReport {
            n,
            m,
            triples,
            survivors,
            stated_bound,
            stars_bars_direct,
            stars_bars_formula,
            restricted,
            identity_checks_passed,
        })
    }
}

/// Exhaustive survivor count over all `N^{6m}` triples.
pub fn enumerate_survivors(n: u32, m: u32) -> Result<EnumerationReport> {
    enumeration_size(n, m)?;
    let mut survivors = 0;
    for lead in 1..=n {
        survivors += count_survivors_with_lead(n, m, lead)?;
    }
    EnumerationReport::assemble(n, m, survivors)
}

// ---------------------------------------------------------------------------
// Quadrature oracle for the vanishing of index-triple integrals

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleValue {
    /// `∫ Π_l φ₂(x_{i_l}, x_{j_l}, x_{k_l}) ρ̄_N dX`
    pub value: f64,
    /// The same integral with `|φ₂|`.
    pub scale: f64,
    pub vanishes: bool,
}

pub const ORACLE_REL_TOL: f64 = 1e-6;
const ORACLE_BUDGET: u64 = 400_000_000;

/// Periodic tensor quadrature of products of φ₂ on `T¹`, memoised over
/// relabelings of the index pattern.
#[derive(Debug, Clone)]
pub struct VanishingOracle {
    quad_n: usize,
    tensor: Vec<f64>,
    weights: Vec<f64>,
    by_label: BTreeMap<Vec<u8>, OracleValue>,
    by_canon: BTreeMap<Vec<u8>, OracleValue>,
}

/// Relabel variables in order of first appearance.
fn relabel(seq: &[u32]) -> Vec<u8> {
    let mut seen: Vec<u32> = Vec::new();
    seq.iter()
        .map(|v| match seen.iter().position(|s| s == v) {
            Some(p) => p as u8,
            None => {
                seen.push(*v);
                (seen.len() - 1) as u8
            }
        })
        .collect()
}

fn permutations(len: usize) -> Vec<Vec<usize>> {
    if len == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for rest in permutations(len - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, len - 1);
            out.push(p);
        }
    }
    out
}

/// Minimal relabeled form over factor orderings and `j ↔ k` swaps, for
/// up to four factors; the plain relabeling beyond.
fn canonical(labels: &[u8]) -> Vec<u8> {
    let factors = labels.len() / 3;
    if factors > 4 {
        return labels.to_vec();
    }
    let mut best: Option<Vec<u8>> = None;
    let mut seq = vec![0u32; labels.len()];
    for perm in permutations(factors) {
        for mask in 0..(1u32 << factors) {
            for (slot, &f) in perm.iter().enumerate() {
                let (i, mut j, mut k) = (labels[3 * f], labels[3 * f + 1], labels[3 * f + 2]);
                if mask >> slot & 1 == 1 {
                    core::mem::swap(&mut j, &mut k);
                }
                seq[3 * slot] = i as u32;
                seq[3 * slot + 1] = j as u32;
                seq[3 * slot + 2] = k as u32;
            }
            let cand = relabel(&seq);
            if best.as_ref().is_none_or(|b| cand < *b) {
                best = Some(cand);
            }
        }
    }
    best.unwrap_or_default()
}

impl VanishingOracle {
    pub fn new(field: &PhiField, quad_n: usize) -> Result<Self> {
        if field.dim() != 1 || field.kind != PhiKind::Phi2 {
            return Err(Error::invalid("the vanishing oracle needs d = 1 and phi2"));
        }
        if quad_n < 32 {
            return Err(Error::invalid(format!("quad_n must be at least 32, got {quad_n}")));
        }
        let n = quad_n;
        let xs: Vec<f64> = (0..n).map(|a| a as f64 / n as f64).collect();
        let weights = xs.iter().map(|&x| field.density.value(&[x]) / n as f64).collect();
        let mut tensor = vec![0.0; n * n * n];
        if !field.degenerate {
            // σ parts at offsets (a − b) mod n
            let offs: Vec<[f64; 3]> = xs.iter().map(|&t| field.sigma_at(0, &[t])).collect();
            for a in 0..n {
                let x = [xs[a]];
                let jet = field.jet(&x);
                let c = field.conv_at(0, &x);
                for b in 0..n {
                    let u = offs[(a + n - b) % n];
                    for cc in 0..n {
                        let v = offs[(a + n - cc) % n];
                        tensor[(a * n + b) * n + cc] = bracket(&jet, 0, c, u, v, 1.0);
                    }
                }
            }
        }
        Ok(VanishingOracle {
            quad_n,
            tensor,
            weights,
            by_label: BTreeMap::new(),
            by_canon: BTreeMap::new(),
        })
    }

    pub fn quad_n(&self) -> usize {
        self.quad_n
    }

    /// Number of distinct patterns integrated so far.
    pub fn patterns_integrated(&self) -> usize {
        self.by_canon.len()
    }

    fn flat(i: &[u32], j: &[u32], k: &[u32]) -> Vec<u32> {
        let mut seq = Vec::with_capacity(3 * i.len());
        for l in 0..i.len() {
            seq.extend_from_slice(&[i[l], j[l], k[l]]);
        }
        seq
    }

    pub fn evaluate(&mut self, triple: &IndexTriple) -> Result<OracleValue> {
        self.evaluate_raw(&triple.i, &triple.j, &triple.k)
    }

    fn evaluate_raw(&mut self, i: &[u32], j: &[u32], k: &[u32]) -> Result<OracleValue> {
        let labels = relabel(&Self::flat(i, j, k));
        if let Some(v) = self.by_label.get(&labels) {
            return Ok(*v);
        }
        let canon = canonical(&labels);
        let v = match self.by_canon.get(&canon) {
            Some(v) => *v,
            None => {
                let v = self.contract(&canon)?;
                self.by_canon.insert(canon, v);
                v
            }
        };
        self.by_label.insert(labels, v);
        Ok(v)
    }

    fn contract(&self, labels: &[u8]) -> Result<OracleValue> {
        let vars = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
        let n = self.quad_n;
        let points = (n as u64).checked_pow(vars as u32).filter(|&p| p <= ORACLE_BUDGET).ok_or_else(|| {
            Error::Budget(format!("quadrature over {vars} variables at {n} nodes exceeds {ORACLE_BUDGET} points"))
        })?;
        let mut idx = vec![0usize; vars];
        let (mut value, mut scale) = (0.0, 0.0);
        for _ in 0..points {
            let w: f64 = idx.iter().map(|&a| self.weights[a]).product();
            let mut prod = 1.0;
            for f in labels.chunks_exact(3) {
                prod *= self.tensor[(idx[f[0] as usize] * n + idx[f[1] as usize]) * n + idx[f[2] as usize]];
            }
            value += w * prod;
            scale += w * prod.abs();
            for d in idx.iter_mut() {
                *d += 1;
                if *d < n {
                    break;
                }
                *d = 0;
            }
        }
        Ok(OracleValue {
            value,
            scale,
            vanishes: value.abs() <= ORACLE_REL_TOL * scale,
        })
    }
}

/// Whether the triple's integral vanishes to `10⁻⁶` relative to the integral
/// of the absolute integrand.
pub fn oracle_vanishes(triple: &IndexTriple, field: &PhiField, quad_n: usize) -> Result<bool> {
    Ok(VanishingOracle::new(field, quad_n)?.evaluate(triple)?.vanishes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoundnessReport {
    pub n: u32,
    pub m: u32,
    pub triples: u64,
    pub rejected: u64,
    /// Rejected triples whose integral does not vanish; nonzero means the
    /// rule transcription is unsound.
    pub rejected_nonvanishing: u64,
    /// Survivors whose integral vanishes anyway.
    pub survivors_vanishing: u64,
    /// Largest `|value|/scale` among rejected triples.
    pub max_rejected_ratio: f64,
    pub patterns: usize,
}

/// Compare `survives` with the oracle on every triple at `(n, m)`.
pub fn audit_counting_rule(oracle: &mut VanishingOracle, n: u32, m: u32) -> Result<SoundnessReport> {
    let triples = enumeration_size(n, m)?;
    let mut report = SoundnessReport {
        n,
        m,
        triples,
        rejected: 0,
        rejected_nonvanishing: 0,
        survivors_vanishing: 0,
        max_rejected_ratio: 0.0,
        patterns: 0,
    };
    let mut failure = None;
    for lead in 1..=n {
        for_each_with_lead(n, m, lead, |i, j, k| {
            if failure.is_some() {
                return;
            }
            let alive = survives_raw(i, j, k);
            match oracle.evaluate_raw(i, j, k) {
                Ok(v) => {
                    if alive {
                        report.survivors_vanishing += v.vanishes as u64;
                    } else {
                        report.rejected += 1;
                        report.rejected_nonvanishing += !v.vanishes as u64;
                        if v.scale > 0.0 {
                            report.max_rejected_ratio = report.max_rejected_ratio.max(v.value.abs() / v.scale);
                        }
                    }
                }
                Err(e) => failure = Some(e),
            }
        });
    }
    if let Some(e) = failure {
        return Err(e);
    }
    report.patterns = oracle.patterns_integrated();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{builtin_diffusion, builtin_drift};
    use crate::math::{cos, sin, PI};
    use proptest::prelude::*;

    fn trig_background(n: usize) -> DensityGrid {
        DensityGrid::from_fn(1, n, 0.0, |x| 1.0 + 0.3 * cos(2.0 * PI * x[0]) + 0.1 * sin(4.0 * PI * x[0])).unwrap()
    }

    fn trig_spec() -> KernelSpec {
        KernelSpec::new(
            builtin_drift("trig_drift", 1, &[0.3, 1.0]).unwrap(),
            builtin_diffusion("trig_sigma", 1, &[1.0, 0.25, 1.0]).unwrap(),
        )
        .unwrap()
    }

    fn field(kind: PhiKind) -> PhiField {
        PhiField::new(kind, &trig_spec(), &trig_background(64)).unwrap()
    }

    #[test]
    fn uniform_background_closed_form() {
        // σ = 1 + ¼ sin 2πx, ρ̄ ≡ 1: φ₂(0, 0, ¼) = ∂²_x[(1+¼ sin 2πx)(1−¼ cos 2πx)] at 0 = π².
        let spec = KernelSpec::new(
            builtin_drift("zero_drift", 1, &[]).unwrap(),
            builtin_diffusion("trig_sigma", 1, &[1.0, 0.25, 1.0]).unwrap(),
        )
        .unwrap();
        let f = PhiField::new(PhiKind::Phi2, &spec, &DensityGrid::uniform(1, 32).unwrap()).unwrap();
        let v = f.phi2(&[0.0], &[0.0], &[0.25]);
        assert!((v - PI * PI).abs() < 1e-10, "{v}");
        // second difference of the bracket
        let h = 1e-5;
        let g = |x: f64| (1.0 + 0.25 * sin(2.0 * PI * x)) * (1.0 + 0.25 * sin(2.0 * PI * (x - 0.25))) - 1.0;
        let fd = (g(h) - 2.0 * g(0.0) + g(-h)) / (h * h);
        assert!((fd - v).abs() < 1e-4);
    }

    #[test]
    fn constant_sigma_is_degenerate() {
        let spec = KernelSpec::new(
            builtin_drift("zero_drift", 1, &[]).unwrap(),
            builtin_diffusion("constant_sigma", 1, &[0.8]).unwrap(),
        )
        .unwrap();
        let f = PhiField::new(PhiKind::Phi2, &spec, &trig_background(32)).unwrap();
        assert_eq!(f.phi2(&[0.1], &[0.4], &[0.9]), 0.0);
        let r = cancellation_residuals(&f, 4, 32, 1).unwrap();
        assert_eq!(r.max_residual(), 0.0);
        let e = exp_moment_mc(&f, 0.01, 4, 1000, 3).unwrap();
        assert_eq!(e.mean, 1.0);
    }

    #[test]
    fn zeroth_group_matches_finite_differences() {
        // the x-derivative part of φ₂ equals ρ̄⁻¹ ∂²(ρ̄ F) summed over axes
        let f = field(PhiKind::Phi2);
        let (z, z2) = ([0.31], [0.77]);
        let rho_f = |x: f64| {
            let ax = &f.axes[0];
            let c = ax.conv.eval(&[x]);
            f.density.value(&[x])
                * (ax.sigma.eval(&[x - z[0]]) * ax.sigma.eval(&[x - z2[0]]) - c * c)
        };
        for &x in &[0.05, 0.42, 0.9] {
            let h = 1e-4;
            let fd = (rho_f(x + h) - 2.0 * rho_f(x) + rho_f(x - h)) / (h * h) / f.density.value(&[x]);
            let v = f.phi2(&[x], &z, &z2);
            assert!((fd - v).abs() < 1e-5 * (1.0 + v.abs()), "{fd} vs {v}");
        }
    }

    #[test]
    fn grouped_sum_matches_naive() {
        let f = field(PhiKind::Phi2);
        let mut r = rng::stream(5, Domain::Probe, 0, 0);
        for count in [2usize, 5, 11, 16] {
            let pts: Vec<f64> = (0..count).map(|_| rng::uniform(&mut r)).collect();
            let g = f.grouped_triple_sum(&pts);
            let n = f.naive_triple_sum(&pts);
            assert!((g - n).abs() < 1e-9 * (1.0 + n.abs()), "{g} vs {n}");
        }
    }

    #[test]
    fn grouped_sum_matches_naive_2d() {
        let spec = KernelSpec::new(
            builtin_drift("trig_drift", 2, &[0.2, 1.0, 0.1]).unwrap(),
            builtin_diffusion("trig_sigma", 2, &[1.0, 0.2, 1.0]).unwrap(),
        )
        .unwrap();
        let bg = DensityGrid::from_fn(2, 16, 0.0, |x| 1.0 + 0.2 * cos(2.0 * PI * x[0]) * sin(2.0 * PI * x[1])).unwrap();
        let f = PhiField::new(PhiKind::Phi2, &spec, &bg).unwrap();
        let pts = [0.1, 0.7, 0.35, 0.2, 0.9, 0.55, 0.05, 0.45];
        let (g, n) = (f.grouped_triple_sum(&pts), f.naive_triple_sum(&pts));
        assert!((g - n).abs() < 1e-9 * (1.0 + n.abs()));
        check_cancellations(&f, 4, 16, 2, 1e-8).unwrap();
    }

    #[test]
    fn cancellations_hold_at_roundoff() {
        for kind in [PhiKind::Phi2, PhiKind::Phi1] {
            let f = field(kind);
            let a = check_cancellations(&f, 8, 64, 11, 1e-8).unwrap();
            let b = check_cancellations(&f, 8, 128, 11, 1e-8).unwrap();
            assert!(a.max_residual() < 1e-11 && b.max_residual() < 1e-11, "{a:?} {b:?}");
        }
    }

    #[test]
    fn sampled_sup_respects_pointwise_bound() {
        let f = field(PhiKind::Phi2);
        let c = constants(&f, EtaMode::Certified).unwrap();
        assert!(c.sup_sampled <= c.b);
        assert!(c.m_p_sampled <= c.m_p_sup);
        assert!((c.m_p_sup - 1.0 / (12.0 * E * E)).abs() < 1e-15);
        assert!(matches!(
            constants(&f, EtaMode::Given(1.0)),
            Err(Error::ConstraintViolation { .. })
        ));
    }

    #[test]
    fn frozen_constants() {
        let (a, b, c) = alpha_beta_c(1.0 / (12.0 * E * E)).unwrap();
        assert!((b - 0.0625).abs() < 1e-15);
        assert!((a - 2.0 / (9.0 * E)).abs() < 1e-15);
        assert!((c - 4.978_031_556_402_79).abs() < 1e-9, "{c}");
    }

    #[test]
    fn constraint_names_the_failing_quantity() {
        // α crosses 1 at M = 1/√(32e³) ≈ 0.0394 before β does at 1/(3e²) ≈ 0.0451
        let Err(Error::ConstraintViolation { assumption, .. }) = alpha_beta_c(0.042) else { panic!() };
        assert_eq!(assumption, "alpha < 1");
        let Err(Error::ConstraintViolation { assumption, .. }) = alpha_beta_c(0.05) else { panic!() };
        assert_eq!(assumption, "alpha < 1 and beta < 1");
    }

    #[test]
    fn survives_examples() {
        let t = |i: [u32; 2], j: [u32; 2], k: [u32; 2]| IndexTriple::new(3, i.to_vec(), j.to_vec(), k.to_vec()).unwrap();
        assert!(survives(&t([1, 1], [1, 1], [1, 1])));
        assert!(survives(&t([1, 2], [1, 2], [1, 2])));
        // 2 and 3 only appear in the J, K slots; each slot has a partner
        assert!(survives(&t([1, 1], [2, 2], [3, 3])));
        assert!(!survives(&t([1, 2], [1, 1], [1, 1])));
        assert!(!survives(&t([1, 1], [2, 1], [3, 1])));
        assert_eq!(t([1, 3], [1, 1], [1, 1]).multiplicities(), vec![1, 0, 1]);
    }

    #[test]
    fn small_enumeration() {
        let r = enumerate_survivors(2, 1).unwrap();
        assert_eq!(r.triples, 64);
        assert!((r.stated_bound - 256.0 * E).abs() < 1e-9);
        assert!(r.identity_checks_passed);
        assert!(matches!(enumerate_survivors(22, 1), Err(Error::Budget(_))));
    }

    #[test]
    fn stars_and_bars() {
        assert_eq!(count_compositions(3, 2, 0), 6);
        assert_eq!(binomial(4, 2), 6);
        assert_eq!(count_compositions(2, 4, 2), 1);
        assert_eq!(binomial(-1, 1), 0);
        // a_1 + a_2 = 6, a_t ≥ 2: (2,4), (3,3), (4,2)
        assert_eq!(count_compositions(2, 6, 2), 3);
        assert_eq!(binomial(6 - 2 - 1, 1), 3);
        assert_eq!(binomial(6 - 4 - 1, 1), 1);
    }

    #[test]
    fn canonical_form_merges_symmetric_patterns() {
        let a = canonical(&relabel(&[1, 2, 3, 2, 1, 1]));
        let b = canonical(&relabel(&[2, 1, 1, 1, 3, 2]));
        assert_eq!(a, b);
    }

    #[test]
    fn oracle_matches_rules_small() {
        let f = field(PhiKind::Phi2);
        let mut o = VanishingOracle::new(&f, 32).unwrap();
        let r = audit_counting_rule(&mut o, 3, 1).unwrap();
        assert_eq!(r.rejected_nonvanishing, 0, "{r:?}");
        let all_equal = IndexTriple::new(3, vec![1, 1], vec![1, 1], vec![1, 1]).unwrap();
        assert!(!oracle_vanishes(&all_equal, &f, 32).unwrap());
    }

    #[test]
    fn quadrature_agrees_with_mc_at_two_particles() {
        let f = field(PhiKind::Phi2);
        let c = constants(&f, EtaMode::Certified).unwrap();
        let q = tensor_quadrature_n2(&f, c.eta, 64).unwrap();
        let e = exp_moment_mc(&f, c.eta, 2, 4000, 9).unwrap();
        assert!((e.mean - q).abs() <= 3.0 * e.std_err + 1e-12, "{e:?} vs {q}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn constants_admissible_and_monotone(a in 1e-6f64..0.9999, b in 1e-6f64..0.9999) {
            let top = 1.0 / (6.0 * E * E);
            let (lo, hi) = if a < b { (a * top, b * top) } else { (b * top, a * top) };
            let (al, bl, cl) = alpha_beta_c(lo).unwrap();
            let (ah, bh, ch) = alpha_beta_c(hi).unwrap();
            prop_assert!(al < 1.0 && bl < 1.0 && ah < 1.0 && bh < 1.0);
            prop_assert!(cl.is_finite() && ch.is_finite());
            prop_assert!(cl <= ch);
            prop_assert!((cl - 2.0 * (1.0 + 4.0 * al / (1.0 - al).powi(3) + 1.0 / (1.0 - bl))).abs() < 1e-12);
        }

        #[test]
        fn survivors_have_no_isolated_leading_index(seq in proptest::collection::vec(1u32..=4, 12)) {
            let t = IndexTriple::new(4, seq[..4].to_vec(), seq[4..8].to_vec(), seq[8..].to_vec()).unwrap();
            if survives(&t) {
                for (l, v) in t.i().iter().enumerate() {
                    let others = t.i().iter().enumerate().filter(|(p, _)| *p != l).any(|(_, x)| x == v)
                        || t.j().contains(v) || t.k().contains(v);
                    prop_assert!(others);
                }
            }
        }
    }
}
