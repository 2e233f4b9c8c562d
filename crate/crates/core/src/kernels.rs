//! Interaction kernels `K` (drift) and `σ` (diagonal diffusion) as closed-form
//! trigonometric families.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{round, sqrt, PI};
use crate::series::TrigSeries;

pub const DRIFT_FAMILIES: &[&str] = &["zero_drift", "trig_drift"];
pub const DIFFUSION_FAMILIES: &[&str] = &["constant_sigma", "trig_sigma"];

/// Sup-norm data entering the chaos constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormData {
    /// `sup |K(x)|` (Euclidean norm of the vector field).
    pub drift_sup: f64,
    /// `sup |g(x)|`, an upper bound for the `Ẇ^{-1,∞}` norm of `div K`.
    pub potential_sup: f64,
    /// `sup |σ_αα|` over all α.
    pub sigma_sup: f64,
    /// max of the sup-norms of σ, all its first and all its second partials.
    pub sigma_w2inf: f64,
    pub grid_pts: usize,
}

/// Drift half of a kernel pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftKernel {
    pub name: String,
    pub params: Vec<f64>,
    pub components: Vec<TrigSeries>,
    pub potential: Vec<TrigSeries>,
    pub support_radius: Option<f64>,
}

/// Diffusion half of a kernel pair: the diagonal entries `σ_αα`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionKernel {
    pub name: String,
    pub params: Vec<f64>,
    pub entries: Vec<TrigSeries>,
    pub floor: f64,
    pub support_radius: Option<f64>,
}

/// The model: the pair `(K, σ)` with derivatives, potential and norm data.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    dim: usize,
    drift: DriftKernel,
    diffusion: DiffusionKernel,
    divergence: TrigSeries,
    /// `∂_α σ_αα`
    diffusion_d1: Vec<TrigSeries>,
    /// `∂²_α σ_αα`
    diffusion_d2: Vec<TrigSeries>,
    norms: NormData,
}

fn integer_mode(v: f64, what: &str) -> Result<i32> {
    if !(v.is_finite() && v >= 1.0 && (v - round(v)).abs() < 1e-12 && v < 1e6) {
        return Err(Error::invalid(format!("{what} must be a positive integer, got {v}")));
    }
    Ok(round(v) as i32)
}

fn axis_wave(dim: usize, axis: usize, mode: i32) -> Vec<i32> {
    let mut w = vec![0; dim];
    w[axis] = mode;
    w
}

fn check_finite(params: &[f64]) -> Result<()> {
    if let Some(p) = params.iter().find(|p| !p.is_finite()) {
        return Err(Error::invalid(format!("non-finite kernel parameter {p}")));
    }
    Ok(())
}

/// Build a drift family by name.
///
/// * `zero_drift`: `[]`
/// * `trig_drift`: `[amp, mode]` or, for `d ≥ 2`, `[amp, mode, swirl]`;
///   `K_α = amp·sin(2π·mode·x_α)` plus the divergence-free swirl
///   `swirl·(sin 2πx_2, sin 2πx_1, 0, …)`.
pub fn builtin_drift(name: &str, dim: usize, params: &[f64]) -> Result<DriftKernel> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    check_finite(params)?;
    match name {
        "zero_drift" => {
            if !params.is_empty() {
                return Err(Error::invalid("zero_drift takes no parameters"));
            }
            let z = vec![TrigSeries::zero(dim); dim];
            Ok(DriftKernel {
                name: name.to_string(),
                params: Vec::new(),
                components: z.clone(),
                potential: z,
                support_radius: None,
            })
        }
        "trig_drift" => {
            let (amp, mode, swirl) = match *params {
                [a, m] => (a, m, 0.0),
                [a, m, s] if dim >= 2 => (a, m, s),
                [_, _, _] => {
                    return Err(Error::invalid("trig_drift swirl needs dimension >= 2"))
                }
                _ => return Err(Error::invalid("trig_drift expects [amp, mode] or [amp, mode, swirl]")),
            };
            let mode = integer_mode(mode, "trig_drift mode")?;
            let potential: Vec<TrigSeries> = (0..dim)
                .map(|a| TrigSeries::zero(dim).with_term(axis_wave(dim, a, mode), amp, 0.0))
                .collect();
            let mut components = potential.clone();
            if swirl != 0.0 {
                components[0] = components[0]
                    .clone()
                    .with_term(axis_wave(dim, 1, 1), swirl, 0.0);
                components[1] = components[1]
                    .clone()
                    .with_term(axis_wave(dim, 0, 1), swirl, 0.0);
            }
            Ok(DriftKernel {
                name: name.to_string(),
                params: params.to_vec(),
                components,
                potential,
                support_radius: None,
            })
        }
        other => Err(Error::UnknownKernel(other.to_string())),
    }
}

/// Build a diffusion family by name.
///
/// * `constant_sigma`: `[c]` or `[c, floor]`, floor defaults to `c/2`.
/// * `trig_sigma`: `[base, amp, mode]` or `[base, amp, mode, floor]`;
///   `σ_αα = base + amp·sin(2π·mode·x_α)`, floor defaults to `base/2`.
pub fn builtin_diffusion(name: &str, dim: usize, params: &[f64]) -> Result<DiffusionKernel> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    check_finite(params)?;
    let violation = |detail: String| Error::ConstraintViolation {
        assumption: "uniform ellipticity (sigma > sigma_floor > 0)",
        detail,
    };
    match name {
        "constant_sigma" => {
            let (c, floor) = match *params {
                [c] => (c, c / 2.0),
                [c, f] => (c, f),
                _ => return Err(Error::invalid("constant_sigma expects [c] or [c, floor]")),
            };
            if !(floor > 0.0 && c > floor) {
                return Err(violation(format!("need 0 < floor < c, got c = {c}, floor = {floor}")));
            }
            Ok(DiffusionKernel {
                name: name.to_string(),
                params: params.to_vec(),
                entries: vec![TrigSeries::constant(dim, c); dim],
                floor,
                support_radius: None,
            })
        }
        "trig_sigma" => {
            let (base, amp, mode, floor) = match *params {
                [b, a, m] => (b, a, m, b / 2.0),
                [b, a, m, f] => (b, a, m, f),
                _ => {
                    return Err(Error::invalid(
                        "trig_sigma expects [base, amp, mode] or [base, amp, mode, floor]",
                    ))
                }
            };
            let mode = integer_mode(mode, "trig_sigma mode")?;
            if !(floor > 0.0 && base - amp.abs() > floor) {
                return Err(violation(format!(
                    "min sigma = base - |amp| = {} must exceed floor = {floor} > 0",
                    base - amp.abs()
                )));
            }
            Ok(DiffusionKernel {
                name: name.to_string(),
                params: params.to_vec(),
                entries: (0..dim)
                    .map(|a| TrigSeries::constant(dim, base).with_term(axis_wave(dim, a, mode), amp, 0.0))
                    .collect(),
                floor,
                support_radius: None,
            })
        }
        other => Err(Error::UnknownKernel(other.to_string())),
    }
}

/// Build a kernel pair from a single family name; the other half takes its
/// default (`zero_drift` or `constant_sigma(1)`).
pub fn builtin_kernel(name: &str, dim: usize, params: &[f64]) -> Result<KernelSpec> {
    if DRIFT_FAMILIES.contains(&name) {
        KernelSpec::new(builtin_drift(name, dim, params)?, builtin_diffusion("constant_sigma", dim, &[1.0])?)
    } else if DIFFUSION_FAMILIES.contains(&name) {
        KernelSpec::new(builtin_drift("zero_drift", dim, &[])?, builtin_diffusion(name, dim, params)?)
    } else {
        Err(Error::UnknownKernel(name.to_string()))
    }
}

fn default_audit_pts(dim: usize) -> usize {
    match dim {
        1 => 256,
        2 => 64,
        _ => 16,
    }
}

/// Visit every node `j/n` of the uniform grid on `T^dim`.
pub(crate) fn for_each_node<F: FnMut(&[f64])>(dim: usize, n: usize, mut f: F) {
    let mut idx = vec![0usize; dim];
    let mut x = vec![0.0; dim];
    let total = n.pow(dim as u32);
    for _ in 0..total {
        for a in 0..dim {
            x[a] = idx[a] as f64 / n as f64;
        }
        f(&x);
        for a in 0..dim {
            idx[a] += 1;
            if idx[a] < n {
                break;
            }
            idx[a] = 0;
        }
    }
}

impl KernelSpec {
    /// Combine the two halves, checking both assumptions and auditing norms.
    pub fn new(drift: DriftKernel, diffusion: DiffusionKernel) -> Result<Self> {
        let dim = drift.components.len();
        if diffusion.entries.len() != dim {
            return Err(Error::invalid(format!(
                "drift dimension {dim} differs from diffusion dimension {}",
                diffusion.entries.len()
            )));
        }
        let mut divergence = TrigSeries::zero(dim);
        for (a, c) in drift.components.iter().enumerate() {
            divergence = divergence.add(&c.derivative(a));
        }
        let diffusion_d1: Vec<TrigSeries> = diffusion
            .entries
            .iter()
            .enumerate()
            .map(|(a, s)| s.derivative(a))
            .collect();
        let diffusion_d2 = diffusion_d1
            .iter()
            .enumerate()
            .map(|(a, s)| s.derivative(a))
            .collect();
        let mut spec = KernelSpec {
            dim,
            drift,
            diffusion,
            divergence,
            diffusion_d1,
            diffusion_d2,
            norms: NormData {
                drift_sup: 0.0,
                potential_sup: 0.0,
                sigma_sup: 0.0,
                sigma_w2inf: 0.0,
                grid_pts: 0,
            },
        };
        let pts = default_audit_pts(dim);
        spec.check_floor(pts)?;
        spec.check_divergence_mean(pts)?;
        spec.norms = norm_audit(&spec, pts)?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `drift_name+diffusion_name`, used in file headers.
    pub fn label(&self) -> String {
        format!("{}+{}", self.drift.name, self.diffusion.name)
    }

    pub fn drift_kernel(&self) -> &DriftKernel {
        &self.drift
    }

    pub fn diffusion_kernel(&self) -> &DiffusionKernel {
        &self.diffusion
    }

    pub fn drift(&self) -> &[TrigSeries] {
        &self.drift.components
    }

    pub fn divergence(&self) -> &TrigSeries {
        &self.divergence
    }

    pub fn potential(&self) -> &[TrigSeries] {
        &self.drift.potential
    }

    pub fn diffusion(&self) -> &[TrigSeries] {
        &self.diffusion.entries
    }

    pub fn diffusion_d1(&self) -> &[TrigSeries] {
        &self.diffusion_d1
    }

    pub fn diffusion_d2(&self) -> &[TrigSeries] {
        &self.diffusion_d2
    }

    pub fn sigma_floor(&self) -> f64 {
        self.diffusion.floor
    }

    pub fn norms(&self) -> &NormData {
        &self.norms
    }

    /// Compact support radius shared by both kernels, if declared.
    pub fn support_radius(&self) -> Option<f64> {
        match (self.drift.support_radius, self.diffusion.support_radius) {
            (Some(a), Some(b)) => Some(a.max(b)),
            _ => None,
        }
    }

    /// True when σ does not depend on position.
    pub fn sigma_is_constant(&self) -> bool {
        self.diffusion.entries.iter().all(|s| s.is_constant())
    }

    /// Largest wave component of any kernel term.
    pub fn bandwidth(&self) -> u32 {
        self.drift
            .components
            .iter()
            .chain(&self.diffusion.entries)
            .map(|s| s.bandwidth())
            .max()
            .unwrap_or(0)
    }

    pub fn eval_drift(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.drift.components) {
            *o = c.eval(x);
        }
    }

    pub fn eval_diffusion(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.diffusion.entries) {
            *o = c.eval(x);
        }
    }

    fn check_floor(&self, pts: usize) -> Result<()> {
        let floor = self.diffusion.floor;
        let mut worst: Option<(f64, usize)> = None;
        for_each_node(self.dim, pts, |x| {
            for (a, s) in self.diffusion.entries.iter().enumerate() {
                let v = s.eval(x);
                if v <= floor && worst.is_none_or(|(w, _)| v < w) {
                    worst = Some((v, a));
                }
            }
        });
        match worst {
            Some((v, a)) => Err(Error::ConstraintViolation {
                assumption: "uniform ellipticity (sigma > sigma_floor > 0)",
                detail: format!("sigma_{a}{a} reaches {v} <= floor {floor}"),
            }),
            None => Ok(()),
        }
    }

    fn check_divergence_mean(&self, pts: usize) -> Result<()> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for_each_node(self.dim, pts, |x| {
            sum += self.divergence.eval(x);
            count += 1;
        });
        let mean = sum / count as f64;
        let scale = 1.0 + self.divergence.terms.iter().map(|t| t.sin.abs() + t.cos.abs()).sum::<f64>();
        if mean.abs() > 1e-10 * scale {
            return Err(Error::ConstraintViolation {
                assumption: "bounded drift (div K has zero mean)",
                detail: format!("mean of div K is {mean:e}"),
            });
        }
        Ok(())
    }

    /// Compare declared derivatives with fourth-order central differences at
    /// step `h = 1/grid_pts`. Returns the largest discrepancy of each check:
    /// `[∂σ, ∂²σ, div K, div g − div K]`.
    pub fn finite_difference_errors(&self, grid_pts: usize) -> Result<[f64; 4]> {
        if grid_pts < 16 {
            return Err(Error::invalid("grid_pts must be at least 16"));
        }
        let h = 1.0 / grid_pts as f64;
        let d = self.dim;
        let mut err = [0.0f64; 4];
        let mut y = vec![0.0; d];
        let shifted = |s: &TrigSeries, x: &[f64], a: usize, off: f64, y: &mut Vec<f64>| {
            y.copy_from_slice(x);
            y[a] += off;
            s.eval(y)
        };
        let d1 = |s: &TrigSeries, x: &[f64], a: usize, y: &mut Vec<f64>| {
            (-shifted(s, x, a, 2.0 * h, y) + 8.0 * shifted(s, x, a, h, y) - 8.0 * shifted(s, x, a, -h, y)
                + shifted(s, x, a, -2.0 * h, y))
                / (12.0 * h)
        };
        let d2 = |s: &TrigSeries, x: &[f64], a: usize, y: &mut Vec<f64>| {
            (-shifted(s, x, a, 2.0 * h, y) + 16.0 * shifted(s, x, a, h, y) - 30.0 * s.eval(x)
                + 16.0 * shifted(s, x, a, -h, y)
                - shifted(s, x, a, -2.0 * h, y))
                / (12.0 * h * h)
        };
        for_each_node(d, grid_pts, |x| {
            let mut div_fd = 0.0;
            let mut div_g = 0.0;
            for a in 0..d {
                let s = &self.diffusion.entries[a];
                err[0] = err[0].max((d1(s, x, a, &mut y) - self.diffusion_d1[a].eval(x)).abs());
                err[1] = err[1].max((d2(s, x, a, &mut y) - self.diffusion_d2[a].eval(x)).abs());
                div_fd += d1(&self.drift.components[a], x, a, &mut y);
                div_g += d1(&self.drift.potential[a], x, a, &mut y);
            }
            let div = self.divergence.eval(x);
            err[2] = err[2].max((div_fd - div).abs());
            err[3] = err[3].max((div_g - div).abs());
        });
        Ok(err)
    }
}

/// Dense-sampling sup norms on a uniform grid with `grid_pts` nodes per axis.
pub fn norm_audit(spec: &KernelSpec, grid_pts: usize) -> Result<NormData> {
    if grid_pts < 16 {
        return Err(Error::invalid("grid_pts must be at least 16"));
    }
    let d = spec.dim;
    let first: Vec<Vec<TrigSeries>> = spec
        .diffusion
        .entries
        .iter()
        .map(|s| (0..d).map(|b| s.derivative(b)).collect())
        .collect();
    let second: Vec<Vec<TrigSeries>> = first
        .iter()
        .map(|row| {
            row.iter()
                .flat_map(|s| (0..d).map(|c| s.derivative(c)).collect::<Vec<_>>())
                .collect()
        })
        .collect();
    let mut nd = NormData {
        drift_sup: 0.0,
        potential_sup: 0.0,
        sigma_sup: 0.0,
        sigma_w2inf: 0.0,
        grid_pts,
    };
    let mut s0 = 0.0f64;
    let mut s1 = 0.0f64;
    let mut s2 = 0.0f64;
    for_each_node(d, grid_pts, |x| {
        let k2: f64 = spec.drift.components.iter().map(|c| c.eval(x).powi(2)).sum();
        let g2: f64 = spec.drift.potential.iter().map(|c| c.eval(x).powi(2)).sum();
        nd.drift_sup = nd.drift_sup.max(sqrt(k2));
        nd.potential_sup = nd.potential_sup.max(sqrt(g2));
        for a in 0..d {
            s0 = s0.max(spec.diffusion.entries[a].eval(x).abs());
            for s in &first[a] {
                s1 = s1.max(s.eval(x).abs());
            }
            for s in &second[a] {
                s2 = s2.max(s.eval(x).abs());
            }
        }
    });
    nd.sigma_sup = s0;
    nd.sigma_w2inf = s0.max(s1).max(s2);
    Ok(nd)
}

/// Closed-form `‖σ‖_{W^{2,∞}}` of `trig_sigma(base, amp, mode)`.
pub fn trig_sigma_w2inf(base: f64, amp: f64, mode: f64) -> f64 {
    let w = 2.0 * PI * mode;
    (base + amp.abs()).max(amp.abs() * w).max(amp.abs() * w * w)
}
