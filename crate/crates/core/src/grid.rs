//! Periodic uniform-grid densities and their band-limited (trigonometric
//! interpolant) continuation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;
use rand_core::RngCore;

use crate::error::{Error, Result};
use crate::fft::{wavenumber, Fft};
use crate::math::{sin_cos, sqrt, TAU};
use crate::rng::uniform;
use crate::torus::wrap_coord;

/// A density sampled at the nodes `j/n` of `T^d`, `d ∈ {1, 2}`, row-major with
/// axis 0 varying slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    dim: usize,
    n: usize,
    values: Vec<f64>,
    time: f64,
}

/// Sup-norm quantities of a density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupNorms {
    pub inf: f64,
    pub sup: f64,
    /// `max_α sup |∂_α ρ|`
    pub grad: f64,
    /// `max_{α,β} sup |∂_α ∂_β ρ|`
    pub hess: f64,
}

/// Per-axis fan-out of an FFT bin to signed wave numbers, splitting the
/// Nyquist bin symmetrically.
fn signed_targets(idx: usize, n: usize) -> ([(i64, f64); 2], usize) {
    if n > 1 && idx == n / 2 {
        ([((n / 2) as i64, 0.5), (-((n / 2) as i64), 0.5)], 2)
    } else {
        ([(wavenumber(idx, n), 1.0), (0, 0.0)], 1)
    }
}

impl DensityGrid {
    pub fn new(dim: usize, n: usize, values: Vec<f64>, time: f64) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::invalid(format!("grids support d = 1 or 2, got {dim}")));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::invalid(format!("nodes per axis must be a power of two >= 4, got {n}")));
        }
        if values.len() != n.pow(dim as u32) {
            return Err(Error::invalid(format!(
                "expected {} values, got {}",
                n.pow(dim as u32),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDensity("non-finite node value".into()));
        }
        Ok(DensityGrid { dim, n, values, time })
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(dim: usize, n: usize, time: f64, f: F) -> Result<Self> {
        let total = n.checked_pow(dim as u32).unwrap_or(0);
        let mut values = Vec::with_capacity(total);
        let mut x = [0.0; 2];
        for idx in 0..total {
            Self::node_coords_into(dim, n, idx, &mut x);
            values.push(f(&x[..dim]));
        }
        Self::new(dim, n, values, time)
    }

    pub fn uniform(dim: usize, n: usize) -> Result<Self> {
        Self::from_fn(dim, n, 0.0, |_| 1.0)
    }

    /// `1 + Σ a_m cos(2π k_m·x)`; requires `Σ|a_m| < 1` so the result is
    /// bounded below by a positive constant.
    pub fn cosine_family(dim: usize, n: usize, modes: &[(Vec<i32>, f64)]) -> Result<Self> {
        let total: f64 = modes.iter().map(|(_, a)| a.abs()).sum();
        if total >= 1.0 {
            return Err(Error::InvalidDensity(format!(
                "sum of |a_m| = {total} must be < 1 for a positive initial density"
            )));
        }
        for (w, _) in modes {
            if w.len() != dim || w.iter().all(|&k| k == 0) {
                return Err(Error::invalid(format!("bad wave vector {w:?} for d = {dim}")));
            }
            if w.iter().any(|k| k.unsigned_abs() as usize >= n / 2) {
                return Err(Error::invalid(format!("wave vector {w:?} not resolved by n = {n}")));
            }
        }
        Self::from_fn(dim, n, 0.0, |x| {
            let mut v = 1.0;
            for (w, a) in modes {
                let th: f64 = w.iter().zip(x).map(|(k, xi)| *k as f64 * xi).sum();
                v += a * libm::cos(TAU * th);
            }
            v
        })
    }

    #[inline]
    fn node_coords_into(dim: usize, n: usize, idx: usize, out: &mut [f64; 2]) {
        if dim == 1 {
            out[0] = idx as f64 / n as f64;
        } else {
            out[0] = (idx / n) as f64 / n as f64;
            out[1] = (idx % n) as f64 / n as f64;
        }
    }

    pub fn node_coords(&self, idx: usize) -> Vec<f64> {
        let mut x = [0.0; 2];
        Self::node_coords_into(self.dim, self.n, idx, &mut x);
        x[..self.dim].to_vec()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time = t;
        self
    }

    /// Cell volume `h^d`.
    pub fn cell_volume(&self) -> f64 {
        1.0 / self.values.len() as f64
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Probability-density check: nonnegative nodes and unit mass within `tol`.
    pub fn check_density(&self, tol: f64) -> Result<()> {
        let min = self.min();
        if min < 0.0 {
            return Err(Error::InvalidDensity(format!("negative node value {min}")));
        }
        let m = self.mass();
        if m <= 0.0 {
            return Err(Error::InvalidDensity("zero total mass".into()));
        }
        if (m - 1.0).abs() > tol {
            return Err(Error::InvalidDensity(format!("mass {m} differs from 1 by more than {tol:e}")));
        }
        Ok(())
    }

    /// `sqrt(∫ (self - other)^2)` by the periodic trapezoid rule.
    pub fn l2_distance(&self, other: &DensityGrid) -> Result<f64> {
        self.same_shape(other)?;
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(sqrt(s * self.cell_volume()))
    }

    pub fn max_abs_diff(&self, other: &DensityGrid) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    fn same_shape(&self, other: &DensityGrid) -> Result<()> {
        if self.dim != other.dim || self.n != other.n {
            return Err(Error::invalid("grid size mismatch"));
        }
        Ok(())
    }

    /// Normalised DFT `ĉ(k) ≈ ∫ ρ e^{-2πik·x}` in FFT bin order.
    pub fn spectrum(&self) -> Vec<Complex64> {
        let fft = Fft::new(self.n).expect("power of two");
        let mut buf: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.forward_nd(&mut buf, self.dim);
        let s = self.cell_volume();
        for c in &mut buf {
            *c *= s;
        }
        buf
    }

    fn bin_index(&self, flat: usize) -> (usize, usize) {
        if self.dim == 1 {
            (flat, 0)
        } else {
            (flat / self.n, flat % self.n)
        }
    }

    /// Spectral partial derivative `∂^{orders} ρ` at the nodes; `orders[α]` is
    /// the differentiation order along axis α.
    pub fn derivative(&self, orders: &[u32]) -> Vec<f64> {
        let n = self.n;
        let fft = Fft::new(n).expect("power of two");
        let mut spec: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.forward_nd(&mut spec, self.dim);
        for (flat, c) in spec.iter_mut().enumerate() {
            let (i0, i1) = self.bin_index(flat);
            let mut mult = Complex64::new(1.0, 0.0);
            for (axis, &ord) in orders.iter().enumerate().take(self.dim) {
                let idx = if axis == 0 { i0 } else { i1 };
                if ord == 0 {
                    continue;
                }
                if ord % 2 == 1 && idx == n / 2 {
                    mult = Complex64::new(0.0, 0.0);
                    break;
                }
                let ik = Complex64::new(0.0, TAU * wavenumber(idx, n) as f64);
                mult *= ik.powu(ord);
            }
            *c *= mult;
        }
        fft.inverse_nd(&mut spec, self.dim);
        spec.into_iter().map(|c| c.re).collect()
    }

    /// Node values of the trigonometric interpolant on a grid `factor` times finer.
    fn upsampled(&self, factor: usize, orders: &[u32]) -> Vec<f64> {
        let n = self.n;
        let m = n * factor;
        let spec = self.spectrum();
        let total = m.pow(self.dim as u32);
        let mut up = vec![Complex64::new(0.0, 0.0); total];
        for (flat, &c) in spec.iter().enumerate() {
            let (i0, i1) = self.bin_index(flat);
            let (t0, n0) = signed_targets(i0, n);
            let (t1, n1) = if self.dim == 2 { signed_targets(i1, n) } else { ([(0, 1.0), (0, 0.0)], 1) };
            for &(k0, w0) in &t0[..n0] {
                for &(k1, w1) in &t1[..n1] {
                    let mut mult = Complex64::new(w0 * w1, 0.0);
                    for (axis, &ord) in orders.iter().enumerate().take(self.dim) {
                        let k = if axis == 0 { k0 } else { k1 };
                        mult *= Complex64::new(0.0, TAU * k as f64).powu(ord);
                    }
                    let j0 = k0.rem_euclid(m as i64) as usize;
                    let j1 = k1.rem_euclid(m as i64) as usize;
                    let dst = if self.dim == 1 { j0 } else { j0 * m + j1 };
                    up[dst] += c * mult;
                }
            }
        }
        // up holds coefficients of Σ c_k e^{2πik·x}; evaluate at the fine nodes
        let fft = Fft::new(m).expect("power of two");
        fft.inverse_nd(&mut up, self.dim);
        up.into_iter().map(|c| c.re * total as f64).collect()
    }

    /// Sup norms of ρ, ∇ρ and ∇²ρ evaluated on the `factor`-times upsampled
    /// trigonometric interpolant.
    pub fn sup_norms(&self, factor: usize) -> SupNorms {
        let abs_max = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let vals = self.upsampled(factor, &[0, 0]);
        let inf = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let sup = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (grad, hess) = if self.dim == 1 {
            (abs_max(&self.upsampled(factor, &[1])), abs_max(&self.upsampled(factor, &[2])))
        } else {
            let g = abs_max(&self.upsampled(factor, &[1, 0])).max(abs_max(&self.upsampled(factor, &[0, 1])));
            let h = abs_max(&self.upsampled(factor, &[2, 0]))
                .max(abs_max(&self.upsampled(factor, &[1, 1])))
                .max(abs_max(&self.upsampled(factor, &[0, 2])));
            (g, h)
        };
        SupNorms { inf, sup, grad, hess }
    }

    /// Squared `L²` norms of `ρ`, `∇ρ` and `∇²ρ` by Parseval.
    pub fn sobolev_energies(&self) -> [f64; 3] {
        let spec = self.spectrum();
        let mut e = [0.0; 3];
        for (flat, c) in spec.iter().enumerate() {
            let (i0, i1) = self.bin_index(flat);
            let k0 = wavenumber(i0, self.n) as f64;
            let k1 = if self.dim == 2 { wavenumber(i1, self.n) as f64 } else { 0.0 };
            let k2 = TAU * TAU * (k0 * k0 + k1 * k1);
            let a = c.norm_sqr();
            e[0] += a;
            e[1] += k2 * a;
            e[2] += k2 * k2 * a;
        }
        e
    }

    /// Spectral low-pass keeping modes with `max_α |k_α| ≤ cutoff`.
    pub fn low_pass(&self, cutoff: usize) -> DensityGrid {
        let fft = Fft::new(self.n).expect("power of two");
        let mut spec: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.forward_nd(&mut spec, self.dim);
        for (flat, c) in spec.iter_mut().enumerate() {
            let (i0, i1) = self.bin_index(flat);
            let k0 = wavenumber(i0, self.n).unsigned_abs() as usize;
            let k1 = if self.dim == 2 { wavenumber(i1, self.n).unsigned_abs() as usize } else { 0 };
            if k0.max(k1) > cutoff {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        fft.inverse_nd(&mut spec, self.dim);
        DensityGrid {
            dim: self.dim,
            n: self.n,
            values: spec.into_iter().map(|c| c.re).collect(),
            time: self.time,
        }
    }

    /// The trigonometric interpolant of the node values.
    pub fn spectral_field(&self) -> SpectralField {
        SpectralField::from_spectrum(self.dim, self.n, &self.spectrum())
    }

    /// Exact integrals of the trigonometric interpolant over the `bins^d`
    /// cells `[b/B, (b+1)/B)`, row-major.
    pub fn cell_masses(&self, bins: usize) -> Result<Vec<f64>> {
        if bins == 0 {
            return Err(Error::invalid("bins must be positive"));
        }
        Ok(self.spectral_field().cell_masses(bins))
    }

    /// Draw `count` i.i.d. points from the piecewise-constant law in which
    /// node `j` carries mass `ρ_j h^d` spread uniformly over the cell centred
    /// at `j/n`. Inverse CDF for `d = 1`, rejection for `d = 2`.
    pub fn sample_cells<R: RngCore>(&self, rng: &mut R, count: usize, out: &mut Vec<f64>) -> Result<()> {
        let total: f64 = self.values.iter().sum();
        if self.min() < 0.0 || total <= 0.0 {
            return Err(Error::InvalidDensity("density must be nonnegative with positive mass".into()));
        }
        let h = 1.0 / self.n as f64;
        if self.dim == 1 {
            let mut cdf = Vec::with_capacity(self.values.len());
            let mut acc = 0.0;
            for &v in &self.values {
                acc += v;
                cdf.push(acc / total);
            }
            for _ in 0..count {
                let u = uniform(rng);
                let j = cdf.partition_point(|&c| c <= u).min(self.values.len() - 1);
                let x = (j as f64 - 0.5 + uniform(rng)) * h;
                out.push(wrap_coord(x));
            }
        } else {
            let vmax = self.max();
            let n = self.n;
            let mut drawn = 0;
            while drawn < count {
                let x0 = uniform(rng);
                let x1 = uniform(rng);
                let j0 = ((x0 * n as f64 + 0.5) as usize) % n;
                let j1 = ((x1 * n as f64 + 0.5) as usize) % n;
                if uniform(rng) * vmax < self.values[j0 * n + j1] {
                    out.push(x0);
                    out.push(x1);
                    drawn += 1;
                }
            }
        }
        Ok(())
    }
}

/// `Σ_k c_k e^{2πi k·x}` over a finite, conjugate-symmetric set of modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    dim: usize,
    waves: Vec<[i64; 2]>,
    coeffs: Vec<Complex64>,
}

/// Integral of `e^{2πikx}` over `[lo, hi]`.
#[inline]
fn mode_integral(k: i64, lo: f64, hi: f64) -> Complex64 {
    if k == 0 {
        Complex64::new(hi - lo, 0.0)
    } else {
        let w = TAU * k as f64;
        let (sh, ch) = sin_cos(w * hi);
        let (sl, cl) = sin_cos(w * lo);
        // (e^{iwh} - e^{iwl}) / (iw)
        Complex64::new(sh - sl, -(ch - cl)) / w
    }
}

impl SpectralField {
    /// Build from a normalised spectrum in FFT bin order; modes below
    /// `1e-15·|ĉ(0)|` are dropped.
    pub fn from_spectrum(dim: usize, n: usize, spec: &[Complex64]) -> Self {
        let cut = 1e-15 * spec[0].norm().max(f64::MIN_POSITIVE);
        let mut waves = Vec::new();
        let mut coeffs = Vec::new();
        for (flat, &c) in spec.iter().enumerate() {
            if c.norm() <= cut && flat != 0 {
                continue;
            }
            let (i0, i1) = if dim == 1 { (flat, 0) } else { (flat / n, flat % n) };
            let (t0, n0) = signed_targets(i0, n);
            let (t1, n1) = if dim == 2 { signed_targets(i1, n) } else { ([(0, 1.0), (0, 0.0)], 1) };
            for &(k0, w0) in &t0[..n0] {
                for &(k1, w1) in &t1[..n1] {
                    waves.push([k0, k1]);
                    coeffs.push(c * (w0 * w1));
                }
            }
        }
        SpectralField { dim, waves, coeffs }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode_count(&self) -> usize {
        self.waves.len()
    }

    /// Coefficient of `e^{2πik·x}` (zero when absent).
    pub fn coeff(&self, k: &[i32]) -> Complex64 {
        let k0 = k[0] as i64;
        let k1 = if self.dim == 2 { k[1] as i64 } else { 0 };
        self.waves
            .iter()
            .zip(&self.coeffs)
            .filter(|(w, _)| w[0] == k0 && w[1] == k1)
            .map(|(_, c)| *c)
            .sum()
    }

    /// `Σ |c_k|`, a certified upper bound for the field.
    pub fn abs_sum(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).sum()
    }

    #[inline]
    fn eval_orders(&self, x: &[f64], o0: u32, o1: u32) -> f64 {
        let mut v = 0.0;
        let x1 = if self.dim == 2 { x[1] } else { 0.0 };
        for (w, c) in self.waves.iter().zip(&self.coeffs) {
            let (s, co) = sin_cos(TAU * (w[0] as f64 * x[0] + w[1] as f64 * x1));
            let mut term = *c * Complex64::new(co, s);
            if o0 > 0 {
                term *= Complex64::new(0.0, TAU * w[0] as f64).powu(o0);
            }
            if o1 > 0 {
                term *= Complex64::new(0.0, TAU * w[1] as f64).powu(o1);
            }
            v += term.re;
        }
        v
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.eval_orders(x, 0, 0)
    }

    /// `∂_axis` of the field.
    pub fn d1(&self, x: &[f64], axis: usize) -> f64 {
        if axis == 0 {
            self.eval_orders(x, 1, 0)
        } else {
            self.eval_orders(x, 0, 1)
        }
    }

    /// `∂_a ∂_b` of the field.
    pub fn d2(&self, x: &[f64], a: usize, b: usize) -> f64 {
        let mut o = [0u32; 2];
        o[a] += 1;
        o[b] += 1;
        self.eval_orders(x, o[0], o[1])
    }

    /// Value together with `∂_α` and `∂²_α` for every axis α.
    pub fn jet(&self, x: &[f64]) -> (f64, [f64; 2], [f64; 2]) {
        let x1 = if self.dim == 2 { x[1] } else { 0.0 };
        let mut v = 0.0;
        let mut g = [0.0; 2];
        let mut h = [0.0; 2];
        for (w, c) in self.waves.iter().zip(&self.coeffs) {
            let (s, co) = sin_cos(TAU * (w[0] as f64 * x[0] + w[1] as f64 * x1));
            let t = *c * Complex64::new(co, s);
            v += t.re;
            for a in 0..self.dim {
                let k = TAU * w[a] as f64;
                // i k t and -k² t
                g[a] += -k * t.im;
                h[a] += -k * k * t.re;
            }
        }
        (v, g, h)
    }

    /// `∫_0^x` of the field, `d = 1`.
    pub fn cdf_1d(&self, x: f64) -> f64 {
        let mut v = 0.0;
        for (w, c) in self.waves.iter().zip(&self.coeffs) {
            v += (*c * mode_integral(w[0], 0.0, x)).re;
        }
        v
    }

    pub fn cell_masses(&self, bins: usize) -> Vec<f64> {
        let bw = 1.0 / bins as f64;
        let axis_tables: Vec<Vec<Vec<Complex64>>> = (0..self.dim)
            .map(|a| {
                self.waves
                    .iter()
                    .map(|w| (0..bins).map(|b| mode_integral(w[a], b as f64 * bw, (b + 1) as f64 * bw)).collect())
                    .collect()
            })
            .collect();
        let total = bins.pow(self.dim as u32);
        let mut out = vec![0.0; total];
        for (flat, o) in out.iter_mut().enumerate() {
            let (b0, b1) = if self.dim == 1 { (flat, 0) } else { (flat / bins, flat % bins) };
            let mut acc = Complex64::new(0.0, 0.0);
            for (m, c) in self.coeffs.iter().enumerate() {
                let mut t = *c * axis_tables[0][m][b0];
                if self.dim == 2 {
                    t *= axis_tables[1][m][b1];
                }
                acc += t;
            }
            *o = acc.re;
        }
        out
    }

    /// Draw one point from the (assumed nonnegative, unit-mass) field.
    /// `d = 1`: safeguarded Newton on the exact CDF; `d = 2`: rejection
    /// against the bound `Σ|c_k|`.
    pub fn sample_point<R: RngCore>(&self, rng: &mut R, out: &mut [f64]) {
        if self.dim == 1 {
            let u = uniform(rng);
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            let mut x = u;
            for _ in 0..100 {
                let f = self.cdf_1d(x) - u;
                if f.abs() < 1e-14 {
                    break;
                }
                if f > 0.0 {
                    hi = x;
                } else {
                    lo = x;
                }
                let dens = self.value(&[x]);
                let newton = x - f / dens;
                x = if dens > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
                if hi - lo < 1e-15 {
                    break;
                }
            }
            out[0] = wrap_coord(x);
        } else {
            let bound = self.abs_sum();
            loop {
                let p = [uniform(rng), uniform(rng)];
                if uniform(rng) * bound < self.value(&p) {
                    out[0] = p[0];
                    out[1] = p[1];
                    return;
                }
            }
        }
    }
}
