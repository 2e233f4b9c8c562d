//! Finite trigonometric series on the torus.
//!
//! A series is `c + Σ_t (a_t sin θ_t + b_t cos θ_t)` with `θ_t = 2π k_t·x`,
//! `k_t ∈ Z^d`. Derivatives keep the term layout, so phase tables computed for
//! one series can be reused for all of its derivatives.

use alloc::vec::Vec;
use num_complex::Complex64;

use crate::math::{sin_cos, TAU};

#[derive(Debug, Clone, PartialEq)]
pub struct TrigTerm {
    pub wave: Vec<i32>,
    pub sin: f64,
    pub cos: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrigSeries {
    dim: usize,
    pub constant: f64,
    pub terms: Vec<TrigTerm>,
}

#[inline]
pub(crate) fn phase(wave: &[i32], x: &[f64]) -> f64 {
    let mut s = 0.0;
    for (k, xi) in wave.iter().zip(x) {
        s += *k as f64 * xi;
    }
    TAU * s
}

impl TrigSeries {
    pub fn zero(dim: usize) -> Self {
        TrigSeries {
            dim,
            constant: 0.0,
            terms: Vec::new(),
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        TrigSeries {
            dim,
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn with_term(mut self, wave: Vec<i32>, sin: f64, cos: f64) -> Self {
        debug_assert_eq!(wave.len(), self.dim);
        self.terms.push(TrigTerm { wave, sin, cos });
        self
    }

    /// Term-wise sum; the result lists the terms of `self` then those of `other`.
    pub fn add(&self, other: &TrigSeries) -> TrigSeries {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        TrigSeries {
            dim: self.dim,
            constant: self.constant + other.constant,
            terms,
        }
    }

    pub fn scale(&self, s: f64) -> TrigSeries {
        TrigSeries {
            dim: self.dim,
            constant: self.constant * s,
            terms: self
                .terms
                .iter()
                .map(|t| TrigTerm {
                    wave: t.wave.clone(),
                    sin: t.sin * s,
                    cos: t.cos * s,
                })
                .collect(),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|t| t.sin == 0.0 && t.cos == 0.0 || t.wave.iter().all(|&k| k == 0))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = self.constant;
        for t in &self.terms {
            let (s, c) = sin_cos(phase(&t.wave, x));
            v += t.sin * s + t.cos * c;
        }
        v
    }

    /// Partial derivative along `axis`, same term layout.
    pub fn derivative(&self, axis: usize) -> TrigSeries {
        TrigSeries {
            dim: self.dim,
            constant: 0.0,
            terms: self
                .terms
                .iter()
                .map(|t| {
                    let w = TAU * t.wave[axis] as f64;
                    TrigTerm {
                        wave: t.wave.clone(),
                        sin: -w * t.cos,
                        cos: w * t.sin,
                    }
                })
                .collect(),
        }
    }

    /// Largest wave-vector component in absolute value.
    pub fn bandwidth(&self) -> u32 {
        self.terms
            .iter()
            .flat_map(|t| t.wave.iter().map(|k| k.unsigned_abs()))
            .max()
            .unwrap_or(0)
    }

    /// Convolution `f * ρ` given the Fourier coefficients of `ρ`,
    /// `ĉ(k) = ∫ ρ(y) e^{-2πi k·y} dy`, through a lookup closure.
    pub fn convolve<F: Fn(&[i32]) -> Complex64>(&self, coeff: F) -> TrigSeries {
        let zero = alloc::vec![0i32; self.dim];
        let c0 = coeff(&zero).re;
        let terms = self
            .terms
            .iter()
            .map(|t| {
                // a sin θ + b cos θ = Re[(b - i a) e^{iθ}]
                let w = Complex64::new(t.cos, -t.sin) * coeff(&t.wave);
                TrigTerm {
                    wave: t.wave.clone(),
                    sin: -w.im,
                    cos: w.re,
                }
            })
            .collect();
        TrigSeries {
            dim: self.dim,
            constant: self.constant * c0,
            terms,
        }
    }

    /// Per-term phase sums `(Σ_k cos θ_t(x_k), Σ_k sin θ_t(x_k))` over a flat
    /// list of points (`dim` coordinates each).
    pub fn phase_sums(&self, points: &[f64]) -> Vec<(f64, f64)> {
        let mut out = alloc::vec![(0.0, 0.0); self.terms.len()];
        for p in points.chunks_exact(self.dim) {
            for (t, acc) in self.terms.iter().zip(out.iter_mut()) {
                let (s, c) = sin_cos(phase(&t.wave, p));
                acc.0 += c;
                acc.1 += s;
            }
        }
        out
    }

    /// `Σ_k f(x - x_k)` from phase sums produced by a series with the same
    /// term layout (typically `self` before differentiation).
    pub fn pair_sum(&self, x: &[f64], count: usize, sums: &[(f64, f64)]) -> f64 {
        let mut v = self.constant * count as f64;
        for (t, &(cs, ss)) in self.terms.iter().zip(sums) {
            let (s, c) = sin_cos(phase(&t.wave, x));
            // sin(θ - φ) = sin θ cos φ - cos θ sin φ ; cos(θ - φ) = cos θ cos φ + sin θ sin φ
            v += t.sin * (s * cs - c * ss) + t.cos * (c * cs + s * ss);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{cos, sin, PI};

    #[test]
    fn derivative_of_sine() {
        let f = TrigSeries::zero(1).with_term(alloc::vec![2], 0.25, 0.0);
        let df = f.derivative(0);
        let x = [0.137];
        assert!((df.eval(&x) - 0.25 * 4.0 * PI * cos(4.0 * PI * 0.137)).abs() < 1e-12);
        let d2 = df.derivative(0);
        assert!((d2.eval(&x) + 0.25 * 16.0 * PI * PI * sin(4.0 * PI * 0.137)).abs() < 1e-10);
    }

    #[test]
    fn pair_sum_matches_direct() {
        let f = TrigSeries::constant(2, 0.3)
            .with_term(alloc::vec![1, 0], 0.7, -0.2)
            .with_term(alloc::vec![1, -2], 0.1, 0.4);
        let pts = [0.1, 0.2, 0.55, 0.9, 0.33, 0.01];
        let sums = f.phase_sums(&pts);
        let x = [0.42, 0.77];
        let direct: f64 = pts
            .chunks(2)
            .map(|p| f.eval(&[x[0] - p[0], x[1] - p[1]]))
            .sum();
        assert!((f.pair_sum(&x, 3, &sums) - direct).abs() < 1e-12);
    }

    #[test]
    fn convolve_against_shifted_mode() {
        // ρ = 1 + 0.5 sin(2πy): ĉ(±1) = ∓ i/4
        let f = TrigSeries::zero(1).with_term(alloc::vec![1], 1.0, 0.0);
        let coeff = |k: &[i32]| match k[0] {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, -0.25),
            -1 => Complex64::new(0.0, 0.25),
            _ => Complex64::new(0.0, 0.0),
        };
        let g = f.convolve(coeff);
        // ∫ sin(2π(x-y))(1 + 0.5 sin 2πy) dy = -0.25 cos 2πx
        for &x in &[0.0, 0.2, 0.7] {
            assert!((g.eval(&[x]) + 0.25 * cos(2.0 * PI * x)).abs() < 1e-14);
        }
    }
}
