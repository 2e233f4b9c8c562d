//! Radix-2 complex FFT in one and two dimensions.

use alloc::vec::Vec;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::math::{sin_cos, TAU};

/// Precomputed twiddles for length-`n` transforms, `n` a power of two.
#[derive(Debug, Clone)]
pub struct Fft {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl Fft {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::invalid(alloc::format!("FFT length {n} is not a power of two")));
        }
        let twiddles = (0..n / 2)
            .map(|k| {
                let (s, c) = sin_cos(-TAU * k as f64 / n as f64);
                Complex64::new(c, s)
            })
            .collect();
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        Ok(Fft { n, twiddles, bitrev })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unnormalised transform `X_k = Σ_j x_j e^{∓2πi jk/n}` (`-` when forward).
    pub fn transform(&self, data: &mut [Complex64], forward: bool) {
        let n = self.n;
        debug_assert_eq!(data.len(), n);
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                data.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if !forward {
                        w = w.conj();
                    }
                    let u = data[start + k];
                    let v = data[start + k + half] * w;
                    data[start + k] = u + v;
                    data[start + k + half] = u - v;
                }
            }
            len <<= 1;
        }
    }

    /// Forward transform of an `n^dim` row-major array (`dim` ∈ {1, 2}),
    /// axis 0 varying slowest.
    pub fn forward_nd(&self, data: &mut [Complex64], dim: usize) {
        self.nd(data, dim, true)
    }

    /// Inverse transform including the `1/n^dim` normalisation.
    pub fn inverse_nd(&self, data: &mut [Complex64], dim: usize) {
        self.nd(data, dim, false);
        let s = 1.0 / data.len() as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    fn nd(&self, data: &mut [Complex64], dim: usize, forward: bool) {
        let n = self.n;
        match dim {
            1 => self.transform(data, forward),
            2 => {
                for row in data.chunks_exact_mut(n) {
                    self.transform(row, forward);
                }
                let mut col = alloc::vec![Complex64::new(0.0, 0.0); n];
                for c in 0..n {
                    for r in 0..n {
                        col[r] = data[r * n + c];
                    }
                    self.transform(&mut col, forward);
                    for r in 0..n {
                        data[r * n + c] = col[r];
                    }
                }
            }
            _ => panic!("unsupported FFT dimension {dim}"),
        }
    }
}

/// Signed wave number of FFT bin `idx` for length `n` (Nyquist mapped to `+n/2`).
#[inline]
pub fn wavenumber(idx: usize, n: usize) -> i64 {
    if idx <= n / 2 {
        idx as i64
    } else {
        idx as i64 - n as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::FftPlanner;

    #[test]
    fn matches_rustfft() {
        for &n in &[1usize, 2, 8, 64, 256] {
            let data: Vec<Complex64> = (0..n)
                .map(|j| Complex64::new((j as f64 * 0.37).sin() + 0.1 * j as f64, (j as f64 * 1.3).cos()))
                .collect();
            let mut ours = data.clone();
            Fft::new(n).unwrap().transform(&mut ours, true);
            let mut theirs: Vec<rustfft::num_complex::Complex<f64>> =
                data.iter().map(|c| rustfft::num_complex::Complex::new(c.re, c.im)).collect();
            FftPlanner::new().plan_fft_forward(n).process(&mut theirs);
            for (a, b) in ours.iter().zip(&theirs) {
                assert!((a.re - b.re).abs() < 1e-10 && (a.im - b.im).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn round_trip_2d() {
        let n = 16;
        let fft = Fft::new(n).unwrap();
        let data: Vec<Complex64> = (0..n * n).map(|j| Complex64::new((j as f64).sin(), 0.0)).collect();
        let mut w = data.clone();
        fft.forward_nd(&mut w, 2);
        fft.inverse_nd(&mut w, 2);
        for (a, b) in w.iter().zip(&data) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(Fft::new(12).is_err());
    }
}
