//! Numerical core for interacting particle systems with multiplicative noise
//! on the torus, their McKean–Vlasov limit, and propagation-of-chaos
//! diagnostics. `no_std` with `alloc`.

#![no_std]

extern crate alloc;

mod math;

pub mod chaos;
pub mod error;
pub mod fft;
pub mod grid;
pub mod kernels;
pub mod lde;
pub mod rng;
pub mod meanfield;
pub mod particles;
pub mod series;
pub mod stats;
pub mod torus;

pub use error::{Error, Result};
pub use grid::{DensityGrid, SpectralField, SupNorms};
pub use kernels::{builtin_diffusion, builtin_drift, builtin_kernel, norm_audit, KernelSpec, NormData};
pub use torus::{displacement, wrap, TorusPoint};
