use chaoslab_core::kernels::{builtin_diffusion, builtin_drift};
use chaoslab_core::{wrap, displacement, KernelSpec};
use proptest::prelude::*;

fn spec(dim: usize, amp: f64, kmode: u32, base: f64, samp: f64, smode: u32) -> KernelSpec {
    KernelSpec::new(
        builtin_drift("trig_drift", dim, &[amp, kmode as f64]).unwrap(),
        builtin_diffusion("trig_sigma", dim, &[base, samp, smode as f64]).unwrap(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn declared_derivatives_match_finite_differences(
        dim in 1usize..=2,
        amp in -1.0f64..1.0,
        kmode in 1u32..=2,
        base in 0.5f64..2.0,
        frac in 0.0f64..0.45,
        smode in 1u32..=2,
    ) {
        let s = spec(dim, amp, kmode, base, frac * base, smode);
        let pts = 64;
        let h = 1.0 / pts as f64;
        // fourth-order stencils; the scale factor absorbs (2π·mode)^6
        let scale = (base + amp.abs()) * (6.3 * 2.0f64).powi(6) / 90.0;
        for e in s.finite_difference_errors(pts).unwrap() {
            prop_assert!(e < 10.0 * h * h * scale.max(1.0), "{e}");
        }
    }

    #[test]
    fn sigma_stays_above_floor(
        dim in 1usize..=2,
        base in 0.5f64..2.0,
        frac in 0.0f64..0.45,
        smode in 1u32..=3,
        x in proptest::collection::vec(0.0f64..1.0, 2),
    ) {
        let s = spec(dim, 0.1, 1, base, frac * base, smode);
        let mut out = vec![0.0; dim];
        s.eval_diffusion(&x[..dim], &mut out);
        for v in out {
            prop_assert!(v - s.sigma_floor() > 0.0);
        }
    }

    #[test]
    fn displacement_reconstructs_wrapped_point(x in proptest::collection::vec(-20.0f64..20.0, 1..=2)) {
        let p = wrap(&x).unwrap();
        let origin = wrap(&vec![0.0; x.len()]).unwrap();
        let d = displacement(&p, &origin).unwrap();
        for (a, b) in d.iter().zip(&x) {
            let r = (a - b).rem_euclid(1.0);
            prop_assert!(r.min(1.0 - r) < 1e-9);
        }
    }
}
