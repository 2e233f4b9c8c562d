use chaoslab_core::chaos::{kl_binned, l1_binned};
use proptest::prelude::*;

fn normalise(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

proptest! {
    #[test]
    fn binned_pinsker(p in proptest::collection::vec(0.0f64..1.0, 8), q in proptest::collection::vec(0.01f64..1.0, 8)) {
        prop_assume!(p.iter().sum::<f64>() > 0.0);
        let (p, q) = (normalise(&p), normalise(&q));
        prop_assert!(l1_binned(&p, &q) <= (2.0 * kl_binned(&p, &q, 1)).sqrt() + 1e-12);
    }

    #[test]
    fn pair_entropy_dominates_marginal(
        w in proptest::collection::vec(0.0f64..1.0, 36),
        q in proptest::collection::vec(0.01f64..1.0, 6),
    ) {
        prop_assume!(w.iter().sum::<f64>() > 0.0);
        let b = 6;
        // exchangeable pair law: symmetrise
        let sym: Vec<f64> = (0..b * b).map(|i| w[i] + w[(i % b) * b + i / b]).collect();
        let p2 = normalise(&sym);
        let p1: Vec<f64> = (0..b).map(|i| (0..b).map(|j| p2[i * b + j]).sum()).collect();
        let q1 = normalise(&q);
        let q2: Vec<f64> = q1.iter().flat_map(|a| q1.iter().map(move |c| a * c)).collect();
        prop_assert!(kl_binned(&p1, &q1, 1) <= kl_binned(&p2, &q2, 2) + 1e-12);
    }
}
