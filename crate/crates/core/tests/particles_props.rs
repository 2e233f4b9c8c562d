use chaoslab_core::kernels::builtin_kernel;
use chaoslab_core::particles::{self, Interaction, ParticleEnsemble};
use chaoslab_core::{DensityGrid, KernelSpec};
use proptest::prelude::*;

fn trig() -> KernelSpec {
    KernelSpec::new(
        chaoslab_core::builtin_drift("trig_drift", 1, &[0.4, 1.0]).unwrap(),
        chaoslab_core::builtin_diffusion("trig_sigma", 1, &[1.0, 0.2, 1.0]).unwrap(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn positions_stay_on_the_torus(seed in any::<u64>(), n in 2usize..40) {
        let rho = DensityGrid::cosine_family(1, 32, &[(vec![1], 0.4)]).unwrap();
        let mut ens = particles::sample_initial(&rho, n, 3, seed).unwrap();
        let spec = trig();
        for _ in 0..20 {
            particles::step(&mut ens, &spec, 0.01).unwrap();
            prop_assert!(ens.positions().iter().all(|&x| (0.0..1.0).contains(&x)));
        }
    }

    #[test]
    fn direct_and_full_cell_list_agree(seed in any::<u64>(), n in 2usize..24) {
        let rho = DensityGrid::uniform(1, 32).unwrap();
        let spec = trig();
        let mut a = particles::sample_initial(&rho, n, 2, seed).unwrap();
        let mut b = a.clone();
        for _ in 0..5 {
            particles::step_with(&mut a, &spec, 0.01, Interaction::Direct, true).unwrap();
            particles::step_with(&mut b, &spec, 0.01, Interaction::CellList { cutoff: 0.5 }, true).unwrap();
        }
        for (x, y) in a.positions().iter().zip(b.positions()) {
            let d = (x - y).abs();
            prop_assert!(d.min(1.0 - d) < 1e-12, "{x} {y}");
        }
    }

    #[test]
    fn permuting_particles_with_their_noise_permutes_trajectories(
        seed in any::<u64>(),
        perm in Just(vec![0usize, 1, 2]).prop_shuffle(),
    ) {
        let spec = trig();
        let start: Vec<f64> = vec![0.1, 0.45, 0.8];
        let permuted: Vec<f64> = perm.iter().map(|&p| start[p]).collect();
        let mut a = ParticleEnsemble::from_positions(3, 1, 1, start, seed).unwrap();
        let mut b = ParticleEnsemble::from_positions(3, 1, 1, permuted, seed).unwrap();
        for s in 0..10u64 {
            let noise = particles::replica_noise(seed, 0, s, 3);
            let pn: Vec<f64> = perm.iter().map(|&p| noise[p]).collect();
            particles::step_with_noise(&mut a, &spec, 0.01, Interaction::Direct, true, &noise).unwrap();
            particles::step_with_noise(&mut b, &spec, 0.01, Interaction::Direct, true, &pn).unwrap();
        }
        for (i, &p) in perm.iter().enumerate() {
            prop_assert!((b.positions()[i] - a.positions()[p]).abs() < 1e-12);
        }
    }
}

#[test]
fn independent_particles_have_uncorrelated_increments() {
    let spec = builtin_kernel("constant_sigma", 1, &[0.5]).unwrap();
    let rho = DensityGrid::uniform(1, 32).unwrap();
    let (n, m) = (2, 4000);
    let mut ens = particles::sample_initial(&rho, n, m, 9).unwrap();
    let before = ens.positions().to_vec();
    particles::step(&mut ens, &spec, 1e-4).unwrap();
    let inc: Vec<f64> = ens
        .positions()
        .iter()
        .zip(&before)
        .map(|(a, b)| {
            let d = a - b;
            d - d.round()
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = inc.chunks_exact(2).map(|c| (c[0], c[1])).unzip();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(&xs), mean(&ys));
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let corr = cov / (vx * vy).sqrt();
    assert!(corr.abs() < 3.0 / (m as f64).sqrt(), "corr {corr}");
}
