use kp_core::bounds::{
    certify, check_gronwall, corollary_bound, estimate_matrix_constants, minimal_n, theorem_bound, CertificateStatus,
    GronwallSequence, MatrixSeries,
};
use kp_core::kernel::{random_chain_kernel, RandomKernelSpec, Side};
use kp_core::series::SeriesStatus;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64) -> kp_core::kernel::RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=8);
    let spec = RandomKernelSpec {
        n,
        blocks: rng.random_range(1..=n),
        density: rng.random_range(0.1..0.8),
        numerator_max: 4,
        denominator_bits: 4,
    };
    random_chain_kernel(&mut rng, &spec).unwrap()
}

#[test]
fn equal_constants_give_inverse_power() {
    for i in 0..100 {
        let eta = i as f64 / 100.0;
        let j = 1 + i % 12;
        let b = theorem_bound(eta, eta, j).unwrap();
        let expected = (1.0 - eta).powi(-(j as i32));
        assert!((b - expected).abs() <= 1e-12 * expected);
    }
}

#[test]
fn theorem_bound_is_monotone() {
    let grid = [0.0, 0.1, 0.3, 0.6, 0.9];
    for &eta in &grid {
        for &beta in &grid {
            for j in 1..6 {
                let b = theorem_bound(eta, beta, j).unwrap();
                assert!(theorem_bound(eta + 0.05, beta, j).unwrap() > b);
                let more_beta = theorem_bound(eta, beta + 0.05, j).unwrap();
                if j > 1 {
                    assert!(more_beta > b);
                } else {
                    assert_eq!(more_beta, b);
                }
                if beta > 0.0 {
                    assert!(theorem_bound(eta, beta, j + 1).unwrap() > b);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn gronwall_hypothesis_implies_bound(alpha in 0.0f64..5.0, delta in 0.0f64..3.0, slack in prop::collection::vec(0.0f64..1.0, 1..12)) {
        let mut gamma = Vec::new();
        let mut sum = 0.0;
        for s in slack {
            let g = (alpha + delta * sum) * (1.0 - s);
            gamma.push(g);
            sum += g;
        }
        let seq = GronwallSequence { alpha, delta, gamma };
        prop_assert!(check_gronwall(&seq).unwrap());
    }

    #[test]
    fn certificates_are_sound(seed in any::<u64>()) {
        let inst = instance(seed);
        let f = vec![1.0; inst.kernel.n()];
        let constants = estimate_matrix_constants(&inst.kernel, &f, &inst.chain).unwrap();
        prop_assume!(constants.eta < 1.0);
        let series = MatrixSeries::new(&inst.kernel, &f, inst.chain).unwrap();
        for cert in certify(&series, &constants).unwrap() {
            prop_assert!(cert.status == CertificateStatus::Valid, "{:?}", cert);
        }
    }

    #[test]
    fn corollary_bound_dominates_series(seed in any::<u64>()) {
        let inst = instance(seed);
        let k = &inst.kernel;
        let f = vec![1.0; k.n()];
        let beta = k.apply(&f).unwrap().into_iter().fold(0.0f64, f64::max);
        // smallest c for the local series on every slice
        let mut c = 1.0f64;
        for s in inst.chain.slices() {
            let local = k.restrict(&s, Side::Right).unwrap().neumann_series(&f, 10_000, 1e-15).unwrap();
            for x in s.members() {
                prop_assume!(local[x].status == SeriesStatus::Converged);
                c = c.max(local[x].value + local[x].tail_estimate);
            }
        }
        let c = c * (1.0 + 1e-12) + 1e-12;
        let n = minimal_n(c).unwrap();
        let full = k.neumann_series(&f, 100_000, 1e-15).unwrap();
        for (j, s) in inst.chain.slices().iter().enumerate() {
            let bound = corollary_bound(c, n, beta, j + 1).unwrap();
            for x in s.members() {
                prop_assert!(full[x].value <= bound * (1.0 + 1e-9), "state {} ratio {} bound {}", x, full[x].value, bound);
            }
        }
    }
}
