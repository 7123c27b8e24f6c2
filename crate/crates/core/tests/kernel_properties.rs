use kp_core::kernel::{random_chain_kernel, MatrixKernel, RandomKernelSpec, Side, StateSet};
use kp_core::series::SeriesStatus;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, max_n: usize, numerator_max: u32) -> kp_core::kernel::RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max_n);
    let blocks = rng.random_range(1..=n);
    let spec = RandomKernelSpec {
        n,
        blocks,
        density: rng.random_range(0.2..0.9),
        numerator_max,
        denominator_bits: 4,
    };
    random_chain_kernel(&mut rng, &spec).unwrap()
}

fn dyadic_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0..64) as f64 / 8.0).collect()
}

#[test]
fn block_triangular_five_state_power_identity() {
    let k = MatrixKernel::from_rows(&[
        vec![0.25, 0.5, 0.125, 0.0, 0.0],
        vec![0.5, 0.0, 0.75, 0.0, 0.0],
        vec![0.0, 0.25, 0.5, 0.0, 0.0],
        vec![0.125, 0.0, 0.25, 0.5, 0.25],
        vec![0.0, 0.5, 0.0, 0.75, 0.125],
    ])
    .unwrap();
    // lower rows feed upper ones, so the first three states are absorbing
    let a = StateSet::from_indices(5, &[0, 1, 2]).unwrap();
    assert!(k.verify_power_identity(&a, 3, None).unwrap());
    let t = MatrixKernel::from_rows(&transpose(&k.rows())).unwrap();
    let last_two = StateSet::from_indices(5, &[3, 4]).unwrap();
    assert!(t.verify_power_identity(&last_two, 3, None).unwrap());
}

fn transpose(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..rows.len()).map(|j| rows.iter().map(|r| r[j]).collect()).collect()
}

#[test]
fn six_state_chain_slice_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let spec = RandomKernelSpec {
        n: 6,
        blocks: 3,
        density: 0.7,
        numerator_max: 15,
        denominator_bits: 4,
    };
    let inst = random_chain_kernel(&mut rng, &spec).unwrap();
    let sets = inst.chain.sets();
    assert!(inst.kernel.verify_slice_identity(&sets[0], &sets[2], 2).unwrap());
    assert!(inst.kernel.verify_slice_identity(&sets[1], &sets[2], 2).unwrap());
}

#[test]
fn associativity_on_random_four_state_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let mut mk = || MatrixKernel::new(4, (0..16).map(|_| rng.random_range(0..16) as f64 / 16.0).collect()).unwrap();
        let (k, l, m) = (mk(), mk(), mk());
        let left = k.compose(&l).unwrap().compose(&m).unwrap();
        let right = k.compose(&l.compose(&m).unwrap()).unwrap();
        assert_eq!(left, right);
    }
}

#[test]
fn geometric_decay_with_three() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut checked = 0;
    for seed in 0..400u64 {
        let inst = instance(seed, 6, 3);
        let f: Vec<f64> = (0..inst.kernel.n()).map(|_| rng.random_range(1..8) as f64 / 4.0).collect();
        let s = inst.kernel.neumann_series(&f, 10_000, 1e-15).unwrap();
        if s.iter().zip(&f).all(|(r, fx)| r.status == SeriesStatus::Converged && r.value <= 3.0 * fx) {
            assert!(inst.kernel.check_geometric_decay(&f, inst.chain.top(), 3.0, 30).unwrap());
            checked += 1;
        }
    }
    assert!(checked > 50, "only {checked} instances satisfied the hypothesis");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn operator_laws_are_exact(seed in any::<u64>()) {
        let inst = instance(seed, 8, 15);
        let k = &inst.kernel;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let f = dyadic_vec(&mut rng, k.n());
        let g = dyadic_vec(&mut rng, k.n());
        let sum: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + b).collect();
        let kf = k.apply(&f).unwrap();
        let kg = k.apply(&g).unwrap();
        let ksum = k.apply(&sum).unwrap();
        for x in 0..k.n() {
            prop_assert_eq!(ksum[x], kf[x] + kg[x]);
        }
        let lambda = rng.random_range(0..9) as f64 / 4.0;
        let scaled: Vec<f64> = f.iter().map(|v| lambda * v).collect();
        let kscaled = k.apply(&scaled).unwrap();
        for x in 0..k.n() {
            prop_assert_eq!(kscaled[x], lambda * kf[x]);
        }
        let bigger: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a.max(*b)).collect();
        let kbig = k.apply(&bigger).unwrap();
        for x in 0..k.n() {
            prop_assert!(kbig[x] >= kf[x]);
        }
    }

    #[test]
    fn absorbing_sets_form_a_lattice(seed in any::<u64>()) {
        let inst = instance(seed, 8, 15);
        let k = &inst.kernel;
        let sets = inst.chain.sets();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let a = &sets[rng.random_range(0..sets.len())];
        let b = &sets[rng.random_range(0..sets.len())];
        prop_assert!(k.is_absorbing(&a.union(b).unwrap()).unwrap());
        prop_assert!(k.is_absorbing(&a.intersection(b).unwrap()).unwrap());
        let smaller = MatrixKernel::new(
            k.n(),
            k.entries().iter().map(|v| if rng.random::<bool>() { v / 2.0 } else { 0.0 }).collect(),
        ).unwrap();
        prop_assert!(smaller.is_absorbing(a).unwrap());
    }

    #[test]
    fn absorbing_iff_left_equals_both(seed in any::<u64>()) {
        let inst = instance(seed, 8, 15);
        let k = &inst.kernel;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77);
        let mask: Vec<bool> = (0..k.n()).map(|_| rng.random()).collect();
        for set in [StateSet::from_mask(mask), inst.chain.sets()[0].clone()] {
            let left = k.restrict(&set, Side::Left).unwrap();
            let both = k.restrict_both(&set).unwrap();
            prop_assert_eq!(k.is_absorbing(&set).unwrap(), left == both);
        }
    }

    #[test]
    fn power_and_slice_identities_hold(seed in any::<u64>()) {
        let inst = instance(seed, 8, 15);
        let k = &inst.kernel;
        let sets = inst.chain.sets();
        let m = (seed % 4) as usize + 1;
        for a in sets {
            prop_assert!(k.verify_power_identity(a, m, None).unwrap());
        }
        let mut prev = StateSet::empty(k.n());
        for b in sets {
            prop_assert!(k.verify_slice_identity(&prev, b, m).unwrap());
            prev = b.clone();
        }
    }

    #[test]
    fn geometric_decay_whenever_series_is_bounded(seed in any::<u64>()) {
        let inst = instance(seed, 8, 4);
        let k = &inst.kernel;
        let f = vec![1.0; k.n()];
        let s = k.neumann_series(&f, 10_000, 1e-15).unwrap();
        prop_assume!(s.iter().all(|r| r.status == SeriesStatus::Converged));
        let c = s.iter().map(|r| r.value + r.tail_estimate).fold(1.0f64, f64::max) * (1.0 + 1e-12);
        prop_assert!(k.check_geometric_decay(&f, inst.chain.top(), c, 40).unwrap());
    }
}
