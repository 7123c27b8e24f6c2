use std::f64::consts::SQRT_2;
use std::sync::Arc;

use kp_core::par::Exec;
use kp_core::perturbation::{Density, PerturbingMeasure, SolverSpec};
use kp_core::quadrature::{integrate_line, QuadratureSpec};
use kp_core::spacetime::{
    cauchy_profile_ratio, check_3g, check_3p, check_chapman_kolmogorov, eta_for_kappa, kappa, kappa_scaling_exponent,
    kato_modulus, left_inverse_residual, sample_3g, sample_3p, weyl_half_derivative, AtomPerturbed, AtomRule, Bump,
    Cauchy, Gaussian, Kappa, KatoSpec, LeftInverseKernel, SpaceTimeKernel,
};
use kp_core::bounds::CertificateStatus;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quad() -> QuadratureSpec {
    QuadratureSpec::default().with_tol(1e-10, 1e-14)
}

fn random_triples(seed: u64, n: usize) -> Vec<(f64, f64, f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s = rng.random_range(-1.0..1.0);
            let u = s + rng.random_range(0.05..1.0);
            let t = u + rng.random_range(0.05..1.0);
            (s, rng.random_range(-2.0..2.0), u, t, rng.random_range(-2.0..2.0))
        })
        .collect()
}

fn worst_ck(kernel: &dyn SpaceTimeKernel, seed: u64) -> f64 {
    random_triples(seed, 50)
        .into_iter()
        .map(|(s, x, u, t, y)| {
            let r = check_chapman_kolmogorov(kernel, s, &[x], u, t, &[y], &quad()).unwrap();
            assert!(r.integral.converged);
            r.residual
        })
        .fold(0.0, f64::max)
}

#[test]
fn chapman_kolmogorov_on_random_triples() {
    assert!(worst_ck(&Gaussian { dim: 1 }, 1) <= 1e-6);
    assert!(worst_ck(&Cauchy::new(1).unwrap(), 2) <= 1e-5);
}

#[test]
fn chapman_kolmogorov_rejects_bad_order() {
    let g = Gaussian { dim: 1 };
    assert!(check_chapman_kolmogorov(&g, 0.0, &[0.0], 1.0, 0.5, &[0.0], &quad()).is_err());
}

#[test]
fn strict_atom_breaks_chapman_kolmogorov() {
    let eta = 0.5;
    let inner = Arc::new(Gaussian { dim: 1 });
    let strict = AtomPerturbed { inner: inner.clone(), u0: 0.5, eta, rule: AtomRule::Strict };
    let coincident = AtomPerturbed { inner, u0: 0.5, eta, rule: AtomRule::Coincident };
    assert!(!strict.chapman_kolmogorov());
    assert!(coincident.chapman_kolmogorov());
    // away from the atom both compositions agree with the closed form
    for &u in &[0.3, 0.7] {
        for k in [&strict, &coincident] {
            let r = check_chapman_kolmogorov(k, 0.0, &[0.1], u, 1.0, &[-0.2], &quad()).unwrap();
            assert!(r.residual <= 1e-6, "{r:?}");
        }
    }
    // splitting at u = u0 drops the atom from both strict factors
    let r = check_chapman_kolmogorov(&strict, 0.0, &[0.1], 0.5, 1.0, &[-0.2], &quad()).unwrap();
    let p = Gaussian { dim: 1 }.density(0.0, &[0.1], 1.0, &[-0.2]);
    assert!((r.residual - eta * p).abs() <= 1e-8, "{r:?}");
    let r = check_chapman_kolmogorov(&coincident, 0.0, &[0.1], 0.5, 1.0, &[-0.2], &quad()).unwrap();
    assert!(r.residual <= 1e-6, "{r:?}");
}

#[test]
fn transition_densities_are_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cauchy = Cauchy::new(1).unwrap();
    let kernels: [&dyn SpaceTimeKernel; 2] = [&Gaussian { dim: 1 }, &cauchy];
    for k in kernels {
        for _ in 0..10 {
            let s = rng.random_range(-1.0..1.0);
            let t = s + rng.random_range(0.01..3.0);
            let x = rng.random_range(-5.0..5.0);
            let spec = quad().with_tail_scale(k.spread(t - s));
            let e = integrate_line(|y| k.density(s, &[x], t, &[y]), &[x], &spec);
            assert!((e.value - 1.0).abs() <= 1e-8, "{} {e:?}", k.name());
        }
    }
}

#[test]
fn cauchy_matches_its_power_profile() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for d in [1usize, 2, 3] {
        let k = Cauchy::new(d).unwrap();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for _ in 0..2000 {
            let scale = 10f64.powf(rng.random_range(-3.0..3.0));
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
            let dt = 10f64.powf(rng.random_range(-3.0..3.0));
            let r = cauchy_profile_ratio(&k, 0.0, &x, dt, &y).unwrap();
            lo = lo.min(r);
            hi = hi.max(r);
        }
        // p / profile = c_d (1 + m²)^{-(d+1)/2} with m = min(r/dt, dt/r) <= 1
        let floor = k.c_d() * 2f64.powf(-0.5 * (d as f64 + 1.0));
        assert!(lo >= floor * (1.0 - 1e-12) && hi <= k.c_d() * (1.0 + 1e-12), "d={d}: [{lo}, {hi}]");
    }
}

#[test]
fn three_g_on_a_hundred_thousand_tuples() {
    let r = sample_3g(100_000, 7, Exec::Parallel).unwrap();
    assert_eq!(r.violations, 0);
    assert!(r.min_ratio >= 1.0 - 1e-12 && r.max_ratio <= 2.0 * SQRT_2 * (1.0 + 1e-12), "{r:?}");
    let mid = check_3g(0.0, 0.0, 0.5, 0.5, 1.0, 1.0).unwrap();
    assert!((mid.ratio - 2.0 * SQRT_2).abs() <= 1e-9);
    let near = check_3g(0.0, 0.0, 1e-3, 1e-3, 1.0, 1.0).unwrap();
    assert!((near.ratio - 1.0).abs() < 5e-3, "{near:?}");
    assert!(check_3g(0.0, 0.0, 1.0, 0.5, 0.5, 1.0).is_err());
}

#[test]
fn three_p_constant_is_stable_under_doubling() {
    let k = Cauchy::new(1).unwrap();
    let a = sample_3p(&k, 50_000, 11, Exec::Parallel).unwrap();
    let b = sample_3p(&k, 100_000, 11, Exec::Parallel).unwrap();
    assert_eq!(a.unbounded + b.unbounded, 0);
    assert!(a.max_3p.is_finite() && a.max_3p >= 1.0);
    assert!((b.max_3p / a.max_3p - 1.0).abs() < 0.05, "{} {}", a.max_3p, b.max_3p);
    assert!(b.max_5p <= b.max_3p * (1.0 + 1e-12));
    let after = check_3p(&k, 1.0, &[0.0], 0.5, &[0.0], 0.0, &[0.0]);
    assert_eq!(after.ratio, 0.0);
}

#[test]
fn weyl_derivative_of_exponential_on_zero_to_five() {
    let spec = QuadratureSpec::default();
    for i in 0..=50 {
        let x = 0.1 * i as f64;
        let d = weyl_half_derivative(|v| -(-v).exp(), x, &spec).unwrap();
        assert!((d.value + (-x).exp()).abs() <= 1e-6, "x={x}: {}", d.value);
    }
    let c = weyl_half_derivative(|_| 0.0, 1.0, &spec).unwrap();
    assert_eq!(c.value, 0.0);
}

#[test]
fn left_inverse_identity_for_kappa() {
    let quad = QuadratureSpec::default().with_tol(1e-7, 1e-11);
    let r = left_inverse_residual(LeftInverseKernel::Kappa, &Bump::default(), 0.0, 0.0, 5e-3, &quad, &SolverSpec::default())
        .unwrap();
    assert_eq!(r.status, CertificateStatus::Valid, "{r:?}");
    assert!(r.residual <= 5e-3 && r.phi > 0.5);
}

#[test]
fn left_inverse_identity_for_perturbed_kappa() {
    let quad = QuadratureSpec::default().with_tol(1e-7, 1e-11);
    let kernel = LeftInverseKernel::Perturbed { c: 0.05, p: 0.25 };
    let r = left_inverse_residual(kernel, &Bump::default(), 0.1, 0.1, 1e-2, &quad, &SolverSpec::default()).unwrap();
    assert_eq!(r.status, CertificateStatus::Valid, "{r:?}");
}

#[test]
fn kappa_slice_integral_scaling() {
    let q = QuadratureSpec::default().with_tol(1e-11, 1e-15);
    for &p in &[0.1, 0.25] {
        let e = kappa_scaling_exponent(p, 0.01, &q).unwrap();
        assert!((e - (0.5 - p)).abs() <= 0.02 * (0.5 - p), "p={p}: {e}");
    }
    // Γ(1/2) Γ(3/4) / Γ(5/4) from tabulated gamma values
    let b = std::f64::consts::PI.sqrt() * 1.225_416_702_465_177_6 / 0.906_402_477_055_477;
    let eta = eta_for_kappa(1.0, 0.25, 1.0).unwrap();
    assert!((eta - 2.0 * SQRT_2 * (4.0 + b)).abs() < 1e-9, "{eta}");
    assert!((eta - 18.09).abs() < 5e-3);
}

#[test]
fn kato_modulus_of_lebesgue_is_twice_h() {
    let mu = PerturbingMeasure::lebesgue(1.0).unwrap();
    for d in [1usize, 2] {
        let k = Cauchy::new(d).unwrap();
        for &h in &[0.1, 0.5, 1.0] {
            let r = kato_modulus(&k, &mu, h, &KatoSpec::default()).unwrap();
            assert!((r.value - 2.0 * h).abs() <= 1e-4, "d={d} h={h}: {r:?}");
        }
    }
}

#[test]
fn kato_modulus_rejects_atoms() {
    let mu = PerturbingMeasure::new(Density::Zero, vec![kp_core::perturbation::Atom { u: 0.5, eta: 0.1 }]).unwrap();
    assert!(kato_modulus(&Cauchy::new(1).unwrap(), &mu, 0.5, &KatoSpec::default()).is_err());
}

#[test]
fn kato_modulus_decreases_for_singular_density() {
    let k = Cauchy::new(1).unwrap();
    let mu = PerturbingMeasure::new(Density::Power { eps: 0.5 }, Vec::new()).unwrap();
    let spec = KatoSpec {
        dt_fractions: vec![1.0],
        offsets: vec![0.0, 1.0],
        ..KatoSpec::default()
    };
    let vals: Vec<f64> = [0.5, 0.25, 0.125]
        .iter()
        .map(|&h| kato_modulus(&k, &mu, h, &spec).unwrap().value)
        .collect();
    assert!(vals.windows(2).all(|w| w[1] < w[0]), "{vals:?}");
}

#[test]
fn kato_modulus_decreases_in_the_plane() {
    let k = Cauchy::new(2).unwrap();
    let mu = PerturbingMeasure::new(Density::Power { eps: 0.5 }, Vec::new()).unwrap();
    // the density is radially symmetric, so nonnegative offsets suffice
    let spec = KatoSpec {
        dt_fractions: vec![0.5, 1.0],
        offsets: vec![0.0, 0.5, 1.0],
        quad: QuadratureSpec::default().with_tol(1e-8, 1e-12),
        ..KatoSpec::default()
    };
    let vals: Vec<f64> = [1.0, 0.5, 0.25, 0.125]
        .iter()
        .map(|&h| kato_modulus(&k, &mu, h, &spec).unwrap().value)
        .collect();
    assert!(vals.windows(2).all(|w| w[1] < w[0]), "{vals:?}");
    // u -> hu, z -> hz maps the sup for h = 1 onto the sup for h, so k(h) = k(1) h^{1/2}
    for w in vals.windows(2) {
        assert!((w[1] / w[0] - 0.5f64.sqrt()).abs() <= 1e-6, "{vals:?}");
    }
    assert!(vals.iter().all(|v| v.is_finite() && *v > 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn kernels_are_causal_and_nonnegative(s in -5.0f64..5.0, dt in -5.0f64..5.0, x in -5.0f64..5.0, y in -5.0f64..5.0) {
        let t = s + dt;
        let cauchy = Cauchy::new(1).unwrap();
        let kernels: [&dyn SpaceTimeKernel; 3] = [&Gaussian { dim: 1 }, &cauchy, &Kappa];
        for k in kernels {
            let v = k.density(s, &[x], t, &[y]);
            prop_assert!(v >= 0.0);
            if dt <= 0.0 {
                prop_assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn three_g_bounds_hold(s in -10.0f64..10.0, a in 1e-4f64..10.0, b in 1e-4f64..10.0, x in -10.0f64..10.0, c in 1e-4f64..10.0, d in 1e-4f64..10.0) {
        let r = check_3g(s, x, s + a, x + c, s + a + b, x + c + d).unwrap();
        prop_assert!(r.all_ok(), "{:?}", r);
        prop_assert!(kappa(s, x, s + a + b, x + c + d) > 0.0);
    }
}
