//! Chapman-Kolmogorov residuals, the 3G/3P/5P comparisons and the slice
//! integrals of the two-subordinator example.

use std::f64::consts::SQRT_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::par::{self, Exec};
use crate::quadrature::{integrate_1d, integrate_line, integrate_nd, Endpoint, Estimate, QuadratureSpec, Substitution};
use crate::special::beta;

use super::kernels::{kappa, SpaceTimeKernel};

/// `|∫ p(s,x,u,z) p(u,z,t,y) dz - p(s,x,t,y)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CkResidual {
    pub direct: f64,
    pub integral: Estimate,
    pub residual: f64,
}

fn integrate_space(
    f: &dyn Fn(&[f64]) -> f64,
    breaks: &[Vec<f64>],
    prefix: &[f64],
    spec: &QuadratureSpec,
) -> Estimate {
    let axis = prefix.len();
    let last = axis + 1 == breaks.len();
    let ok = std::cell::Cell::new(true);
    let inner = |v: f64| {
        let mut pt = prefix.to_vec();
        pt.push(v);
        if last {
            f(&pt)
        } else {
            let e = integrate_space(f, breaks, &pt, spec);
            ok.set(ok.get() && e.converged);
            e.value
        }
    };
    let mut est = integrate_line(inner, &breaks[axis], spec);
    est.converged &= ok.get();
    est
}

/// Chapman-Kolmogorov residual at `s < u < t`. The `z` integral runs over
/// `R^d` axis by axis, split at the coordinates of `x` and `y`.
pub fn check_chapman_kolmogorov(
    kernel: &dyn SpaceTimeKernel,
    s: f64,
    x: &[f64],
    u: f64,
    t: f64,
    y: &[f64],
    quad: &QuadratureSpec,
) -> Result<CkResidual> {
    if !(s < u && u < t) {
        return Err(invalid(format!("need s < u < t, got s={s}, u={u}, t={t}")));
    }
    let d = kernel.dim();
    if d == 0 || x.len() != d || y.len() != d {
        return Err(invalid(format!("points must have dimension {d}")));
    }
    let spec = quad.with_tail_scale(kernel.spread(t - s).max(1e-12));
    let breaks: Vec<Vec<f64>> = (0..d)
        .map(|k| {
            let w = 0.5 * (x[k] + y[k]);
            vec![x[k], y[k], w]
        })
        .collect();
    let f = |z: &[f64]| kernel.density(s, x, u, z) * kernel.density(u, z, t, y);
    let integral = integrate_space(&f, &breaks, &[], &spec);
    let direct = kernel.density(s, x, t, y);
    Ok(CkResidual {
        direct,
        integral,
        residual: (integral.value - direct).abs(),
    })
}

const REL_SLACK: f64 = 1e-12;

/// Outcome of [`check_3g`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeG {
    pub lower_ok: bool,
    pub upper_ok: bool,
    /// `(κ(s,x,u,z) ∧ κ(u,z,t,y)) / κ(s,x,t,y)`.
    pub ratio: f64,
    /// `κκ <= 2√2 κ [κ ∨ κ]`.
    pub product_upper_ok: bool,
    /// `κκ >= κ [κ + κ] / 2`.
    pub product_lower_ok: bool,
}

impl ThreeG {
    pub fn all_ok(&self) -> bool {
        self.lower_ok && self.upper_ok && self.product_upper_ok && self.product_lower_ok
    }
}

/// The 3G inequality for `κ` at `s < u < t`, `x < z < y`.
pub fn check_3g(s: f64, x: f64, u: f64, z: f64, t: f64, y: f64) -> Result<ThreeG> {
    if !(s < u && u < t && x < z && z < y) {
        return Err(invalid("need s < u < t and x < z < y"));
    }
    let whole = kappa(s, x, t, y);
    let a = kappa(s, x, u, z);
    let b = kappa(u, z, t, y);
    let lo = a.min(b);
    let c = 2.0 * SQRT_2;
    Ok(ThreeG {
        lower_ok: whole <= lo * (1.0 + REL_SLACK),
        upper_ok: lo <= c * whole * (1.0 + REL_SLACK),
        ratio: lo / whole,
        product_upper_ok: a * b <= c * whole * a.max(b) * (1.0 + REL_SLACK),
        product_lower_ok: a * b * (1.0 + REL_SLACK) >= whole * (a + b) / 2.0,
    })
}

/// Summary of [`sample_3g`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeGSample {
    pub samples: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub violations: usize,
}

fn ordered_triple(rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    loop {
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let mut v = [
            rng.random_range(-1.0..1.0) * scale,
            rng.random_range(-1.0..1.0) * scale,
            rng.random_range(-1.0..1.0) * scale,
        ];
        v.sort_by(f64::total_cmp);
        if v[0] < v[1] && v[1] < v[2] {
            return (v[0], v[1], v[2]);
        }
    }
}

/// 3G check on `n` seeded random tuples with `s < u < t`, `x < z < y`.
pub fn sample_3g(n: usize, seed: u64, exec: Exec) -> Result<ThreeGSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tuples: Vec<[f64; 6]> = (0..n)
        .map(|_| {
            let (s, u, t) = ordered_triple(&mut rng);
            let (x, z, y) = ordered_triple(&mut rng);
            [s, x, u, z, t, y]
        })
        .collect();
    let checks = par::map(exec, &tuples, |v| check_3g(v[0], v[1], v[2], v[3], v[4], v[5]));
    let mut out = ThreeGSample {
        samples: n,
        min_ratio: f64::INFINITY,
        max_ratio: 0.0,
        violations: 0,
    };
    for c in checks {
        let c = c?;
        out.min_ratio = out.min_ratio.min(c.ratio);
        out.max_ratio = out.max_ratio.max(c.ratio);
        out.violations += usize::from(!c.all_ok());
    }
    Ok(out)
}

/// Ratios of the 3P and 5P comparisons at one tuple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeP {
    /// `(p(s,x,u,z) ∧ p(u,z,t,y)) / p(s,x,t,y)`.
    pub ratio: f64,
    /// `p p / (p(s,x,t,y) [p + p])`.
    pub five_p: f64,
}

fn quotient(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// 3P and 5P ratios; `0/0` counts as 0 and `a/0` with `a > 0` as infinity.
pub fn check_3p(kernel: &dyn SpaceTimeKernel, s: f64, x: &[f64], u: f64, z: &[f64], t: f64, y: &[f64]) -> ThreeP {
    let whole = kernel.density(s, x, t, y);
    let a = kernel.density(s, x, u, z);
    let b = kernel.density(u, z, t, y);
    ThreeP {
        ratio: quotient(a.min(b), whole),
        five_p: quotient(a * b, whole * (a + b)),
    }
}

/// Empirical 3P and 5P constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreePSample {
    pub samples: usize,
    pub max_3p: f64,
    pub max_5p: f64,
    /// Samples with zero denominator and positive numerator.
    pub unbounded: usize,
}

/// Sampled sup of the 3P and 5P ratios over `s < u < t` and random points.
pub fn sample_3p(kernel: &dyn SpaceTimeKernel, n: usize, seed: u64, exec: Exec) -> Result<ThreePSample> {
    let d = kernel.dim();
    if d == 0 {
        return Err(invalid("the 3P sampler needs a spatial kernel"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tuples: Vec<(f64, f64, f64, Vec<f64>)> = (0..n)
        .map(|_| {
            let (s, u, t) = ordered_triple(&mut rng);
            let scale = 10f64.powf(rng.random_range(-3.0..3.0));
            let pts: Vec<f64> = (0..3 * d).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
            (s, u, t, pts)
        })
        .collect();
    let out = par::map(exec, &tuples, |(s, u, t, pts)| {
        check_3p(kernel, *s, &pts[..d], *u, &pts[d..2 * d], *t, &pts[2 * d..])
    });
    let mut res = ThreePSample {
        samples: n,
        max_3p: 0.0,
        max_5p: 0.0,
        unbounded: 0,
    };
    for r in out {
        if r.ratio.is_infinite() || r.five_p.is_infinite() {
            res.unbounded += 1;
            continue;
        }
        res.max_3p = res.max_3p.max(r.ratio);
        res.max_5p = res.max_5p.max(r.five_p);
    }
    Ok(res)
}

/// `p(s,x,t,y)` divided by `(t-s)/|y-x|^{d+1} ∧ (t-s)^{-d}`.
pub fn cauchy_profile_ratio(kernel: &dyn SpaceTimeKernel, s: f64, x: &[f64], t: f64, y: &[f64]) -> Result<f64> {
    if !(s < t) {
        return Err(invalid("need s < t"));
    }
    let d = kernel.dim() as i32;
    let dt = t - s;
    let r = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let profile = (dt / r.powi(d + 1)).min(dt.powi(-d));
    Ok(kernel.density(s, x, t, y) / profile)
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 0.5) {
        return Err(invalid(format!("the exponent p must lie in (0, 1/2), got {p}")));
    }
    Ok(())
}

/// `2√2 c [B(1/2-p, 1) + B(1/2, 1-p)] h^{1/2-p}`.
pub fn eta_for_kappa(c: f64, p: f64, h: f64) -> Result<f64> {
    check_p(p)?;
    if !(c > 0.0 && h > 0.0) {
        return Err(invalid("need c > 0 and h > 0"));
    }
    Ok(eta_constant(c, p) * h.powf(0.5 - p))
}

fn eta_constant(c: f64, p: f64) -> f64 {
    2.0 * SQRT_2 * c * (beta(0.5 - p, 1.0) + beta(0.5, 1.0 - p))
}

/// The `h` with `eta_for_kappa(c, p, h) = eta`.
pub fn solve_h(c: f64, p: f64, eta: f64) -> Result<f64> {
    check_p(p)?;
    if !(c > 0.0 && eta > 0.0) {
        return Err(invalid("need c > 0 and eta > 0"));
    }
    Ok((eta / eta_constant(c, p)).powf(1.0 / (0.5 - p)))
}

/// Diagonal slicing `a_j = (k - j) h`, `j = 0..=k`, with
/// `(k-1) h <= t + y < k h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalSlices {
    pub h: f64,
    pub a: Vec<f64>,
}

impl DiagonalSlices {
    pub fn new(omega: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) || !(omega > 0.0) {
            return Err(invalid("need h > 0 and t + y > 0"));
        }
        let k = (omega / h).floor() as usize + 1;
        Ok(DiagonalSlices {
            h,
            a: (0..=k).map(|j| (k - j) as f64 * h).collect(),
        })
    }

    pub fn k(&self) -> usize {
        self.a.len() - 1
    }

    /// `S_j` as the band `lo <= u + z < hi`, `j = 1..=k`.
    pub fn band(&self, j: usize) -> (f64, f64) {
        let k = self.k();
        let lo = if j == k { f64::NEG_INFINITY } else { self.a[j] };
        let hi = if j == 1 { f64::INFINITY } else { self.a[j - 1] };
        (lo, hi)
    }

    /// Index `j` of the slice containing `s + x`.
    pub fn slice_of(&self, xi: f64) -> usize {
        (1..=self.k())
            .find(|&j| {
                let (lo, hi) = self.band(j);
                lo <= xi && xi < hi
            })
            .unwrap_or(self.k())
    }
}

/// `K_j f (s,x) / f(s,x)` for `κ` perturbed by `q_0 = c (u+z)^{-p}` on the
/// band `lo <= u + z < hi`, `f = κ(., ., t, y)`.
///
/// The integrand is constant on level lines `u + z = const` apart from the
/// length of the level segment inside the forward cone, so this reduces to a
/// single integral.
pub fn kappa_slice_ratio(
    c: f64,
    p: f64,
    s: f64,
    x: f64,
    t: f64,
    y: f64,
    band: (f64, f64),
    quad: &QuadratureSpec,
) -> Result<Estimate> {
    check_p(p)?;
    if !(s < t && x < y) {
        return Ok(Estimate::ZERO);
    }
    let (tt, yy) = (t - s, y - x);
    let alpha = s + x;
    let omega = tt + yy;
    let lo = 0.0f64.max(band.0 - alpha).max(-alpha);
    let hi = omega.min(band.1 - alpha);
    if !(lo < hi) {
        return Ok(Estimate::ZERO);
    }
    let norm = (4.0 * std::f64::consts::PI).sqrt();
    // (σ, Ω - σ, α + σ) arrive separately so each stays accurate near the
    // end of a piece where it vanishes
    let f = move |sig: f64, rest: f64, level: f64| {
        let len = [tt, t, rest, sig, sig + s, yy, sig + x, level, y]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if !(len > 0.0 && level > 0.0) {
            return 0.0;
        }
        c * level.powf(-p) * len * (omega / (sig * rest)).powf(1.5) / norm
    };
    let mut cuts = vec![yy, yy - s, tt, tt - x];
    cuts.retain(|v| *v > lo && *v < hi);
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let spec = quad.with_substitution(Substitution::Power {
        exponent: 6.0,
        at: Endpoint::Lower,
    });
    let mut total = Estimate::ZERO;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let half = 0.5 * (b - a);
        let (ra, la) = (omega - a, alpha + a);
        let (rb, lb) = (omega - b, alpha + b);
        total = total + integrate_1d(|v| f(a + v, ra - v, la + v), 0.0, half, &spec);
        total = total + integrate_1d(|v| f(b - v, rb + v, lb - v), 0.0, half, &spec);
    }
    Ok(total)
}

/// `∫∫_{[0,h/2]^2} [(u+z)^{-3/2} + (h-u-z)^{-3/2}] (u+z)^{-p} du dz`, the
/// slice integral over the square forward cone of a slice of width `h`.
/// Scales exactly as `h^{1/2-p}`.
pub fn kappa_slice_integral(p: f64, h: f64, quad: &QuadratureSpec) -> Result<Estimate> {
    check_p(p)?;
    if !(h > 0.0) {
        return Err(invalid("need h > 0"));
    }
    let spec = quad.with_substitution(Substitution::Power {
        exponent: 2.0 / (0.5 - p),
        at: Endpoint::Both,
    });
    let f = |v: &[f64]| {
        let xi = v[0] + v[1];
        let rest = h - xi;
        if xi <= 0.0 || rest <= 0.0 {
            return 0.0;
        }
        (xi.powf(-1.5) + rest.powf(-1.5)) * xi.powf(-p)
    };
    integrate_nd(f, &[(0.0, 0.5 * h), (0.0, 0.5 * h)], &spec)
}

/// `log2(I(h) / I(h/2))` for [`kappa_slice_integral`].
pub fn kappa_scaling_exponent(p: f64, h: f64, quad: &QuadratureSpec) -> Result<f64> {
    let a = kappa_slice_integral(p, h, quad)?;
    let b = kappa_slice_integral(p, 0.5 * h, quad)?;
    Ok((a.value / b.value).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spacetime::{Cauchy, Gaussian};
    use approx::assert_relative_eq;

    #[test]
    fn midpoint_attains_upper_constant() {
        let g = check_3g(0.0, 0.0, 0.5, 0.5, 1.0, 1.0).unwrap();
        assert!(g.all_ok());
        assert_relative_eq!(g.ratio, 2.0 * SQRT_2, max_relative = 1e-12);
        let near = check_3g(0.0, 0.0, 1e-3, 1e-3, 1.0, 1.0).unwrap();
        assert!((near.ratio - 1.0).abs() < 5e-3);
        assert!(check_3g(0.0, 0.0, 1.0, 0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn ck_gaussian() {
        let r = check_chapman_kolmogorov(&Gaussian { dim: 1 }, 0.0, &[0.0], 0.5, 1.0, &[0.0], &QuadratureSpec::default())
            .unwrap();
        assert!(r.residual < 1e-9, "{r:?}");
        assert!(check_chapman_kolmogorov(&Gaussian { dim: 1 }, 0.0, &[0.0], 1.0, 1.0, &[0.0], &QuadratureSpec::default())
            .is_err());
    }

    #[test]
    fn ck_cauchy_two_dims() {
        let k = Cauchy::new(2).unwrap();
        let spec = QuadratureSpec::default().with_tol(1e-8, 1e-12);
        let r = check_chapman_kolmogorov(&k, 0.0, &[0.0, 0.3], 0.4, 1.0, &[0.5, -0.2], &spec).unwrap();
        assert!(r.residual < 1e-6 * r.direct.max(1.0), "{r:?}");
    }

    #[test]
    fn eta_values() {
        assert_relative_eq!(beta(0.25, 1.0), 4.0, max_relative = 1e-12);
        let v = eta_for_kappa(1.0, 0.25, 1.0).unwrap();
        assert_relative_eq!(v, 2.0 * SQRT_2 * (4.0 + 2.396_280_469_471_184), max_relative = 1e-10);
        let h = solve_h(0.05, 0.25, 0.5).unwrap();
        assert_relative_eq!(eta_for_kappa(0.05, 0.25, h).unwrap(), 0.5, max_relative = 1e-12);
        assert!(eta_for_kappa(1.0, 0.5, 1.0).is_err());
        assert!(solve_h(1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn diagonal_slices() {
        let d = DiagonalSlices::new(0.5, 0.2).unwrap();
        assert_eq!(d.k(), 3);
        assert_eq!(d.a.len(), 4);
        assert_eq!(d.band(1), (0.4, f64::INFINITY));
        assert_eq!(d.band(3), (f64::NEG_INFINITY, 0.2));
        assert_eq!(d.slice_of(0.45), 1);
        assert_eq!(d.slice_of(0.2), 2);
        assert_eq!(d.slice_of(-3.0), 3);
    }

    #[test]
    fn slice_ratio_against_area_integral() {
        let (c, p) = (0.3, 0.25);
        let (s, x, t, y) = (-0.1, 0.05, 0.4, 0.3);
        let band = (0.1, 0.5);
        let quad = QuadratureSpec::default().with_tol(1e-9, 1e-13);
        let fast = kappa_slice_ratio(c, p, s, x, t, y, band, &quad).unwrap();
        let whole = kappa(s, x, t, y);
        let g = |v: &[f64]| {
            let (u, z) = (v[0], v[1]);
            let xi = u + z;
            if u <= 0.0 || z <= 0.0 || xi < band.0 || xi >= band.1 {
                return 0.0;
            }
            kappa(s, x, u, z) * c * xi.powf(-p) * kappa(u, z, t, y) / whole
        };
        let spec = QuadratureSpec::default()
            .with_tol(1e-7, 1e-10)
            .with_substitution(Substitution::Power { exponent: 4.0, at: Endpoint::Both })
            .with_max_subdivisions(2000);
        let slow = integrate_nd(g, &[(0.0, t), (x, y)], &spec).unwrap();
        assert_relative_eq!(fast.value, slow.value, max_relative = 1e-4);
        assert!(fast.value <= eta_for_kappa(c, p, band.1 - band.0).unwrap());
    }

    #[test]
    fn slice_integral_scaling() {
        let quad = QuadratureSpec::default().with_tol(1e-9, 1e-14);
        for &p in &[0.1, 0.25] {
            let e = kappa_scaling_exponent(p, 0.5, &quad).unwrap();
            assert!((e - (0.5 - p)).abs() < 1e-6, "p {p}: {e}");
        }
    }
}
