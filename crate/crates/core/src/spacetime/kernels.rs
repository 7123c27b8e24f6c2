use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{invalid, Result};
use crate::quadrature::{integrate_1d, Endpoint, QuadratureSpec, Substitution};
use crate::special::{gamma, ln_gamma};

/// Density `p(s, x, t, y)` on `R × R^d` vanishing for `s >= t`.
pub trait SpaceTimeKernel: Send + Sync {
    fn name(&self) -> String;

    /// Spatial dimension; zero for kernels on the time axis alone.
    fn dim(&self) -> usize;

    fn density(&self, s: f64, x: &[f64], t: f64, y: &[f64]) -> f64;

    /// Whether the kernel is claimed to satisfy the Chapman-Kolmogorov
    /// equations with respect to Lebesgue measure.
    fn chapman_kolmogorov(&self) -> bool;

    /// Typical spatial spread of `p(s, x, s + dt, .)`.
    fn spread(&self, dt: f64) -> f64;

    /// Box `[lo, hi]` outside of which `z -> p(s,x,u,z) p(u,z,t,y)` vanishes,
    /// if any (d = 1).
    fn bridge_range(&self, _x: f64, _y: f64) -> Option<(f64, f64)> {
        None
    }

    fn reference_measure(&self) -> &'static str {
        "Lebesgue"
    }
}

pub type SharedKernel = Arc<dyn SpaceTimeKernel>;

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Brownian transition density `[4 pi (t-s)]^(-d/2) exp(-|x-y|^2 / (4(t-s)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub dim: usize,
}

impl SpaceTimeKernel for Gaussian {
    fn name(&self) -> String {
        "gaussian".into()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn density(&self, s: f64, x: &[f64], t: f64, y: &[f64]) -> f64 {
        if s >= t {
            return 0.0;
        }
        let dt = t - s;
        (4.0 * PI * dt).powf(-0.5 * self.dim as f64) * (-sq_dist(x, y) / (4.0 * dt)).exp()
    }

    fn chapman_kolmogorov(&self) -> bool {
        true
    }

    fn spread(&self, dt: f64) -> f64 {
        (2.0 * dt).sqrt()
    }
}

/// Cauchy transition density `c_d (t-s) [(t-s)^2 + |y-x|^2]^(-(d+1)/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cauchy {
    dim: usize,
    c_d: f64,
}

impl Cauchy {
    /// Normalising constant found by radial quadrature of the unnormalised
    /// density at unit time.
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("Cauchy kernel needs d >= 1"));
        }
        let d = dim as f64;
        // surface area of the unit sphere in R^d
        let sphere = 2.0 * PI.powf(0.5 * d) / gamma(0.5 * d);
        let spec = QuadratureSpec::default().with_tol(1e-13, 1e-15);
        let radial = integrate_1d(|r| r.powf(d - 1.0) * (1.0 + r * r).powf(-0.5 * (d + 1.0)), 0.0, f64::INFINITY, &spec);
        Ok(Cauchy {
            dim,
            c_d: 1.0 / (sphere * radial.value),
        })
    }

    /// `Gamma((d+1)/2) / pi^((d+1)/2)`.
    pub fn closed_form_constant(dim: usize) -> f64 {
        let a = 0.5 * (dim as f64 + 1.0);
        (ln_gamma(a) - a * PI.ln()).exp()
    }

    pub fn c_d(&self) -> f64 {
        self.c_d
    }
}

impl SpaceTimeKernel for Cauchy {
    fn name(&self) -> String {
        "cauchy".into()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn density(&self, s: f64, x: &[f64], t: f64, y: &[f64]) -> f64 {
        if s >= t {
            return 0.0;
        }
        let dt = t - s;
        self.c_d * dt * (dt * dt + sq_dist(x, y)).powf(-0.5 * (self.dim as f64 + 1.0))
    }

    fn chapman_kolmogorov(&self) -> bool {
        true
    }

    fn spread(&self, dt: f64) -> f64 {
        dt
    }
}

/// `(4 pi)^(-1/2) (s + x)^(-3/2)` for `s, x > 0`, else 0.
pub fn kappa0(s: f64, x: f64) -> f64 {
    if s > 0.0 && x > 0.0 {
        (s + x).powf(-1.5) / (4.0 * PI).sqrt()
    } else {
        0.0
    }
}

/// `kappa(s, x, u, z) = kappa0(u - s, z - x)`.
pub fn kappa(s: f64, x: f64, u: f64, z: f64) -> f64 {
    kappa0(u - s, z - x)
}

/// Potential kernel of two independent 1/2-stable subordinators, viewed as a
/// kernel on `R × R` whose second coordinate plays the role of space.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Kappa;

impl SpaceTimeKernel for Kappa {
    fn name(&self) -> String {
        "kappa".into()
    }

    fn dim(&self) -> usize {
        1
    }

    fn density(&self, s: f64, x: &[f64], t: f64, y: &[f64]) -> f64 {
        kappa(s, x[0], t, y[0])
    }

    fn chapman_kolmogorov(&self) -> bool {
        false
    }

    fn spread(&self, dt: f64) -> f64 {
        dt
    }

    fn bridge_range(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        Some((x, y))
    }
}

/// Potential kernel of the alpha/2-stable subordinator,
/// `Gamma(alpha/2)^(-1) (t - s)_+^(alpha/2 - 1)`, as a kernel on the line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StablePotential {
    alpha: f64,
    norm: f64,
}

impl StablePotential {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(invalid(format!("alpha must lie in (0, 2), got {alpha}")));
        }
        Ok(StablePotential {
            alpha,
            norm: 1.0 / gamma(alpha / 2.0),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        if y > x {
            self.norm * (y - x).powf(self.alpha / 2.0 - 1.0)
        } else {
            0.0
        }
    }
}

impl SpaceTimeKernel for StablePotential {
    fn name(&self) -> String {
        format!("stable-potential:{}", self.alpha)
    }

    fn dim(&self) -> usize {
        0
    }

    fn density(&self, s: f64, _x: &[f64], t: f64, _y: &[f64]) -> f64 {
        self.eval(s, t)
    }

    fn chapman_kolmogorov(&self) -> bool {
        false
    }

    fn spread(&self, _dt: f64) -> f64 {
        0.0
    }
}

/// `p^R(s, x, t, y) = p(-t, -y, -s, -x)`: time and space reversed.
pub struct Reflected<K: ?Sized> {
    pub inner: Arc<K>,
}

impl<K: SpaceTimeKernel + ?Sized> SpaceTimeKernel for Reflected<K> {
    fn name(&self) -> String {
        format!("reflected {}", self.inner.name())
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn density(&self, s: f64, x: &[f64], t: f64, y: &[f64]) -> f64 {
        let mx: Vec<f64> = x.iter().map(|v| -v).collect();
        let my: Vec<f64> = y.iter().map(|v| -v).collect();
        self.inner.density(-t, &my, -s, &mx)
    }

    fn chapman_kolmogorov(&self) -> bool {
        self.inner.chapman_kolmogorov()
    }

    fn spread(&self, dt: f64) -> f64 {
        self.inner.spread(dt)
    }

    fn bridge_range(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        self.inner.bridge_range(-y, -x).map(|(a, b)| (-b, -a))
    }
}

/// Closed forms of the series for the single atom `eta ε_{u0} ⊗ m` added to
/// a Chapman-Kolmogorov kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomRule {
    /// `p^mu = (1 + eta) p` when `s < u0 < t`; breaks Chapman-Kolmogorov.
    Strict,
    /// `p̃ = (1 - eta)^{-1} p` when `s <= u0 < t`, from the operator that
    /// also counts coincident times.
    Coincident,
}

pub struct AtomPerturbed<K: ?Sized> {
    pub inner: Arc<K>,
    pub u0: f64,
    pub eta: f64,
    pub rule: AtomRule,
}

impl<K: SpaceTimeKernel + ?Sized> AtomPerturbed<K> {
    pub fn factor(&self, s: f64, t: f64) -> f64 {
        match self.rule {
            AtomRule::Strict if s < self.u0 && self.u0 < t => 1.0 + self.eta,
            AtomRule::Coincident if s <= self.u0 && self.u0 < t => 1.0 / (1.0 - self.eta),
            _ => 1.0,
        }
    }
}

impl<K: SpaceTimeKernel + ?Sized> SpaceTimeKernel for AtomPerturbed<K> {
    fn name(&self) -> String {
        format!("{} with atom {} at {} ({:?})", self.inner.name(), self.eta, self.u0, self.rule)
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn density(&self, s: f64, x: &[f64], t: f64, y: &[f64]) -> f64 {
        self.factor(s, t) * self.inner.density(s, x, t, y)
    }

    fn chapman_kolmogorov(&self) -> bool {
        self.rule == AtomRule::Coincident && self.inner.chapman_kolmogorov()
    }

    fn spread(&self, dt: f64) -> f64 {
        self.inner.spread(dt)
    }
}

/// Kernel by registry name: `gaussian`, `cauchy`, `kappa` or
/// `stable-potential:<alpha>`.
pub fn kernel_by_name(name: &str, dim: usize) -> Result<SharedKernel> {
    let name = name.trim();
    if let Some(alpha) = name.strip_prefix("stable-potential:") {
        let alpha: f64 = alpha
            .parse()
            .map_err(|_| invalid(format!("cannot parse alpha in {name:?}")))?;
        return Ok(Arc::new(StablePotential::new(alpha)?));
    }
    match name {
        "gaussian" if dim >= 1 => Ok(Arc::new(Gaussian { dim })),
        "cauchy" => Ok(Arc::new(Cauchy::new(dim)?)),
        "kappa" if dim == 1 => Ok(Arc::new(Kappa)),
        "kappa" => Err(invalid("kappa lives on R × R, use dim = 1")),
        _ => Err(invalid(format!("unknown kernel {name:?}"))),
    }
}

/// Density of the 1/2-stable subordinator at time `t`:
/// `(4 pi)^(-1/2) t x^(-3/2) exp(-t^2 / (4x))` for `x > 0`.
pub fn subordinator_density(t: f64, x: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid(format!("subordinator time must be positive, got {t}")));
    }
    Ok(subordinator_density_unchecked(t, x))
}

pub(crate) fn subordinator_density_unchecked(t: f64, x: f64) -> f64 {
    if x > 0.0 {
        t * x.powf(-1.5) * (-t * t / (4.0 * x)).exp() / (4.0 * PI).sqrt()
    } else {
        0.0
    }
}

/// Laplace transform `int_0^inf f_t(x) e^{-ux} dx` by quadrature.
pub fn subordinator_laplace(t: f64, u: f64, spec: &QuadratureSpec) -> Result<crate::quadrature::Estimate> {
    subordinator_density(t, 1.0)?;
    let spec = spec.with_tail_scale(t * t).with_substitution(Substitution::None);
    Ok(integrate_1d(
        |x| subordinator_density_unchecked(t, x) * (-u * x).exp(),
        0.0,
        f64::INFINITY,
        &spec,
    ))
}

/// `int_0^inf f_t(a) f_t(b) dt` by quadrature; equals `kappa0(a, b)`.
pub fn kappa_time_integral(a: f64, b: f64, spec: &QuadratureSpec) -> crate::quadrature::Estimate {
    if !(a > 0.0 && b > 0.0) {
        return crate::quadrature::Estimate::exact(0.0);
    }
    let scale = (a + b).sqrt();
    integrate_1d(
        |t| subordinator_density_unchecked(t, a) * subordinator_density_unchecked(t, b),
        0.0,
        f64::INFINITY,
        &spec.with_tail_scale(scale),
    )
}

/// `int_0^inf p_t(y) dt` for the subordinator with density `f_t`, which is
/// the stable potential with `alpha = 1`.
pub fn subordinator_potential(y: f64, spec: &QuadratureSpec) -> crate::quadrature::Estimate {
    if !(y > 0.0) {
        return crate::quadrature::Estimate::exact(0.0);
    }
    integrate_1d(
        |t| subordinator_density_unchecked(t, y),
        0.0,
        f64::INFINITY,
        &spec
            .with_tail_scale(y.sqrt())
            .with_substitution(Substitution::Sqrt(Endpoint::Lower)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec() -> QuadratureSpec {
        QuadratureSpec::default().with_tol(1e-12, 1e-15)
    }

    #[test]
    fn gaussian_values() {
        let g = Gaussian { dim: 1 };
        assert_eq!(g.density(1.0, &[0.0], 1.0, &[0.0]), 0.0);
        assert_eq!(g.density(2.0, &[0.0], 1.0, &[0.0]), 0.0);
        assert_relative_eq!(g.density(0.0, &[0.0], 1.0, &[0.0]), 0.282_094_791_8, max_relative = 1e-10);
        let mass = integrate_1d(|z| g.density(0.3, &[0.2], 1.1, &[z]), f64::NEG_INFINITY, f64::INFINITY, &spec());
        assert!((mass.value - 1.0).abs() < 1e-8);
    }

    #[test]
    fn cauchy_constant() {
        let c = Cauchy::new(1).unwrap();
        assert_relative_eq!(c.c_d(), 1.0 / PI, max_relative = 1e-12);
        for d in 1..=4 {
            assert_relative_eq!(Cauchy::new(d).unwrap().c_d(), Cauchy::closed_form_constant(d), max_relative = 1e-10);
        }
        assert_eq!(c.density(1.0, &[0.0], 0.5, &[0.0]), 0.0);
    }

    #[test]
    fn subordinator_values() {
        assert_eq!(subordinator_density(1.0, -1.0).unwrap(), 0.0);
        assert_eq!(subordinator_density(1.0, 0.0).unwrap(), 0.0);
        assert!(subordinator_density(0.0, 1.0).is_err());
        assert_relative_eq!(subordinator_density(1.0, 1.0).unwrap(), 0.219_695_644_7, max_relative = 1e-6);
        let lt = subordinator_laplace(1.0, 1.0, &spec()).unwrap();
        assert!((lt.value - (-1.0f64).exp()).abs() < 1e-6);
        let lt = subordinator_laplace(0.7, 2.0, &spec()).unwrap();
        assert!((lt.value - (-0.7 * 2f64.sqrt()).exp()).abs() < 1e-6);
    }

    #[test]
    fn kappa_values() {
        assert_eq!(kappa(0.0, 0.0, 0.0, 1.0), 0.0);
        assert_eq!(kappa(0.0, 0.0, 1.0, -1.0), 0.0);
        assert_relative_eq!(kappa(0.0, 0.0, 1.0, 1.0), 0.099_735_6, max_relative = 1e-6);
        for (a, b) in [(1.0, 1.0), (0.2, 3.0), (2.5, 0.1)] {
            let e = kappa_time_integral(a, b, &spec());
            assert!((e.value - kappa0(a, b)).abs() < 1e-6, "{a} {b}");
        }
    }

    #[test]
    fn stable_potential() {
        let k = StablePotential::new(1.0).unwrap();
        assert_eq!(k.eval(1.0, 1.0), 0.0);
        assert_relative_eq!(k.eval(0.0, 1.0), 0.564_189_6, max_relative = 1e-6);
        assert!(StablePotential::new(2.0).is_err());
        for y in [0.5, 1.0, 3.0] {
            let e = subordinator_potential(y, &spec());
            assert!((e.value - k.eval(0.0, y)).abs() < 1e-4);
        }
    }

    #[test]
    fn causality_on_a_grid() {
        let kernels: Vec<SharedKernel> = vec![
            kernel_by_name("gaussian", 2).unwrap(),
            kernel_by_name("cauchy", 1).unwrap(),
            kernel_by_name("kappa", 1).unwrap(),
            kernel_by_name("stable-potential:0.5", 0).unwrap(),
        ];
        for k in &kernels {
            let d = k.dim();
            for i in 0..5 {
                let s = i as f64 * 0.5;
                for dt in [0.0, -0.3, -2.0] {
                    let x = vec![0.1 * i as f64; d];
                    let y = vec![-0.2; d];
                    assert_eq!(k.density(s, &x, s + dt, &y), 0.0, "{}", k.name());
                }
            }
        }
        assert!(kernel_by_name("nope", 1).is_err());
    }

    #[test]
    fn reflection_swaps_ends() {
        let base: Arc<Kappa> = Arc::new(Kappa);
        let r = Reflected { inner: base };
        assert_eq!(r.density(-1.0, &[-1.0], 0.0, &[0.0]), kappa(0.0, 0.0, 1.0, 1.0));
        assert_eq!(r.bridge_range(-2.0, 1.0), Some((-2.0, 1.0)));
    }
}
