//! The Weyl half-derivative and residuals of the left-inverse identities for
//! `κ` and its Schrödinger perturbation `κ̃`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounds::CertificateStatus;
use crate::error::{invalid, Error, Result};
use crate::perturbation::{Density, PerturbingMeasure, SeriesSolver, SolverSpec};
use crate::quadrature::{integrate_1d, integrate_pieces, Endpoint, Estimate, QuadratureSpec, Substitution};

use super::kernels::{kappa, Kappa, Reflected};

fn cuts(range: (f64, f64), cut: f64) -> Vec<f64> {
    if cut > range.0 && cut < range.1 {
        vec![range.0, cut, range.1]
    } else {
        vec![range.0, range.1]
    }
}

fn converged(est: Estimate, what: &str) -> Result<Estimate> {
    if est.converged && est.value.is_finite() {
        Ok(est)
    } else {
        Err(Error::Quadrature(format!("{what}: the integral did not converge")))
    }
}

/// `π^{-1/2} ∫_0^∞ z^{-1/2} φ'(x+z) dz`, computed as
/// `2 π^{-1/2} ∫_0^∞ φ'(x+w²) dw`.
pub fn weyl_half_derivative<F>(dphi: F, x: f64, quad: &QuadratureSpec) -> Result<Estimate>
where
    F: Fn(f64) -> f64,
{
    let spec = QuadratureSpec {
        substitution: Substitution::None,
        ..*quad
    };
    let est = integrate_1d(|w| dphi(x + w * w), 0.0, f64::INFINITY, &spec);
    Ok(converged(est, "half-derivative")?.scale(2.0 / PI.sqrt()))
}

/// `(4π)^{-1/2} ∫_0^∞ z^{-3/2} (φ(x+z) - φ(x)) dz`, computed as
/// `π^{-1/2} ∫_0^∞ w^{-2} (φ(x+w²) - φ(x)) dw`.
pub fn weyl_half_derivative_difference<F>(phi: F, x: f64, quad: &QuadratureSpec) -> Result<Estimate>
where
    F: Fn(f64) -> f64,
{
    let spec = QuadratureSpec {
        substitution: Substitution::None,
        ..*quad
    };
    let base = phi(x);
    let est = integrate_1d(|w| if w > 0.0 { (phi(x + w * w) - base) / (w * w) } else { 0.0 }, 0.0, f64::INFINITY, &spec);
    Ok(converged(est, "half-derivative")?.scale(1.0 / PI.sqrt()))
}

/// `b(v) = (1 - ((v - centre)/radius)²)^4` on its support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump1 {
    pub centre: f64,
    pub radius: f64,
}

impl Bump1 {
    pub fn value(&self, v: f64) -> f64 {
        let r = (v - self.centre) / self.radius;
        if r.abs() >= 1.0 {
            0.0
        } else {
            (1.0 - r * r).powi(4)
        }
    }

    pub fn derivative(&self, v: f64) -> f64 {
        let r = (v - self.centre) / self.radius;
        if r.abs() >= 1.0 {
            0.0
        } else {
            -8.0 * r * (1.0 - r * r).powi(3) / self.radius
        }
    }

    pub fn support(&self) -> (f64, f64) {
        (self.centre - self.radius, self.centre + self.radius)
    }

    /// Half-derivative over the finite range where `b'(v + w²)` can be nonzero.
    pub fn half_derivative(&self, v: f64, quad: &QuadratureSpec) -> Estimate {
        let (lo, hi) = self.support();
        if v >= hi {
            return Estimate::ZERO;
        }
        let a = (lo - v).max(0.0).sqrt();
        let b = (hi - v).sqrt();
        let spec = QuadratureSpec {
            substitution: Substitution::None,
            ..*quad
        };
        integrate_1d(|w| self.derivative(v + w * w), a, b, &spec).scale(2.0 / PI.sqrt())
    }
}

/// Tensor bump `φ(u, z) = b_u(u) b_z(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub u: Bump1,
    pub z: Bump1,
}

impl Default for Bump {
    fn default() -> Self {
        Bump {
            u: Bump1 { centre: 0.2, radius: 1.0 },
            z: Bump1 { centre: 0.1, radius: 1.0 },
        }
    }
}

impl Bump {
    pub fn value(&self, u: f64, z: f64) -> f64 {
        self.u.value(u) * self.z.value(z)
    }
}

/// Which kernel the identity is tested for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LeftInverseKernel {
    /// `∫∫ κ (∂_u^{1/2} + ∂_z^{1/2}) φ = -φ`.
    Kappa,
    /// `∫∫ κ̃ (∂_u^{1/2} + ∂_z^{1/2} + q) φ = -φ` with `q = c (u+z)^{-p}`.
    Perturbed { c: f64, p: f64 },
}

/// Result of [`left_inverse_residual`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeftInverseReport {
    pub integral: Estimate,
    pub phi: f64,
    /// `|integral + φ(s, x)|`.
    pub residual: f64,
    pub tolerance: f64,
    pub status: CertificateStatus,
}

/// Residual of the left-inverse identity at `(s, x)`.
///
/// For `κ̃` the ratio `κ̃ / κ` is taken from the series solver applied to the
/// time-and-space reflected problem, whose target is `(-s, -x)`.
pub fn left_inverse_residual(
    kernel: LeftInverseKernel,
    bump: &Bump,
    s: f64,
    x: f64,
    tolerance: f64,
    quad: &QuadratureSpec,
    solver: &SolverSpec,
) -> Result<LeftInverseReport> {
    let (u_lo, u_hi) = bump.u.support();
    let (z_lo, z_hi) = bump.z.support();
    let q: Box<dyn Fn(f64, f64) -> f64 + Sync> = match kernel {
        LeftInverseKernel::Kappa => Box::new(|_, _| 0.0),
        LeftInverseKernel::Perturbed { c, p } => {
            let d = Density::Q0 { c, p };
            d.validate()?;
            Box::new(move |u, z| d.eval(u, &[z]))
        }
    };
    let field = match kernel {
        LeftInverseKernel::Kappa => None,
        LeftInverseKernel::Perturbed { c, p } => {
            let mu = PerturbingMeasure::new(Density::Q0 { c, p }, Vec::new())?.reflect();
            let reflected = Reflected { inner: Arc::new(Kappa) };
            let corner = (-u_hi.max(s), -z_hi.max(x));
            let solver = SeriesSolver::new(&reflected, &mu, -s, -x, &[corner], solver)?;
            Some(solver.ratio_field())
        }
    };
    let ratio = |u: f64, z: f64| field.as_ref().map_or(1.0, |f| f.eval(-u, -z));

    let spec = quad.with_substitution(Substitution::Power {
        exponent: 6.0,
        at: Endpoint::Lower,
    });
    let all_ok = std::cell::Cell::new(true);
    let track = |e: Estimate| {
        all_ok.set(all_ok.get() && e.converged);
        e.value
    };
    // ∫ dv w(v) ∫ dv' κ (κ̃/κ) g(u, z) with (v, v') = (u, z), or (z, u) when
    // `swap`; both variables run over offsets from (s, x)
    let nested = |outer_range: (f64, f64),
                  outer_cut: f64,
                  inner_range: (f64, f64),
                  inner_cut: f64,
                  swap: bool,
                  w: &dyn Fn(f64) -> f64,
                  g: &dyn Fn(f64, f64) -> f64| {
        if !(outer_range.0 < outer_range.1 && inner_range.0 < inner_range.1) {
            return Estimate::ZERO;
        }
        let (o0, i0) = if swap { (x, s) } else { (s, x) };
        let shift = |r: (f64, f64), b: f64| (r.0 - b, r.1 - b);
        let outer = |dv: f64| {
            let wv = w(o0 + dv);
            if wv == 0.0 {
                return 0.0;
            }
            let inner = |dv2: f64| {
                let (du, dz) = if swap { (dv2, dv) } else { (dv, dv2) };
                let k = kappa(0.0, 0.0, du, dz);
                if k == 0.0 {
                    0.0
                } else {
                    let (u, z) = (s + du, x + dz);
                    k * ratio(u, z) * g(u, z)
                }
            };
            wv * track(integrate_pieces(inner, &cuts(shift(inner_range, i0), inner_cut - i0), &spec))
        };
        integrate_pieces(outer, &cuts(shift(outer_range, o0), outer_cut - o0), &spec)
    };
    let du = |u: f64| track(bump.u.half_derivative(u, quad));
    let dz = |z: f64| track(bump.z.half_derivative(z, quad));
    let bu = |u: f64| bump.u.value(u);
    let bz = |_: f64, z: f64| bump.z.value(z);
    let bu_at = |u: f64, _: f64| bump.u.value(u);
    let qbz = |u: f64, z: f64| q(u, z) * bump.z.value(z);
    let u_supp = (s.max(u_lo), u_hi);
    let z_supp = (x.max(z_lo), z_hi);
    let a = nested((s, u_hi), u_lo, z_supp, z_lo, false, &du, &bz);
    let b = nested((x, z_hi), z_lo, u_supp, u_lo, true, &dz, &bu_at);
    let c = match kernel {
        LeftInverseKernel::Kappa => Estimate::ZERO,
        LeftInverseKernel::Perturbed { .. } => nested(u_supp, u_lo, z_supp, z_lo, false, &bu, &qbz),
    };
    let integral = a + b + c;
    let converged = integral.converged && all_ok.get();
    let phi = bump.value(s, x);
    let residual = (integral.value + phi).abs();
    if !(tolerance >= 0.0) {
        return Err(invalid("tolerance must be nonnegative"));
    }
    let status = if !converged {
        CertificateStatus::Inconclusive
    } else if residual <= tolerance {
        CertificateStatus::Valid
    } else {
        CertificateStatus::Invalid
    };
    Ok(LeftInverseReport {
        integral: Estimate { converged, ..integral },
        phi,
        residual,
        tolerance,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exponential() {
        let quad = QuadratureSpec::default();
        for i in 0..=10 {
            let x = 0.5 * i as f64;
            let d = weyl_half_derivative(|v| -(-v).exp(), x, &quad).unwrap();
            assert_abs_diff_eq!(d.value, -(-x).exp(), epsilon = 1e-9);
        }
        let zero = weyl_half_derivative(|_| 0.0, 0.3, &quad).unwrap();
        assert_eq!(zero.value, 0.0);
    }

    #[test]
    fn forms_agree_on_bump() {
        let b = Bump1 { centre: 0.3, radius: 0.7 };
        let quad = QuadratureSpec::default();
        for &v in &[-2.0, -0.5, 0.0, 0.3, 0.8] {
            let a = b.half_derivative(v, &quad);
            let c = weyl_half_derivative_difference(|w| b.value(w), v, &quad).unwrap();
            let g = weyl_half_derivative(|w| b.derivative(w), v, &quad).unwrap();
            assert_abs_diff_eq!(a.value, c.value, epsilon = 1e-7);
            assert_abs_diff_eq!(a.value, g.value, epsilon = 1e-7);
        }
    }

    #[test]
    fn bump_outside_the_cone() {
        let bump = Bump {
            u: Bump1 { centre: -2.0, radius: 0.5 },
            z: Bump1 { centre: -2.0, radius: 0.5 },
        };
        let r = left_inverse_residual(
            LeftInverseKernel::Kappa,
            &bump,
            0.0,
            0.0,
            1e-12,
            &QuadratureSpec::default(),
            &SolverSpec::default(),
        )
        .unwrap();
        assert_eq!(r.residual, 0.0);
        assert_eq!(r.status, CertificateStatus::Valid);
    }
}
