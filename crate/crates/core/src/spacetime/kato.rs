//! Sampled Kato modulus
//! `k(h) = sup_{x, y, s < t <= s+h} ∫∫_{[s,t] × R^d} [p(s,x,u,z) + p(u,z,t,y)] dmu(u,z)`
//! and the certificates it yields.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::bounds::CertificateStatus;
use crate::error::{invalid, precondition, Error, Result};
use crate::par::{self, Exec};
use crate::perturbation::semi::{theorem46_certify, uniform_slices, Engine, SemiProblem, SemiReport, SliceSampler};
use crate::perturbation::{PerturbingMeasure, SolverSpec};
use crate::quadrature::{integrate_1d, integrate_line, integrate_pieces, Endpoint, Estimate, QuadratureSpec, Substitution};

use super::kernels::SpaceTimeKernel;

/// Sample grid for the sup. Time is fixed at `s = 0`, which is exact for
/// time-homogeneous measures; spatial points lie on the first axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KatoSpec {
    /// Values of `(t - s) / h`.
    pub dt_fractions: Vec<f64>,
    /// Positions of `x` and `y` along the first axis, in units of `h`.
    pub offsets: Vec<f64>,
    pub quad: QuadratureSpec,
    pub exec: Exec,
}

impl Default for KatoSpec {
    fn default() -> Self {
        KatoSpec {
            dt_fractions: vec![0.25, 0.5, 1.0],
            offsets: vec![-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0],
            quad: QuadratureSpec::default().with_tol(1e-10, 1e-14),
            exec: Exec::Parallel,
        }
    }
}

/// The maximising sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KatoSample {
    pub dt: f64,
    pub x: f64,
    pub y: f64,
    /// `∫∫ p(0,x,u,z) dmu`.
    pub forward: f64,
    /// `∫∫ p(u,z,dt,y) dmu`.
    pub backward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KatoReport {
    pub h: f64,
    pub value: f64,
    pub argmax: Option<KatoSample>,
    pub samples: usize,
    pub provenance: String,
}

fn around(spread: f64) -> Vec<f64> {
    let mut v = vec![0.0];
    for k in [1.0, 10.0, 100.0] {
        v.push(-k * spread);
        v.push(k * spread);
    }
    v
}

/// `∫ f(ζ, ζ + shift e_1) dζ` for a kernel peaked at `ζ = 0` with width
/// `spread` and a density that may be singular at `z = 0`.
fn space_integral(
    d: usize,
    shift: f64,
    spread: f64,
    f: &dyn Fn(&[f64], &[f64]) -> f64,
    quad: &QuadratureSpec,
) -> Result<Estimate> {
    let spread = spread.max(f64::MIN_POSITIVE);
    let line = quad.with_tail_scale(spread).with_substitution(Substitution::Power {
        exponent: 4.0,
        at: Endpoint::Both,
    });
    match d {
        1 if shift == 0.0 => Ok(integrate_line(|z| f(&[z], &[z]), &around(spread), &line)),
        1 => {
            // the half containing the peak in ζ, the half containing the
            // singularity in z, so neither point loses precision
            let far = f64::INFINITY.copysign(shift);
            let mid = -shift / 2.0;
            let mut near: Vec<f64> = around(spread)
                .into_iter()
                .filter(|c| (c - mid) * shift > 0.0)
                .collect();
            near.extend([mid, far]);
            near.sort_by(f64::total_cmp);
            let peak = integrate_pieces(|zeta| f(&[zeta], &[zeta + shift]), &near, &line);
            let mut sing = vec![shift / 2.0, 0.0, -shift, -far];
            sing.sort_by(f64::total_cmp);
            let tail = line.with_tail_scale(spread.max(shift.abs()));
            let rest = integrate_pieces(|z| f(&[z - shift], &[z]), &sing, &tail);
            Ok(peak + rest)
        }
        2 => {
            // polar coordinates around the peak; the angle φ is measured from
            // the singular direction, and beyond ρ = |shift|/2 the radius is
            // measured as δ = ρ - |shift|
            let a = shift.abs();
            let sgn = if shift < 0.0 { -1.0 } else { 1.0 };
            let ok = std::cell::Cell::new(true);
            let angular = |rho: f64, delta: f64| {
                if !(rho > 0.0) {
                    return 0.0;
                }
                let g = |phi: f64| {
                    let (sin, cos) = phi.sin_cos();
                    let half = (0.5 * phi).sin();
                    let zeta = [-sgn * rho * cos, -sgn * rho * sin];
                    f(&zeta, &[sgn * (2.0 * rho * half * half - delta), zeta[1]])
                };
                let e = integrate_pieces(g, &[-PI, 0.0, PI], &line);
                ok.set(ok.get() && e.converged);
                rho * e.value
            };
            let split = 0.5 * a;
            let mut near: Vec<f64> = around(spread).into_iter().filter(|v| *v >= 0.0 && *v < split).collect();
            let mut far: Vec<f64> = around(spread)
                .into_iter()
                .filter(|v| *v > split)
                .chain([a, 2.0 * a])
                .map(|r| r - a)
                .collect();
            let mut out = Estimate::ZERO;
            if a > 0.0 {
                near.push(split);
                far.push(split - a);
                near.sort_by(f64::total_cmp);
                near.dedup();
                out = out + integrate_pieces(|rho| angular(rho, rho - a), &near, &line);
            } else {
                far.push(0.0);
            }
            far.sort_by(f64::total_cmp);
            far.dedup();
            out = out + integrate_pieces(|delta| angular(a + delta, delta), &far, &line);
            let last = *far.last().expect("nonempty");
            out = out + integrate_1d(|delta| angular(a + delta, delta), last, f64::INFINITY, &line);
            out.converged &= ok.get();
            Ok(out)
        }
        _ => Err(invalid(format!("the Kato sampler handles d = 1 and d = 2, got d = {d}"))),
    }
}

/// `∫_0^dt ∫ p(0,x,u,z) dmu` when `forward`, else `∫_0^dt ∫ p(u,z,dt,y) dmu`,
/// with `x` or `y` at `point e_1`. The kernel is assumed invariant under
/// spatial translations, so `z` is measured from that point.
fn cone_integral(
    kernel: &dyn SpaceTimeKernel,
    mu: &PerturbingMeasure,
    dt: f64,
    point: f64,
    forward: bool,
    quad: &QuadratureSpec,
) -> Result<Estimate> {
    let d = kernel.dim();
    let origin = vec![0.0; d];
    let failed = std::cell::Cell::new(false);
    let inner = |u: f64| {
        let elapsed = if forward { u } else { dt - u };
        if !(elapsed > 0.0) {
            return 0.0;
        }
        let f = |zeta: &[f64], z: &[f64]| {
            let p = if forward {
                kernel.density(0.0, &origin, u, zeta)
            } else {
                kernel.density(u, zeta, dt, &origin)
            };
            if p == 0.0 {
                return 0.0;
            }
            p * mu.q(u, z)
        };
        match space_integral(d, point, kernel.spread(elapsed), &f, quad) {
            Ok(e) => {
                if !e.converged {
                    failed.set(true);
                }
                e.value
            }
            Err(_) => {
                failed.set(true);
                f64::NAN
            }
        }
    };
    let spec = quad.with_substitution(Substitution::Power {
        exponent: 4.0,
        at: Endpoint::Both,
    });
    let est = integrate_1d(inner, 0.0, dt, &spec);
    if failed.get() || !est.converged || !est.value.is_finite() {
        return Err(Error::Quadrature(format!(
            "Kato integral diverged at dt = {dt}, {} = {point}",
            if forward { "x" } else { "y" }
        )));
    }
    Ok(est)
}

/// Sampled `k(h)`.
pub fn kato_modulus(kernel: &dyn SpaceTimeKernel, mu: &PerturbingMeasure, h: f64, spec: &KatoSpec) -> Result<KatoReport> {
    if !(h > 0.0) {
        return Err(invalid("h must be positive"));
    }
    if !mu.atoms().is_empty() {
        return Err(precondition("the Kato sampler takes measures with a density"));
    }
    let provenance = format!(
        "s = 0, dt/h in {:?}, offsets/h in {:?} along the first axis",
        spec.dt_fractions, spec.offsets
    );
    if mu.is_zero() {
        return Ok(KatoReport {
            h,
            value: 0.0,
            argmax: None,
            samples: 0,
            provenance,
        });
    }
    let mut jobs = Vec::new();
    for &f in &spec.dt_fractions {
        for &o in &spec.offsets {
            for forward in [true, false] {
                jobs.push((f * h, o * h, forward));
            }
        }
    }
    let vals = par::map(spec.exec, &jobs, |&(dt, pt, fwd)| cone_integral(kernel, mu, dt, pt, fwd, &spec.quad));
    let mut best: Option<KatoSample> = None;
    for &f in &spec.dt_fractions {
        let dt = f * h;
        let mut fw = (f64::NEG_INFINITY, 0.0);
        let mut bw = (f64::NEG_INFINITY, 0.0);
        for (job, v) in jobs.iter().zip(&vals) {
            if job.0 != dt {
                continue;
            }
            let v = v.clone()?.value;
            let slot = if job.2 { &mut fw } else { &mut bw };
            if v > slot.0 {
                *slot = (v, job.1);
            }
        }
        let sample = KatoSample {
            dt,
            x: fw.1,
            y: bw.1,
            forward: fw.0,
            backward: bw.0,
        };
        if best.is_none_or(|b| sample.forward + sample.backward > b.forward + b.backward) {
            best = Some(sample);
        }
    }
    Ok(KatoReport {
        h,
        value: best.map_or(0.0, |b| b.forward + b.backward),
        argmax: best,
        samples: jobs.len(),
        provenance,
    })
}

/// One sampled point checked against `(1 - eta)^{-(1 + (t-s)/h)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KatoPoint {
    pub s: f64,
    pub x: f64,
    pub ratio: f64,
    pub bound: f64,
    pub status: CertificateStatus,
}

#[derive(Debug, Clone)]
pub struct KatoCertificate {
    pub k_h: f64,
    pub c: f64,
    pub eta: f64,
    /// Slice certificates with `eta = c k(h)` on `I_j = [t - jh, t - (j-1)h)`.
    pub slices: SemiReport,
    pub points: Vec<KatoPoint>,
}

/// Certifies `p^mu <= (1 - eta)^{-(1 + (t-s)/h)} p` with `eta = c k(h)` on
/// `slices` intervals of width `h` below `t` (d = 1).
pub fn kato_certify(
    kernel: &dyn SpaceTimeKernel,
    mu: &PerturbingMeasure,
    c: f64,
    h: f64,
    t: f64,
    y: f64,
    slices: usize,
    sampler: &SliceSampler,
    kato: &KatoSpec,
    solver: &SolverSpec,
) -> Result<KatoCertificate> {
    if !(c >= 1.0) || slices == 0 {
        return Err(invalid("need c >= 1 and at least one slice"));
    }
    let k_h = kato_modulus(kernel, mu, h, kato)?.value;
    let eta = c * k_h;
    let problem = SemiProblem {
        kernel,
        mu,
        y,
        intervals: uniform_slices(t - slices as f64 * h, t, h)?,
        engine: Engine::Measure,
        solver: *solver,
    };
    let report = theorem46_certify(&problem, Some(eta), sampler)?;
    let tol = 10.0 * solver.quad.rel_tol;
    let mut points = Vec::new();
    for (cert, vals) in report.certificates.iter().zip(&report.values) {
        for v in vals {
            let bound = if eta < 1.0 {
                (1.0 - eta).powf(-(1.0 + (t - v.s) / h))
            } else {
                f64::INFINITY
            };
            let status = match cert.status {
                CertificateStatus::HypothesisFail | CertificateStatus::Inconclusive => cert.status,
                _ if v.ratio() <= bound * (1.0 + tol) => CertificateStatus::Valid,
                _ => CertificateStatus::Invalid,
            };
            points.push(KatoPoint {
                s: v.s,
                x: v.x,
                ratio: v.ratio(),
                bound,
                status,
            });
        }
    }
    Ok(KatoCertificate {
        k_h,
        c,
        eta,
        slices: report,
        points,
    })
}
