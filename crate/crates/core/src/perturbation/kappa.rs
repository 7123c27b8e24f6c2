//! Certificates for `κ̃ = Σ (κq)^m κ` with `q = q_0` on the diagonal slices
//! `S_j = {a_j <= u + z < a_{j-1}}`.

use serde::{Deserialize, Serialize};

use crate::bounds::{certify, BoundCertificate, CertificateStatus, Mode, SliceConstants};
use crate::error::{invalid, Result};
use crate::par;
use crate::quadrature::Estimate;
use crate::sampling::Halton;
use crate::spacetime::{eta_for_kappa, kappa_slice_ratio, DiagonalSlices, Kappa};

use super::measure::{Density, PerturbingMeasure};
use super::semi::PointSeries;
use super::solver::{PerturbedValue, SeriesSolver, SolverSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaProblem {
    pub c: f64,
    pub p: f64,
    pub t: f64,
    pub y: f64,
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaSampler {
    pub per_slice: usize,
    pub seed: u64,
}

impl Default for KappaSampler {
    fn default() -> Self {
        KappaSampler { per_slice: 10, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct KappaReport {
    pub slices: DiagonalSlices,
    /// `eta_for_kappa(c, p, h)`, used as both `eta` and `beta`.
    pub eta: f64,
    /// Sampled `sup K_j f / f` on `S_j` and on all samples.
    pub measured: SliceConstants,
    pub certificates: Vec<BoundCertificate>,
    pub values: Vec<Vec<PerturbedValue>>,
}

impl KappaSampler {
    /// Points of `S_j` inside the backward cone `s < t`, `x < y`.
    pub fn points(&self, problem: &KappaProblem, slices: &DiagonalSlices, j: usize) -> Result<Vec<(f64, f64)>> {
        let (t, y) = (problem.t, problem.y);
        let (lo, hi) = slices.band(j);
        let lo = if lo.is_finite() { lo } else { -slices.h };
        let hi = hi.min(t + y);
        if !(lo < hi) {
            return Ok(Vec::new());
        }
        let halton = Halton::new(2, Some(self.seed.wrapping_add(j as u64)))?;
        let to_point = |xi: f64, w: f64| {
            let (dlo, dhi) = (xi - 2.0 * y, 2.0 * t - xi);
            let d = dlo + (dhi - dlo) * w;
            (0.5 * (xi + d), 0.5 * (xi - d))
        };
        let mut out = vec![to_point(lo, 0.5)];
        let mut buf = [0.0; 2];
        for i in 0..self.per_slice.saturating_sub(1) as u64 {
            halton.point(i, &mut buf);
            out.push(to_point(lo + (hi - lo) * buf[0], buf[1]));
        }
        Ok(out)
    }
}

/// Certifies `κ̃ <= (1 - eta)^{-j} κ` on `S_j` with
/// `eta = eta_for_kappa(c, p, h)`.
pub fn kappa_certify(problem: &KappaProblem, sampler: &KappaSampler, solver: &SolverSpec) -> Result<KappaReport> {
    let KappaProblem { c, p, t, y, h } = *problem;
    let eta = eta_for_kappa(c, p, h)?;
    if !(t + y > 0.0) {
        return Err(invalid("need t + y > 0; otherwise κ̃ = κ"));
    }
    let slices = DiagonalSlices::new(t + y, h)?;
    let k = slices.k();
    let per_slice: Vec<Vec<(f64, f64)>> = (1..=k)
        .map(|j| sampler.points(problem, &slices, j))
        .collect::<Result<_>>()?;
    let all: Vec<(f64, f64)> = per_slice.iter().flatten().copied().collect();

    let quad = solver.quad;
    let jobs: Vec<(usize, (f64, f64))> = (1..=k).flat_map(|j| all.iter().map(move |&pt| (j, pt))).collect();
    let ratios: Vec<Result<Estimate>> = par::map(solver.exec, &jobs, |&(j, (s, x))| {
        kappa_slice_ratio(c, p, s, x, t, y, slices.band(j), &quad)
    });
    let mut per_eta = vec![0.0f64; k];
    let mut per_beta = vec![0.0f64; k];
    for (&(j, (s, x)), r) in jobs.iter().zip(ratios) {
        let v = r?.value;
        per_beta[j - 1] = per_beta[j - 1].max(v);
        if slices.slice_of(s + x) == j {
            per_eta[j - 1] = per_eta[j - 1].max(v);
        }
    }
    let measured = SliceConstants::from_slices(per_eta, per_beta, false, all.len());

    let mu = PerturbingMeasure::new(Density::Q0 { c, p }, Vec::new())?;
    let flat = SeriesSolver::new(&Kappa, &mu, t, y, &all, solver)?.evaluate(&all);
    let mut it = flat.into_iter();
    let values: Vec<Vec<PerturbedValue>> = per_slice
        .iter()
        .map(|pts| it.by_ref().take(pts.len()).collect())
        .collect();
    let mode = Mode::Continuous { quad_tol: quad.rel_tol };
    let series = PointSeries {
        mode,
        slices: values.clone(),
        provenance: format!(
            "diagonal slices of width {h}, {} samples per slice, seed {}",
            sampler.per_slice, sampler.seed
        ),
    };
    let constants = SliceConstants::from_slices(vec![eta; k], vec![eta; k], false, all.len());
    let mut certificates = certify(&series, &constants)?;
    let tol = mode.tolerance();
    let exceeded = measured.eta > eta * (1.0 + tol) || measured.beta > eta * (1.0 + tol);
    if exceeded {
        for cert in &mut certificates {
            cert.status = CertificateStatus::HypothesisFail;
        }
    }
    Ok(KappaReport {
        slices,
        eta,
        measured,
        certificates,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem() -> KappaProblem {
        KappaProblem { c: 0.05, p: 0.25, t: 0.25, y: 0.25, h: 0.2 }
    }

    #[test]
    fn samples_lie_in_their_slice_and_the_cone() {
        let pr = problem();
        let slices = DiagonalSlices::new(pr.t + pr.y, pr.h).unwrap();
        let sampler = KappaSampler { per_slice: 8, seed: 3 };
        for j in 1..=slices.k() {
            let pts = sampler.points(&pr, &slices, j).unwrap();
            assert_eq!(pts.len(), 8);
            for &(s, x) in &pts {
                assert_eq!(slices.slice_of(s + x), j, "({s}, {x})");
                assert!(s <= pr.t && x <= pr.y);
            }
        }
    }

    #[test]
    fn rejects_a_target_on_the_singular_line() {
        let pr = KappaProblem { t: 0.1, y: -0.1, ..problem() };
        assert!(kappa_certify(&pr, &KappaSampler::default(), &SolverSpec::default()).is_err());
    }

    #[test]
    fn oversized_eta_is_a_hypothesis_failure() {
        let pr = KappaProblem { c: 1.0, h: 1.0, ..problem() };
        let sampler = KappaSampler { per_slice: 2, seed: 0 };
        let r = kappa_certify(&pr, &sampler, &SolverSpec::default()).unwrap();
        assert!(r.eta >= 1.0);
        assert!(r.certificates.iter().all(|c| c.status == CertificateStatus::HypothesisFail && c.bound.is_none()));
    }
}
