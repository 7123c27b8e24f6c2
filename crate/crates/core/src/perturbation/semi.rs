//! Slicing of `[r, t)` into time intervals and the resulting certificates for
//! `p^mu <= (1 - eta)^(-j) p`.

use serde::{Deserialize, Serialize};

use crate::bounds::{
    certify, corollary_bound, minimal_n, BoundCertificate, CertificateStatus, Mode, SliceConstants, SliceMeasurement,
    SliceSeries, TruncationReport,
};
use crate::error::{invalid, precondition, Result};
use crate::par;
use crate::quadrature::Estimate;
use crate::sampling::Halton;
use crate::series::SeriesStatus;
use crate::spacetime::SpaceTimeKernel;

use super::atoms::AtomChainOperator;
use super::measure::{Bound, Interval, PerturbingMeasure};
use super::solver::{first_order_ratio, PerturbedValue, SeriesSolver, SolverSpec};

/// Which perturbation series is summed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    /// `p_n = ∫ p_{n-1} p dmu`, atoms along strictly increasing chains.
    #[default]
    Measure,
    /// The atom operator that also counts coincident times.
    AtomChain,
}

/// Sampled measured values, grouped by slice.
#[derive(Debug, Clone)]
pub struct PointSeries {
    pub mode: Mode,
    pub slices: Vec<Vec<PerturbedValue>>,
    pub provenance: String,
}

impl SliceSeries for PointSeries {
    fn slices(&self) -> usize {
        self.slices.len()
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn measure(&self, j: usize) -> Result<SliceMeasurement> {
        let vals = self
            .slices
            .get(j.wrapping_sub(1))
            .ok_or_else(|| invalid(format!("slice {j} out of range")))?;
        let mut ratio = if vals.is_empty() { 0.0 } else { 1.0f64 };
        let mut trunc = TruncationReport {
            max_terms: 0,
            relative_tail: 0.0,
            relative_quad_error: 0.0,
            status: SeriesStatus::Converged,
        };
        for v in vals {
            ratio = ratio.max(v.ratio());
            let value = v.series.value.max(f64::MIN_POSITIVE);
            trunc = trunc.merge(TruncationReport {
                max_terms: v.series.terms,
                relative_tail: if v.series.tail_estimate > 0.0 {
                    v.series.tail_estimate / value
                } else {
                    0.0
                },
                relative_quad_error: v.series.quad_error_estimate / value,
                status: v.series.status,
            });
        }
        Ok(SliceMeasurement {
            measured_ratio: ratio,
            samples: vals.len(),
            truncation: trunc,
            provenance: self.provenance.clone(),
        })
    }
}

/// `I_1 = [t - h, t), I_2 = [t - 2h, t - h), ...` down to `r`.
pub fn uniform_slices(r: f64, t: f64, h: f64) -> Result<Vec<Interval>> {
    if !(h > 0.0) || !(r < t) {
        return Err(invalid("need h > 0 and r < t"));
    }
    let k = ((t - r) / h).ceil().max(1.0) as usize;
    Ok((1..=k)
        .map(|j| {
            let hi = t - (j - 1) as f64 * h;
            let lo = if j == k { r } else { t - j as f64 * h };
            Interval::left_closed(lo, hi)
        })
        .collect())
}

/// Checks that `intervals = [I_1, ..., I_k]` satisfy `I_k ≺ ... ≺ I_1` and
/// tile `[r, t)`; returns `(r, t)`.
pub fn check_tiling(intervals: &[Interval]) -> Result<(f64, f64)> {
    let first = intervals.first().ok_or_else(|| invalid("at least one interval is required"))?;
    let last = intervals.last().expect("nonempty");
    let (r, t) = (last.lower(), first.upper());
    if !(r.is_finite() && t.is_finite() && r < t) {
        return Err(invalid("the slices must tile a bounded interval [r, t)"));
    }
    if !matches!(last.lo, Bound::Closed(_)) || !matches!(first.hi, Bound::Open(_)) {
        return Err(invalid("the tiled range must be [r, t)"));
    }
    for w in intervals.windows(2) {
        let (later, earlier) = (&w[0], &w[1]);
        if !earlier.precedes(later) || earlier.upper() != later.lower() {
            return Err(invalid("intervals must be ordered I_k ≺ ... ≺ I_1 without gaps"));
        }
        let joint_covered = matches!(earlier.hi, Bound::Closed(_)) || matches!(later.lo, Bound::Closed(_));
        if !joint_covered {
            return Err(invalid(format!("the point {} is missing from the tiling", later.lower())));
        }
    }
    Ok((r, t))
}

/// Sample points inside each slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceSampler {
    pub per_slice: usize,
    pub x_range: (f64, f64),
    pub seed: u64,
    /// Adds the left end of every left-closed slice at the centre of `x_range`.
    pub include_left_ends: bool,
}

impl Default for SliceSampler {
    fn default() -> Self {
        SliceSampler {
            per_slice: 10,
            x_range: (-1.0, 1.0),
            seed: 0,
            include_left_ends: true,
        }
    }
}

impl SliceSampler {
    pub fn points(&self, interval: &Interval) -> Result<Vec<(f64, f64)>> {
        let (lo, hi) = (interval.lower(), interval.upper());
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(invalid("cannot sample an unbounded slice"));
        }
        let halton = Halton::new(2, Some(self.seed))?;
        let mut out = Vec::new();
        let (xa, xb) = self.x_range;
        if self.include_left_ends && matches!(interval.lo, Bound::Closed(_)) {
            out.push((lo, 0.5 * (xa + xb)));
        }
        let mut buf = [0.0; 2];
        let mut i = 0;
        while out.len() < self.per_slice.max(1) {
            i += 1;
            halton.point(i, &mut buf);
            let s = lo + (hi - lo) * buf[0];
            if interval.contains(s) {
                out.push((s, xa + (xb - xa) * buf[1]));
            }
            if i > 100 * self.per_slice as u64 + 100 {
                break;
            }
        }
        Ok(out)
    }
}

/// A perturbation problem with a fixed target `(t, y)` and a slicing.
pub struct SemiProblem<'a> {
    pub kernel: &'a dyn SpaceTimeKernel,
    pub mu: &'a PerturbingMeasure,
    pub y: f64,
    /// `[I_1, ..., I_k]`, with `I_1` ending at `t`.
    pub intervals: Vec<Interval>,
    pub engine: Engine,
    pub solver: SolverSpec,
}

/// Output of [`theorem46_certify`].
#[derive(Debug, Clone)]
pub struct SemiReport {
    /// Sampled `sup_s ∫_{I_j × X} p p dmu / p` per slice.
    pub measured: SliceConstants,
    pub eta: f64,
    pub certificates: Vec<BoundCertificate>,
    pub values: Vec<Vec<PerturbedValue>>,
}

impl<'a> SemiProblem<'a> {
    pub fn range(&self) -> Result<(f64, f64)> {
        check_tiling(&self.intervals)
    }

    fn mode(&self) -> Mode {
        Mode::Continuous {
            quad_tol: self.solver.quad.rel_tol,
        }
    }

    /// `(∫_{I × X} p(s,x,u,z) p(u,z,t,y) dmu) / p(s,x,t,y)`.
    pub fn local_ratio(&self, interval: &Interval, s: f64, x: f64) -> Result<Estimate> {
        let (_, t) = self.range()?;
        match self.engine {
            Engine::Measure => {
                let restricted = self.mu.restrict(interval);
                first_order_ratio(self.kernel, &restricted, s, x, t, self.y, &self.solver.quad)
            }
            Engine::AtomChain => {
                let op = AtomChainOperator::new(self.kernel, self.mu.atoms(), t, self.y, &[], &self.solver)?;
                op.local_ratio(s, x, |a| interval.contains(a.u))
            }
        }
    }

    /// Sums the series at `points`.
    pub fn series_at(&self, points: &[(f64, f64)]) -> Result<Vec<PerturbedValue>> {
        let (_, t) = self.range()?;
        self.series_with(self.mu, t, points)
    }

    fn series_with(&self, mu: &PerturbingMeasure, t: f64, points: &[(f64, f64)]) -> Result<Vec<PerturbedValue>> {
        match self.engine {
            Engine::Measure => Ok(SeriesSolver::new(self.kernel, mu, t, self.y, points, &self.solver)?.evaluate(points)),
            Engine::AtomChain => {
                if mu.has_density() {
                    return Err(invalid("the atom operator takes atoms only"));
                }
                AtomChainOperator::new(self.kernel, mu.atoms(), t, self.y, points, &self.solver)?.evaluate(points)
            }
        }
    }

    fn sample(&self, sampler: &SliceSampler) -> Result<Vec<Vec<(f64, f64)>>> {
        self.intervals.iter().map(|iv| sampler.points(iv)).collect()
    }

    /// `eta_j = sup over all samples of local_ratio(I_j, .)`.
    fn measure_local(&self, all: &[(f64, f64)]) -> Result<Vec<f64>> {
        self.intervals
            .iter()
            .map(|iv| {
                let vals: Vec<Result<Estimate>> = par::map(self.solver.exec, all, |&(s, x)| self.local_ratio(iv, s, x));
                vals.into_iter()
                    .try_fold(0.0f64, |m, e| e.map(|e| m.max(e.value)))
            })
            .collect()
    }
}

/// Certifies `p^mu <= (1 - eta)^(-j) p` on `I_j`.
///
/// The hypothesis `∫_{I_j × X} p p dmu <= eta p` is first witnessed at all
/// samples with `r <= s < t`; slice `j` is reported `HYPOTHESIS_FAIL` when it
/// fails on any of `I_1, ..., I_j`. With `eta = None` the measured sup is used.
pub fn theorem46_certify(problem: &SemiProblem, eta: Option<f64>, sampler: &SliceSampler) -> Result<SemiReport> {
    problem.range()?;
    let per_slice = problem.sample(sampler)?;
    let all: Vec<(f64, f64)> = per_slice.iter().flatten().copied().collect();
    let local = problem.measure_local(&all)?;
    let measured = SliceConstants::local(local.clone(), false, all.len());
    let eta = eta.unwrap_or(measured.eta);
    let tol = problem.mode().tolerance();
    let values = {
        let flat = problem.series_at(&all)?;
        let mut it = flat.into_iter();
        per_slice
            .iter()
            .map(|pts| it.by_ref().take(pts.len()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    let series = PointSeries {
        mode: problem.mode(),
        slices: values.clone(),
        provenance: format!(
            "{} samples per slice, {} hypothesis points, engine {:?}",
            sampler.per_slice,
            all.len(),
            problem.engine
        ),
    };
    let constants = SliceConstants::local(vec![eta; local.len()], false, all.len());
    let mut certificates = certify(&series, &constants)?;
    let mut failed = false;
    for (cert, &m) in certificates.iter_mut().zip(&local) {
        failed |= m > eta * (1.0 + tol) + tol;
        if failed {
            cert.status = CertificateStatus::HypothesisFail;
        }
    }
    Ok(SemiReport {
        measured,
        eta,
        certificates,
        values,
    })
}

/// Output of [`corollary47_bound`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorollaryReport {
    pub c: f64,
    pub beta: f64,
    pub n: usize,
    pub eta: f64,
    /// The constant `C`.
    pub constant: f64,
    /// Sampled sup of `p_1 / p` for `s > r`.
    pub measured_beta: f64,
    /// Sampled sup of `sum_n p_n^{I_j} / p` on `I_j`.
    pub measured_c: f64,
    /// Sampled sup of `p^mu / p` for `s >= r`.
    pub measured_ratio: f64,
    pub status: CertificateStatus,
}

/// The constant `C = (sum_{n<N} beta^n) [1 + beta/(1-eta)]^(k-1) / (1-eta)`
/// with the smallest `N` such that `eta = c (1 - 1/c)^N < 1`, checked against
/// the series.
pub fn corollary47_bound(problem: &SemiProblem, c: f64, beta: f64, sampler: &SliceSampler) -> Result<CorollaryReport> {
    let (_, t) = problem.range()?;
    let k = problem.intervals.len();
    if !(c >= 1.0) || !(beta >= 0.0) {
        return Err(invalid("need c >= 1 and beta >= 0"));
    }
    let (n, eta, constant) = if c == 1.0 {
        (1, 0.0, 1.0)
    } else {
        let n = minimal_n(c)?;
        (n, crate::bounds::corollary_eta(c, n), corollary_bound(c, n, beta, k)?)
    };
    let tol = problem.mode().tolerance();
    let per_slice = problem.sample(sampler)?;
    let all: Vec<(f64, f64)> = per_slice.iter().flatten().copied().collect();

    let whole = Interval::REAL_LINE;
    let p1: Vec<Result<Estimate>> = par::map(problem.solver.exec, &all, |&(s, x)| problem.local_ratio(&whole, s, x));
    let measured_beta = p1.into_iter().try_fold(0.0f64, |m, e| e.map(|e| m.max(e.value)))?;

    let mut measured_c = 1.0f64;
    let mut converged = true;
    for (iv, pts) in problem.intervals.iter().zip(&per_slice) {
        let restricted = problem.mu.restrict(iv);
        for v in problem.series_with(&restricted, t, pts)? {
            measured_c = measured_c.max(v.ratio());
            converged &= v.series.status == SeriesStatus::Converged;
        }
    }
    let full = problem.series_at(&all)?;
    let measured_ratio = full.iter().map(PerturbedValue::ratio).fold(1.0, f64::max);
    converged &= full.iter().all(|v| v.series.status == SeriesStatus::Converged);

    let status = if measured_beta > beta * (1.0 + tol) + tol || measured_c > c * (1.0 + tol) {
        CertificateStatus::HypothesisFail
    } else if !converged {
        CertificateStatus::Inconclusive
    } else if measured_ratio <= constant * (1.0 + tol) {
        CertificateStatus::Valid
    } else {
        CertificateStatus::Invalid
    };
    Ok(CorollaryReport {
        c,
        beta,
        n,
        eta,
        constant,
        measured_beta,
        measured_c,
        measured_ratio,
        status,
    })
}

/// Output of [`localization_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    /// Sampled sup over `s ∈ I`.
    pub inside: f64,
    /// Sampled sup over `s` left of `I`.
    pub left: f64,
    pub samples: usize,
    pub holds: bool,
}

/// Witnesses that `∫ p p dmu_I <= eta p` on `I × X` propagates to points left
/// of `I` for a Chapman-Kolmogorov kernel.
pub fn localization_check(
    kernel: &dyn SpaceTimeKernel,
    mu: &PerturbingMeasure,
    interval: &Interval,
    eta: f64,
    t: f64,
    y: f64,
    sampler: &SliceSampler,
    solver: &SolverSpec,
) -> Result<LocalizationReport> {
    if !kernel.chapman_kolmogorov() {
        return Err(precondition(format!(
            "kernel {} does not satisfy Chapman-Kolmogorov equations",
            kernel.name()
        )));
    }
    let hi = interval.upper().min(t);
    let lo = interval.lower();
    if !(lo.is_finite() && lo < hi) {
        return Err(invalid("need a bounded interval ending before t"));
    }
    let inside_iv = Interval {
        lo: interval.lo,
        hi: if interval.upper() <= t { interval.hi } else { Bound::Open(t) },
    };
    let restricted = mu.restrict(interval);
    let tol = 10.0 * solver.quad.rel_tol;
    let sup = |pts: &[(f64, f64)]| -> Result<f64> {
        let vals: Vec<Result<Estimate>> = par::map(solver.exec, pts, |&(s, x)| {
            first_order_ratio(kernel, &restricted, s, x, t, y, &solver.quad)
        });
        vals.into_iter().try_fold(0.0f64, |m, e| e.map(|e| m.max(e.value)))
    };
    let inside_pts = sampler.points(&inside_iv)?;
    let inside = sup(&inside_pts)?;
    if inside > eta * (1.0 + tol) + tol {
        return Err(precondition(format!(
            "hypothesis fails on I × X: sampled sup {inside} exceeds eta = {eta}"
        )));
    }
    let width = hi - lo;
    let left_iv = Interval::left_closed(lo - 2.0 * width, lo);
    let left_pts = sampler.points(&left_iv)?;
    let left = sup(&left_pts)?;
    Ok(LocalizationReport {
        inside,
        left,
        samples: inside_pts.len() + left_pts.len(),
        holds: left <= eta * (1.0 + tol) + tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbation::{Atom, Density};
    use crate::spacetime::{Gaussian, Kappa};

    #[test]
    fn uniform_slices_tile_the_range() {
        let iv = uniform_slices(0.0, 1.0, 0.3).unwrap();
        assert_eq!(iv.len(), 4);
        assert_eq!(iv[0], Interval::left_closed(0.7, 1.0));
        assert_eq!(iv[3].lower(), 0.0);
        assert_eq!(check_tiling(&iv).unwrap(), (0.0, 1.0));
        assert!(uniform_slices(1.0, 1.0, 0.1).is_err());
        assert!(uniform_slices(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn tiling_rejects_gaps_and_missing_points() {
        let gap = vec![Interval::left_closed(0.6, 1.0), Interval::left_closed(0.0, 0.5)];
        assert!(check_tiling(&gap).is_err());
        let hole = vec![Interval::left_closed(0.5, 1.0), Interval::open(0.0, 0.5)];
        assert!(check_tiling(&hole).is_err());
        let swapped = vec![Interval::left_closed(0.0, 0.5), Interval::left_closed(0.5, 1.0)];
        assert!(check_tiling(&swapped).is_err());
    }

    #[test]
    fn sampler_stays_inside_the_slice() {
        let iv = Interval::left_closed(0.25, 0.5);
        let sampler = SliceSampler { per_slice: 20, ..SliceSampler::default() };
        let pts = sampler.points(&iv).unwrap();
        assert_eq!(pts.len(), 20);
        assert_eq!(pts[0], (0.25, 0.0));
        assert!(pts.iter().all(|&(s, x)| iv.contains(s) && (-1.0..=1.0).contains(&x)));
        assert_eq!(pts, sampler.points(&iv).unwrap());
        assert!(sampler.points(&Interval::at_least(0.0)).is_err());
    }

    #[test]
    fn measure_engine_rejects_non_ck_kernels_with_atoms() {
        let mu = PerturbingMeasure::new(Density::Zero, vec![Atom { u: 0.5, eta: 0.2 }]).unwrap();
        let problem = SemiProblem {
            kernel: &Kappa,
            mu: &mu,
            y: 1.0,
            intervals: uniform_slices(0.0, 1.0, 0.5).unwrap(),
            engine: Engine::Measure,
            solver: SolverSpec::default(),
        };
        assert!(problem.series_at(&[(0.0, 0.0)]).is_err());
    }

    #[test]
    fn atom_on_a_slice_is_seen_by_its_local_ratio() {
        let g = Gaussian { dim: 1 };
        let mu = PerturbingMeasure::new(Density::Zero, vec![Atom { u: 0.75, eta: 0.3 }]).unwrap();
        let intervals = uniform_slices(0.0, 1.0, 0.5).unwrap();
        let problem = SemiProblem {
            kernel: &g,
            mu: &mu,
            y: 0.0,
            intervals: intervals.clone(),
            engine: Engine::Measure,
            solver: SolverSpec::default(),
        };
        let inside = problem.local_ratio(&intervals[0], 0.6, 0.2).unwrap();
        let before = problem.local_ratio(&intervals[1], 0.1, 0.2).unwrap();
        assert!((inside.value - 0.3).abs() <= 1e-9, "{inside:?}");
        assert_eq!(before.value, 0.0);
    }
}
