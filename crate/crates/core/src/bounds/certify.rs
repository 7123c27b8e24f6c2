use serde::{Deserialize, Serialize};

use super::{theorem_bound, SliceConstants};
use crate::error::{invalid, Result};
use crate::series::SeriesStatus;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Mode {
    /// Sups by enumeration and series summed in floating point on exact data.
    Exact,
    /// Sampled sups and quadrature-backed series.
    Continuous { quad_tol: f64 },
}

impl Mode {
    /// Relative slack allowed before a measured ratio counts as a violation.
    pub fn tolerance(self) -> f64 {
        match self {
            Mode::Exact => 1e-9,
            Mode::Continuous { quad_tol } => 10.0 * quad_tol,
        }
    }
}

/// Worst truncation behaviour seen while summing the series on a slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub max_terms: usize,
    /// Largest tail estimate relative to the series value.
    pub relative_tail: f64,
    pub relative_quad_error: f64,
    pub status: SeriesStatus,
}

impl TruncationReport {
    pub fn merge(self, other: TruncationReport) -> TruncationReport {
        let rank = |s: SeriesStatus| match s {
            SeriesStatus::Converged => 0,
            SeriesStatus::Truncated => 1,
            SeriesStatus::Diverging => 2,
        };
        TruncationReport {
            max_terms: self.max_terms.max(other.max_terms),
            relative_tail: self.relative_tail.max(other.relative_tail),
            relative_quad_error: self.relative_quad_error.max(other.relative_quad_error),
            status: if rank(other.status) > rank(self.status) {
                other.status
            } else {
                self.status
            },
        }
    }
}

/// Sup over a slice of `sum_m K^m f / f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMeasurement {
    pub measured_ratio: f64,
    pub samples: usize,
    pub truncation: TruncationReport,
    pub provenance: String,
}

/// Something that can sum `sum_m K^m f` on the slices of a fixed chain.
pub trait SliceSeries {
    fn slices(&self) -> usize;
    fn mode(&self) -> Mode;
    /// Measurement on slice `j` (1-based).
    fn measure(&self, j: usize) -> Result<SliceMeasurement>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CertificateStatus {
    Valid,
    Invalid,
    Inconclusive,
    HypothesisFail,
}

impl CertificateStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CertificateStatus::Valid => "VALID",
            CertificateStatus::Invalid => "INVALID",
            CertificateStatus::Inconclusive => "INCONCLUSIVE",
            CertificateStatus::HypothesisFail => "HYPOTHESIS_FAIL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    pub slice: usize,
    pub eta: f64,
    pub beta: f64,
    /// `None` when `eta >= 1` and no bound exists.
    pub bound: Option<f64>,
    pub measured_ratio: f64,
    pub margin: Option<f64>,
    pub status: CertificateStatus,
    pub samples: usize,
    pub truncation: TruncationReport,
    pub provenance: String,
}

/// Compares the measured series on every slice with the exponential bound
/// built from `constants`.
///
/// With `eta >= 1` every certificate is `HYPOTHESIS_FAIL`. A series that did
/// not converge yields `INCONCLUSIVE`.
pub fn certify(series: &dyn SliceSeries, constants: &SliceConstants) -> Result<Vec<BoundCertificate>> {
    let k = series.slices();
    if constants.slices() != k {
        return Err(invalid(format!(
            "constants describe {} slices, the chain has {k}",
            constants.slices()
        )));
    }
    let tol = series.mode().tolerance();
    (1..=k)
        .map(|j| {
            let m = series.measure(j)?;
            let bound = if constants.eta < 1.0 {
                Some(theorem_bound(constants.eta, constants.beta, j)?)
            } else {
                None
            };
            let status = match bound {
                None => CertificateStatus::HypothesisFail,
                Some(_) if m.truncation.status != SeriesStatus::Converged => CertificateStatus::Inconclusive,
                Some(b) if m.measured_ratio <= b * (1.0 + tol) => CertificateStatus::Valid,
                Some(_) => CertificateStatus::Invalid,
            };
            Ok(BoundCertificate {
                slice: j,
                eta: constants.eta,
                beta: constants.beta,
                bound,
                measured_ratio: m.measured_ratio,
                margin: bound.map(|b| b - m.measured_ratio),
                status,
                samples: m.samples,
                truncation: m.truncation,
                provenance: m.provenance,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<(f64, SeriesStatus)>);

    impl SliceSeries for Fixed {
        fn slices(&self) -> usize {
            self.0.len()
        }

        fn mode(&self) -> Mode {
            Mode::Exact
        }

        fn measure(&self, j: usize) -> Result<SliceMeasurement> {
            let (ratio, status) = self.0[j - 1];
            Ok(SliceMeasurement {
                measured_ratio: ratio,
                samples: 1,
                truncation: TruncationReport {
                    max_terms: 3,
                    relative_tail: 0.0,
                    relative_quad_error: 0.0,
                    status,
                },
                provenance: String::new(),
            })
        }
    }

    #[test]
    fn statuses_follow_the_bound() {
        let series = Fixed(vec![
            (2.0, SeriesStatus::Converged),
            (4.5, SeriesStatus::Converged),
            (1.0, SeriesStatus::Truncated),
        ]);
        let constants = SliceConstants::from_slices(vec![0.5; 3], vec![0.5; 3], true, 3);
        let certs = certify(&series, &constants).unwrap();
        let statuses: Vec<_> = certs.iter().map(|c| c.status).collect();
        assert_eq!(
            statuses,
            [CertificateStatus::Valid, CertificateStatus::Invalid, CertificateStatus::Inconclusive]
        );
        assert_eq!(certs[0].bound, Some(2.0));
        assert_eq!(certs[0].margin, Some(0.0));
    }

    #[test]
    fn eta_of_one_has_no_bound() {
        let series = Fixed(vec![(1.0, SeriesStatus::Converged)]);
        let constants = SliceConstants::from_slices(vec![1.0], vec![0.5], true, 1);
        let certs = certify(&series, &constants).unwrap();
        assert_eq!(certs[0].status, CertificateStatus::HypothesisFail);
        assert_eq!(certs[0].bound, None);
    }

    #[test]
    fn slice_count_must_match() {
        let series = Fixed(vec![(1.0, SeriesStatus::Converged)]);
        let constants = SliceConstants::from_slices(vec![0.1; 2], vec![0.1; 2], true, 1);
        assert!(certify(&series, &constants).is_err());
    }

    #[test]
    fn merge_keeps_the_worst_status() {
        let a = TruncationReport { max_terms: 2, relative_tail: 1e-3, relative_quad_error: 0.0, status: SeriesStatus::Truncated };
        let b = TruncationReport { max_terms: 5, relative_tail: 0.0, relative_quad_error: 1e-9, status: SeriesStatus::Converged };
        let m = a.merge(b);
        assert_eq!((m.max_terms, m.status), (5, SeriesStatus::Truncated));
        assert_eq!(m.relative_quad_error, 1e-9);
        assert_eq!(CertificateStatus::HypothesisFail.as_str(), "HYPOTHESIS_FAIL");
    }
}
