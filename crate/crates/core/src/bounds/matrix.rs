use super::{certify::TruncationReport, Mode, SliceConstants, SliceMeasurement, SliceSeries};
use crate::error::Result;
use crate::kernel::{AbsorbingChain, MatrixKernel, Side};
use crate::series::SeriesResult;

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Exact `eta_j = max_{S_j} K_j f / f` and `beta_j = max_{A_k} K_j f / f`
/// with `K_j = K 1_{S_j}`.
pub fn estimate_matrix_constants(kernel: &MatrixKernel, f: &[f64], chain: &AbsorbingChain) -> Result<SliceConstants> {
    let top = chain.top();
    let mut eta = Vec::with_capacity(chain.len());
    let mut beta = Vec::with_capacity(chain.len());
    for s in chain.slices() {
        let kj = kernel.restrict(&s, Side::Right)?;
        let kjf = kj.apply(f)?;
        let sup = |set: &crate::kernel::StateSet| {
            set.members()
                .into_iter()
                .map(|x| ratio(kjf[x], f[x]))
                .fold(0.0f64, f64::max)
        };
        eta.push(sup(&s));
        beta.push(sup(top));
    }
    Ok(SliceConstants::from_slices(eta, beta, true, top.len()))
}

/// Exact Neumann summation on a matrix kernel, sliced along a chain.
#[derive(Debug, Clone)]
pub struct MatrixSeries {
    chain: AbsorbingChain,
    f: Vec<f64>,
    series: Vec<SeriesResult>,
}

impl MatrixSeries {
    pub fn new(kernel: &MatrixKernel, f: &[f64], chain: AbsorbingChain) -> Result<Self> {
        let series = kernel.neumann_series(f, 100_000, 1e-16)?;
        Ok(MatrixSeries {
            chain,
            f: f.to_vec(),
            series,
        })
    }

    pub fn series(&self) -> &[SeriesResult] {
        &self.series
    }
}

impl SliceSeries for MatrixSeries {
    fn slices(&self) -> usize {
        self.chain.len()
    }

    fn mode(&self) -> Mode {
        Mode::Exact
    }

    fn measure(&self, j: usize) -> Result<SliceMeasurement> {
        let slice = &self.chain.slices()[j - 1];
        let mut measured = 0.0f64;
        let mut report: Option<TruncationReport> = None;
        for x in slice.members() {
            let r = self.series[x];
            measured = measured.max(ratio(r.value, self.f[x]));
            let here = TruncationReport {
                max_terms: r.terms,
                relative_tail: ratio(r.tail_estimate, r.value),
                relative_quad_error: 0.0,
                status: r.status,
            };
            report = Some(report.map_or(here, |acc| acc.merge(here)));
        }
        Ok(SliceMeasurement {
            measured_ratio: measured,
            samples: slice.len(),
            truncation: report.unwrap_or(TruncationReport {
                max_terms: 0,
                relative_tail: 0.0,
                relative_quad_error: 0.0,
                status: crate::series::SeriesStatus::Converged,
            }),
            provenance: "exact enumeration of the slice".into(),
        })
    }
}
