//! Result type shared by every truncated Neumann series in the crate.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesStatus {
    /// The last term fell below `tail_tol` times the partial sum.
    Converged,
    /// `max_terms` was reached first.
    Truncated,
    /// Term norms kept growing over the detection window.
    Diverging,
}

/// A truncated series `sum_{n <= truncation_index} term_n` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesResult {
    pub value: f64,
    /// Number of terms summed, `truncation_index + 1`.
    pub terms: usize,
    pub truncation_index: usize,
    /// Geometric extrapolation of the omitted tail; infinite unless the
    /// trailing term ratio is below one.
    pub tail_estimate: f64,
    pub quad_error_estimate: f64,
    pub status: SeriesStatus,
}

/// Consecutive non-decreasing term norms that trigger [`SeriesStatus::Diverging`].
pub const DIVERGENCE_WINDOW: usize = 10;

/// Tracks term norms and decides when a series stops.
#[derive(Debug, Clone)]
pub(crate) struct StopRule {
    tail_tol: f64,
    norms: Vec<f64>,
}

impl StopRule {
    pub(crate) fn new(tail_tol: f64) -> Self {
        StopRule {
            tail_tol,
            norms: Vec::new(),
        }
    }

    /// Records the norm of the newest term and the norm of the partial sum
    /// including it; returns a status once the series should stop.
    pub(crate) fn push(&mut self, term_norm: f64, sum_norm: f64) -> Option<SeriesStatus> {
        self.norms.push(term_norm);
        if term_norm == 0.0 || term_norm <= self.tail_tol * sum_norm {
            return Some(SeriesStatus::Converged);
        }
        if !term_norm.is_finite() {
            return Some(SeriesStatus::Diverging);
        }
        let n = self.norms.len();
        if n > DIVERGENCE_WINDOW {
            let window = &self.norms[n - DIVERGENCE_WINDOW - 1..];
            if window.windows(2).all(|w| w[1] >= w[0]) {
                return Some(SeriesStatus::Diverging);
            }
        }
        None
    }

    /// Ratio of the last two term norms, a power-iteration estimate of the
    /// contraction factor.
    pub(crate) fn ratio(&self) -> Option<f64> {
        let n = self.norms.len();
        if n < 2 || self.norms[n - 2] == 0.0 {
            return None;
        }
        Some(self.norms[n - 1] / self.norms[n - 2])
    }

    /// Tail of a geometric series whose next term is `ratio * last_term`.
    pub(crate) fn tail(&self, last_term: f64) -> f64 {
        if last_term == 0.0 {
            return 0.0;
        }
        match self.ratio() {
            Some(r) if r < 1.0 => last_term * r / (1.0 - r),
            _ => f64::INFINITY,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_terms_converge() {
        let mut rule = StopRule::new(1e-12);
        let mut sum = 0.0;
        let mut term = 1.0;
        let status = loop {
            sum += term;
            if let Some(s) = rule.push(term, sum) {
                break s;
            }
            term *= 0.5;
        };
        assert_eq!(status, SeriesStatus::Converged);
        assert!((rule.tail(term) - term).abs() < 1e-15);
    }

    #[test]
    fn constant_terms_diverge_after_window() {
        let mut rule = StopRule::new(1e-12);
        let mut n = 0;
        while rule.push(1.0, (n + 1) as f64).is_none() {
            n += 1;
        }
        assert_eq!(n, DIVERGENCE_WINDOW);
    }
}
