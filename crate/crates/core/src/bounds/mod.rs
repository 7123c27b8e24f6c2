//! Discrete Gronwall recursion, slice constants and exponential bounds on
//! Neumann series, with certification against measured series.

mod certify;
mod matrix;

pub use certify::{certify, BoundCertificate, CertificateStatus, Mode, SliceMeasurement, SliceSeries, TruncationReport};
pub use matrix::{estimate_matrix_constants, MatrixSeries};

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};

/// `alpha (1 + delta)^(j - 1)`.
pub fn gronwall_bound(alpha: f64, delta: f64, j: usize) -> Result<f64> {
    if j < 1 {
        return Err(invalid("j must be at least 1"));
    }
    if !(alpha >= 0.0 && delta >= 0.0) {
        return Err(invalid("alpha and delta must be nonnegative"));
    }
    Ok(alpha * (1.0 + delta).powi(j as i32 - 1))
}

/// Sequence `gamma_1, .., gamma_k` meant to satisfy
/// `gamma_j <= alpha + delta * sum_{i<j} gamma_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GronwallSequence {
    pub alpha: f64,
    pub delta: f64,
    pub gamma: Vec<f64>,
}

impl GronwallSequence {
    /// The extremal sequence, built with equality in the recursion.
    pub fn extremal(alpha: f64, delta: f64, k: usize) -> Self {
        let mut gamma = Vec::with_capacity(k);
        let mut sum = 0.0;
        for _ in 0..k {
            let g = alpha + delta * sum;
            gamma.push(g);
            sum += g;
        }
        GronwallSequence { alpha, delta, gamma }
    }
}

/// Verifies the recursion hypothesis, then checks
/// `gamma_j <= alpha (1 + delta)^(j-1)` for every `j`.
pub fn check_gronwall(seq: &GronwallSequence) -> Result<bool> {
    let mut sum = 0.0;
    for (i, &g) in seq.gamma.iter().enumerate() {
        let rhs = seq.alpha + seq.delta * sum;
        if g > rhs * (1.0 + 1e-12) {
            return Err(Error::GronwallHypothesis { index: i + 1 });
        }
        sum += g;
    }
    let mut ok = true;
    for (i, &g) in seq.gamma.iter().enumerate() {
        let bound = gronwall_bound(seq.alpha, seq.delta, i + 1)?;
        ok &= g <= bound * (1.0 + 1e-12);
    }
    Ok(ok)
}

/// `(1 / (1 - eta)) (1 + beta / (1 - eta))^(j - 1)`.
pub fn theorem_bound(eta: f64, beta: f64, j: usize) -> Result<f64> {
    if j < 1 {
        return Err(invalid("j must be at least 1"));
    }
    if !(beta >= 0.0) {
        return Err(invalid("beta must be nonnegative"));
    }
    if !(eta >= 0.0) {
        return Err(invalid("eta must be nonnegative"));
    }
    if eta >= 1.0 {
        return Err(domain(format!("local smallness fails: eta = {eta} >= 1")));
    }
    let q = 1.0 - eta;
    Ok((1.0 + beta / q).powi(j as i32 - 1) / q)
}

/// `c (1 - 1/c)^N`.
pub fn corollary_eta(c: f64, n: usize) -> f64 {
    c * (1.0 - 1.0 / c).powi(n as i32)
}

/// Smallest `N` with `c (1 - 1/c)^N < 1`, for `c > 1`.
pub fn minimal_n(c: f64) -> Result<usize> {
    if !(c > 1.0) || !c.is_finite() {
        return Err(invalid("c must be a finite real > 1"));
    }
    let guess = (c.ln() / (c / (c - 1.0)).ln()).floor().max(0.0) as usize;
    let mut n = guess.saturating_sub(2).max(1);
    while corollary_eta(c, n) >= 1.0 {
        n += 1;
    }
    Ok(n)
}

/// `(sum_{n<N} beta^n) (1/(1-eta)) (1 + beta/(1-eta))^(j-1)` with
/// `eta = c (1 - 1/c)^N`.
pub fn corollary_bound(c: f64, n: usize, beta: f64, j: usize) -> Result<f64> {
    if !(c > 1.0) {
        return Err(invalid("c must exceed 1"));
    }
    if n < 1 {
        return Err(invalid("N must be at least 1"));
    }
    let eta = corollary_eta(c, n);
    if eta >= 1.0 {
        return Err(domain(format!("choose larger N: c(1-1/c)^N = {eta} >= 1")));
    }
    let head: f64 = (0..n).map(|i| beta.powi(i as i32)).sum();
    Ok(head * theorem_bound(eta, beta, j)?)
}

/// Local smallness `eta` and global boundedness `beta` of a slicing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceConstants {
    pub eta: f64,
    pub beta: f64,
    pub per_slice_eta: Vec<f64>,
    pub per_slice_beta: Vec<f64>,
    /// True when the sups were computed by full enumeration.
    pub exact: bool,
    /// Points evaluated per slice (sampled mode).
    pub samples: usize,
}

impl SliceConstants {
    pub fn from_slices(per_slice_eta: Vec<f64>, per_slice_beta: Vec<f64>, exact: bool, samples: usize) -> Self {
        let max = |v: &[f64]| v.iter().fold(0.0f64, |m, &x| m.max(x));
        SliceConstants {
            eta: max(&per_slice_eta),
            beta: max(&per_slice_beta),
            per_slice_eta,
            per_slice_beta,
            exact,
            samples,
        }
    }

    /// Constants from local data only, with `beta = eta`.
    pub fn local(per_slice_eta: Vec<f64>, exact: bool, samples: usize) -> Self {
        let beta = per_slice_eta.clone();
        Self::from_slices(per_slice_eta, beta, exact, samples)
    }

    /// Same constants with a user-supplied `beta`.
    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self.per_slice_beta = vec![beta; self.per_slice_eta.len()];
        self
    }

    pub fn slices(&self) -> usize {
        self.per_slice_eta.len()
    }
}
