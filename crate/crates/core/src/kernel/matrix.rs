use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{measure_mul, StateSet};
use crate::error::{invalid, precondition, Error, Result};
use crate::series::{SeriesResult, SeriesStatus, StopRule};

/// Which indicator a restriction multiplies by: `1_A K` (rows) or `K 1_A`
/// (columns).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Kernel on `{0, .., n-1}` with `entry(x, y) = K(x, {y})`.
///
/// Entries are finite and nonnegative. Vectors it acts on may contain `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixKernel {
    n: usize,
    entries: Vec<f64>,
}

impl MatrixKernel {
    /// Builds a kernel from row-major entries.
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(invalid("state count must be positive"));
        }
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: entries.len(),
            });
        }
        if let Some(v) = entries.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid(format!("kernel entries must be finite and nonnegative, got {v}")));
        }
        Ok(MatrixKernel { n, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: r.len(),
            });
        }
        Self::new(n, rows.concat())
    }

    pub fn zeros(n: usize) -> Self {
        MatrixKernel {
            n,
            entries: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, scale: f64) -> Self {
        let mut k = Self::zeros(n);
        for i in 0..n {
            k.entries[i * n + i] = scale;
        }
        k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entry(&self, x: usize, y: usize) -> f64 {
        self.entries[x * self.n + y]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    fn check_vec(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: f.len(),
            });
        }
        Ok(())
    }

    /// `Kf(x) = sum_y K(x, {y}) f(y)`.
    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_vec(f)?;
        if let Some(v) = f.iter().find(|v| v.is_nan() || **v < 0.0) {
            return Err(invalid(format!("functions must be nonnegative, got {v}")));
        }
        Ok(self.apply_unchecked(f))
    }

    pub(crate) fn apply_unchecked(&self, f: &[f64]) -> Vec<f64> {
        self.entries
            .chunks(self.n)
            .map(|row| row.iter().zip(f).map(|(&k, &v)| measure_mul(k, v)).sum())
            .collect()
    }

    /// Matrix product `KL`.
    pub fn compose(&self, other: &MatrixKernel) -> Result<MatrixKernel> {
        if other.n != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.entries[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += a * other.entries[k * n + j];
                }
            }
        }
        Ok(MatrixKernel { n, entries: out })
    }

    /// `K^m`, with `K^0` the identity.
    pub fn power(&self, m: usize) -> MatrixKernel {
        let mut out = MatrixKernel::identity(self.n);
        for _ in 0..m {
            out = out.compose(self).expect("same dimension");
        }
        out
    }

    pub fn restrict(&self, set: &StateSet, side: Side) -> Result<MatrixKernel> {
        set.check_dim(self.n)?;
        let n = self.n;
        let mut out = self.entries.clone();
        for i in 0..n {
            for j in 0..n {
                let keep = match side {
                    Side::Left => set.contains(i),
                    Side::Right => set.contains(j),
                };
                if !keep {
                    out[i * n + j] = 0.0;
                }
            }
        }
        Ok(MatrixKernel { n, entries: out })
    }

    /// `1_A K 1_A`.
    pub fn restrict_both(&self, set: &StateSet) -> Result<MatrixKernel> {
        self.restrict(set, Side::Left)?.restrict(set, Side::Right)
    }

    /// `K(x, A^c) = 0` for every `x` in `A`.
    pub fn is_absorbing(&self, set: &StateSet) -> Result<bool> {
        set.check_dim(self.n)?;
        let n = self.n;
        Ok(set
            .members()
            .into_iter()
            .all(|x| (0..n).all(|y| set.contains(y) || self.entries[x * n + y] == 0.0)))
    }

    fn require_absorbing(&self, set: &StateSet, name: &str) -> Result<()> {
        if !self.is_absorbing(set)? {
            return Err(precondition(format!("{name} is not absorbing")));
        }
        Ok(())
    }

    /// Checks `1_A K^m = (1_A K)^m = 1_A K^m 1_A` by exact comparison.
    ///
    /// With `growth = Some((f, c))` and `Kf <= cf` on `A`, it additionally
    /// checks `K^m f <= c^m f` on `A`.
    pub fn verify_power_identity(&self, set: &StateSet, m: usize, growth: Option<(&[f64], f64)>) -> Result<bool> {
        if m == 0 {
            return Err(invalid("m must be positive"));
        }
        self.require_absorbing(set, "A")?;
        let km = self.power(m);
        let left = km.restrict(set, Side::Left)?;
        let chained = self.restrict(set, Side::Left)?.power(m);
        let both = km.restrict_both(set)?;
        let mut ok = left == chained && left == both;
        if let Some((f, c)) = growth {
            self.check_vec(f)?;
            let kf = self.apply(f)?;
            if set.members().into_iter().any(|x| kf[x] > c * f[x]) {
                return Err(precondition("Kf <= cf fails on A"));
            }
            let kmf = km.apply(f)?;
            let cm = c.powi(m as i32);
            ok &= set.members().into_iter().all(|x| kmf[x] <= cm * f[x] * (1.0 + 1e-12));
        }
        Ok(ok)
    }

    /// Checks `1_B K^m 1_{B\A} = 1_B (K 1_{B\A})^m = 1_{B\A} (K 1_{B\A})^m`
    /// by exact comparison.
    pub fn verify_slice_identity(&self, a: &StateSet, b: &StateSet, m: usize) -> Result<bool> {
        if m == 0 {
            return Err(invalid("m must be positive"));
        }
        if !a.is_subset(b)? {
            return Err(precondition("A is not contained in B"));
        }
        self.require_absorbing(a, "A")?;
        self.require_absorbing(b, "B")?;
        let s = b.difference(a)?;
        let first = self.power(m).restrict(b, Side::Left)?.restrict(&s, Side::Right)?;
        let ks_m = self.restrict(&s, Side::Right)?.power(m);
        let second = ks_m.restrict(b, Side::Left)?;
        let third = ks_m.restrict(&s, Side::Left)?;
        Ok(first == second && second == third)
    }

    /// Partial sums of `sum_m K^m f`, one result per state.
    ///
    /// All states share the truncation index; the stopping rule looks at sup
    /// norms of the whole term vector.
    pub fn neumann_series(&self, f: &[f64], max_terms: usize, tail_tol: f64) -> Result<Vec<SeriesResult>> {
        self.check_vec(f)?;
        if max_terms == 0 {
            return Err(invalid("max_terms must be positive"));
        }
        if let Some(v) = f.iter().find(|v| v.is_nan() || **v < 0.0) {
            return Err(invalid(format!("functions must be nonnegative, got {v}")));
        }
        let mut term = f.to_vec();
        let mut sum = term.clone();
        let mut rule = StopRule::new(tail_tol);
        let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, &x| m.max(x));
        let mut status = SeriesStatus::Truncated;
        let mut index = 0;
        loop {
            if let Some(s) = rule.push(sup(&term), sup(&sum)) {
                status = s;
                break;
            }
            if index + 1 >= max_terms {
                break;
            }
            term = self.apply_unchecked(&term);
            index += 1;
            for (s, t) in sum.iter_mut().zip(&term) {
                *s += t;
            }
        }
        Ok(sum
            .iter()
            .zip(&term)
            .map(|(&value, &last)| SeriesResult {
                value,
                terms: index + 1,
                truncation_index: index,
                tail_estimate: match status {
                    SeriesStatus::Converged if last == 0.0 => 0.0,
                    SeriesStatus::Diverging => f64::INFINITY,
                    _ => rule.tail(last),
                },
                quad_error_estimate: 0.0,
                status,
            })
            .collect())
    }

    /// Checks `K^n f <= c (1 - 1/c)^n f` on `A` for `n <= n_max`, and the
    /// reverse bound `sum_n K^n f <= c^2 f` built from it.
    ///
    /// The hypothesis `sum_m K^m f <= c f` on `A` is verified first.
    pub fn check_geometric_decay(&self, f: &[f64], set: &StateSet, c: f64, n_max: usize) -> Result<bool> {
        if !(c >= 1.0) || !c.is_finite() {
            return Err(invalid("c must be a finite real >= 1"));
        }
        self.check_vec(f)?;
        self.require_absorbing(set, "A")?;
        let series = self.neumann_series(f, 10_000, 1e-15)?;
        let slack = 1.0 + 1e-12;
        for x in set.members() {
            let g = series[x].value + series[x].tail_estimate;
            if series[x].status == SeriesStatus::Diverging || g > c * f[x] * slack {
                return Err(Error::SeriesHypothesis {
                    state: x,
                    ratio: g / f[x],
                    c,
                });
            }
        }
        let q = 1.0 - 1.0 / c;
        let mut term = f.to_vec();
        let mut partial = vec![0.0; self.n];
        for n in 0..=n_max {
            if n > 0 {
                term = self.apply_unchecked(&term);
            }
            let bound = c * q.powi(n as i32);
            for x in set.members() {
                if term[x] > measure_mul(bound, f[x]) * slack {
                    return Ok(false);
                }
                partial[x] += term[x];
            }
        }
        Ok(set
            .members()
            .into_iter()
            .all(|x| series[x].value <= c * c * f[x] * slack && partial[x] <= c * c * f[x] * slack))
    }
}

/// JSON form of a finite kernel and named state sets. Set indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDocument {
    pub n: usize,
    pub entries: Vec<Vec<f64>>,
    #[serde(default)]
    pub sets: BTreeMap<String, Vec<usize>>,
    /// Control function; defaults to the constant 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<f64>>,
    /// Names of the sets forming the absorbing chain, innermost first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<Vec<String>>,
}

impl DiscreteDocument {
    pub fn kernel(&self) -> Result<MatrixKernel> {
        if self.entries.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: self.entries.len(),
            });
        }
        MatrixKernel::from_rows(&self.entries)
    }

    pub fn set(&self, name: &str) -> Result<StateSet> {
        let idx = self
            .sets
            .get(name)
            .ok_or_else(|| invalid(format!("unknown set {name:?}")))?;
        StateSet::from_indices(self.n, idx)
    }

    pub fn control(&self) -> Result<Vec<f64>> {
        match &self.f {
            None => Ok(vec![1.0; self.n]),
            Some(f) if f.len() == self.n => Ok(f.clone()),
            Some(f) => Err(Error::DimensionMismatch {
                expected: self.n,
                found: f.len(),
            }),
        }
    }

    /// The chain named by `chain`, or all sets ordered by size.
    pub fn chain_sets(&self) -> Result<Vec<StateSet>> {
        match &self.chain {
            Some(names) => names.iter().map(|s| self.set(s)).collect(),
            None => {
                let mut sets: Vec<StateSet> = self
                    .sets
                    .values()
                    .map(|idx| StateSet::from_indices(self.n, idx))
                    .collect::<Result<_>>()?;
                sets.sort_by_key(StateSet::len);
                Ok(sets)
            }
        }
    }
}
