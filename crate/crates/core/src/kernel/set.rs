use serde::{Deserialize, Serialize};

use super::MatrixKernel;
use crate::error::{invalid, precondition, Error, Result};

/// Subset of `{0, .., n-1}` stored as a mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateSet {
    mask: Vec<bool>,
}

impl StateSet {
    pub fn empty(n: usize) -> Self {
        StateSet { mask: vec![false; n] }
    }

    pub fn full(n: usize) -> Self {
        StateSet { mask: vec![true; n] }
    }

    pub fn from_mask(mask: Vec<bool>) -> Self {
        StateSet { mask }
    }

    /// Set of the given 0-based indices.
    pub fn from_indices(n: usize, indices: &[usize]) -> Result<Self> {
        let mut mask = vec![false; n];
        for &i in indices {
            if i >= n {
                return Err(invalid(format!("state index {i} out of range for n = {n}")));
            }
            mask[i] = true;
        }
        Ok(StateSet { mask })
    }

    pub fn n(&self) -> usize {
        self.mask.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn contains(&self, i: usize) -> bool {
        self.mask.get(i).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn members(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.mask[i]).collect()
    }

    fn zip(&self, other: &StateSet, op: impl Fn(bool, bool) -> bool) -> Result<StateSet> {
        self.check_dim(other.n())?;
        Ok(StateSet {
            mask: self.mask.iter().zip(&other.mask).map(|(&a, &b)| op(a, b)).collect(),
        })
    }

    pub fn union(&self, other: &StateSet) -> Result<StateSet> {
        self.zip(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &StateSet) -> Result<StateSet> {
        self.zip(other, |a, b| a && b)
    }

    /// `self \ other`.
    pub fn difference(&self, other: &StateSet) -> Result<StateSet> {
        self.zip(other, |a, b| a && !b)
    }

    pub fn complement(&self) -> StateSet {
        StateSet {
            mask: self.mask.iter().map(|b| !b).collect(),
        }
    }

    pub fn is_subset(&self, other: &StateSet) -> Result<bool> {
        self.check_dim(other.n())?;
        Ok(self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b))
    }

    pub(crate) fn check_dim(&self, n: usize) -> Result<()> {
        if self.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.n(),
            });
        }
        Ok(())
    }
}

/// Nested absorbing sets `A_1 ⊆ .. ⊆ A_k` for a fixed kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorbingChain {
    sets: Vec<StateSet>,
}

impl AbsorbingChain {
    /// Checks nesting and that every set is absorbing for `kernel`.
    pub fn new(kernel: &MatrixKernel, sets: Vec<StateSet>) -> Result<Self> {
        if sets.is_empty() {
            return Err(invalid("an absorbing chain needs at least one set"));
        }
        for (j, a) in sets.iter().enumerate() {
            a.check_dim(kernel.n())?;
            if !kernel.is_absorbing(a)? {
                return Err(precondition(format!("A_{} is not absorbing", j + 1)));
            }
            if j > 0 && !sets[j - 1].is_subset(a)? {
                return Err(precondition(format!("A_{} is not contained in A_{}", j, j + 1)));
            }
        }
        Ok(AbsorbingChain { sets })
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn sets(&self) -> &[StateSet] {
        &self.sets
    }

    /// The largest set `A_k`.
    pub fn top(&self) -> &StateSet {
        self.sets.last().expect("chain is non-empty")
    }

    /// Slices `S_j = A_j \ A_{j-1}` with `A_0 = ∅`.
    pub fn slices(&self) -> Vec<StateSet> {
        let n = self.sets[0].n();
        let mut prev = StateSet::empty(n);
        let mut out = Vec::with_capacity(self.sets.len());
        for a in &self.sets {
            out.push(a.difference(&prev).expect("same dimension"));
            prev = a.clone();
        }
        out
    }

    /// 1-based index of the slice containing `state`.
    pub fn slice_of(&self, state: usize) -> Option<usize> {
        self.sets.iter().position(|a| a.contains(state)).map(|j| j + 1)
    }
}
