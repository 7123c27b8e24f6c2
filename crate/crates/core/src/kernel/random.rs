use rand::seq::SliceRandom;
use rand::Rng;

use super::{AbsorbingChain, MatrixKernel, StateSet};
use crate::error::{invalid, Result};

/// Parameters of [`random_chain_kernel`]. Nonzero entries are
/// `m / 2^denominator_bits` with `m` uniform in `1..=numerator_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomKernelSpec {
    pub n: usize,
    pub blocks: usize,
    /// Probability that an allowed entry is nonzero.
    pub density: f64,
    pub numerator_max: u32,
    pub denominator_bits: u32,
}

#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub kernel: MatrixKernel,
    pub chain: AbsorbingChain,
    /// 1-based block index of every state.
    pub block_of: Vec<usize>,
}

/// Random kernel that is block-lower-triangular along a random chain of
/// `blocks` nonempty blocks: a row in block `b` only charges blocks `<= b`, so
/// every union of the first `j` blocks is absorbing.
pub fn random_chain_kernel<R: Rng + ?Sized>(rng: &mut R, spec: &RandomKernelSpec) -> Result<RandomInstance> {
    let RandomKernelSpec {
        n,
        blocks,
        density,
        numerator_max,
        denominator_bits,
    } = *spec;
    if n == 0 || blocks == 0 || blocks > n {
        return Err(invalid("need 1 <= blocks <= n"));
    }
    if !(0.0..=1.0).contains(&density) || numerator_max == 0 || denominator_bits > 30 {
        return Err(invalid("density must lie in [0, 1] and numerators be positive"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    // cut points split the shuffled states into `blocks` nonempty runs
    let mut cuts: Vec<usize> = (1..n).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<usize> = cuts.into_iter().take(blocks - 1).collect();
    cuts.sort_unstable();
    cuts.push(n);
    let mut block_of = vec![0; n];
    let mut start = 0;
    for (b, &end) in cuts.iter().enumerate() {
        for &state in &order[start..end] {
            block_of[state] = b + 1;
        }
        start = end;
    }
    let denom = (1u64 << denominator_bits) as f64;
    let mut entries = vec![0.0; n * n];
    for x in 0..n {
        for y in 0..n {
            if block_of[y] <= block_of[x] && rng.random::<f64>() < density {
                entries[x * n + y] = rng.random_range(1..=numerator_max) as f64 / denom;
            }
        }
    }
    let kernel = MatrixKernel::new(n, entries)?;
    let sets = (1..=blocks)
        .map(|j| StateSet::from_mask(block_of.iter().map(|&b| b <= j).collect()))
        .collect();
    let chain = AbsorbingChain::new(&kernel, sets)?;
    Ok(RandomInstance {
        kernel,
        chain,
        block_of,
    })
}
