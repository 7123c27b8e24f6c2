//! Finite-state kernels: exact matrix operators, state sets and absorbing
//! chains.

mod matrix;
mod random;
mod set;

pub use matrix::{DiscreteDocument, MatrixKernel, Side};
pub use random::{random_chain_kernel, RandomKernelSpec, RandomInstance};
pub use set::{AbsorbingChain, StateSet};

/// Product `a * b` with the convention `0 * inf = 0`.
pub fn measure_mul(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}
