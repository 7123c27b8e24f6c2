//! Perturbation of space-time kernels by measures.

pub mod atoms;
pub mod kappa;
pub mod measure;
pub mod semi;
pub mod solver;

pub use atoms::{multi_atom_iterate_count, multi_atom_series_factor, AtomChainOperator};
pub use measure::{Atom, Bound, Density, Interval, MeasureSpec, PerturbingMeasure};
pub use solver::{first_order_ratio, pn_term, series, series_batch, PerturbedValue, RatioField, SeriesSolver, SolverSpec};
pub use kappa::{kappa_certify, KappaProblem, KappaReport, KappaSampler};
