//! Space-time transition densities and the inequalities they satisfy.

pub mod inequalities;
pub mod kato;
pub mod kernels;
pub mod weyl;

pub use kernels::{
    kappa, kappa0, kappa_time_integral, kernel_by_name, subordinator_density,
    subordinator_laplace, subordinator_potential, AtomPerturbed, AtomRule, Cauchy, Gaussian, Kappa, Reflected, SharedKernel, SpaceTimeKernel,
    StablePotential,
};
pub use inequalities::{
    check_3g, check_3p, check_chapman_kolmogorov, eta_for_kappa, kappa_slice_integral, kappa_slice_ratio, sample_3g,
    sample_3p, solve_h, cauchy_profile_ratio, kappa_scaling_exponent, CkResidual, DiagonalSlices, ThreeG, ThreeGSample, ThreeP, ThreePSample,
};
pub use kato::{kato_certify, kato_modulus, KatoCertificate, KatoPoint, KatoReport, KatoSpec};
pub use weyl::{left_inverse_residual, weyl_half_derivative, weyl_half_derivative_difference, Bump, Bump1, LeftInverseKernel, LeftInverseReport};
