//! Robust subspace recovery by geodesic gradient descent on the Grassmannian.
//!
//! The crate fits a `d`-dimensional linear subspace to data contaminated by outliers
//! by minimizing the least-absolute-deviations energy `F(L) = sum_i ||x_i - P_L x_i||`
//! over `G(D, d)`. Besides the solver it ships the landscape statistics used to certify
//! recovery (permeance, alignment, stability margins), synthetic data generators and
//! the experiment drivers behind the command line tool.

pub mod datagen;
pub mod energy;
pub mod error;
pub mod experiment;
pub mod ggd;
pub mod grassmann;
pub mod linalg;
pub mod stability;

pub use datagen::{
    add_noise, bounded_uniform_outliers, generalized_haystack, haystack, snr, snr_threshold,
    Dataset, DatasetMeta, GeneralizedHaystackParams, HaystackParams, SnrRegime,
};
pub use energy::{
    energy, energy_and_gradient, energy_with_tol, euclidean_subderivative, geodesic_subderivative,
    grass_gradient, special_geodesic, special_geodesic_derivative, EnergyEval, DEFAULT_TOL_ACTIVE,
};
pub use error::{Result, RsrError};
pub use ggd::{
    pca_subspace, run_ggd, run_ggd_tracked, step_size, AdaptiveState, GgdConfig, GgdTrace, Init,
    StepSchedule, StopReason, TraceRecord,
};
pub use grassmann::{
    geodesic, geodesic_step, orthonormalize, principal_angles, principal_decomposition,
    random_subspace, subspace_at_angle, theta1, Geodesic, GeodesicDirection,
    PrincipalDecomposition, Subspace,
};
pub use stability::{
    alignment, alignment_global_bound, noisy_stability, pca_init_condition, permeance,
    points_on_subspace, sample_ball, stability, stability_with_samples, strong_gradient_check,
    NoisyStabilityReport, StabilityReport, StrongGradientCheck,
};

/// Deterministic generator used for every seeded draw in the crate.
pub fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
