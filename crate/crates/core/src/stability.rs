//! Landscape statistics: permeance of the inliers, alignment of the outliers, the
//! noiseless and noisy stability margins, and the sufficient conditions for PCA
//! initialization and for the strong gradient property.
//!
//! Suprema over the ball `B(L_*, gamma)` and extrema over unit directions of `L_*` are
//! Monte Carlo estimates. Every sample gets its own generator seeded from a base seed
//! and the sample index, so results do not depend on the thread count.

use std::fmt::Write as _;

use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datagen::Dataset;
use crate::energy::{grass_gradient, special_geodesic_derivative, DEFAULT_TOL_ACTIVE};
use crate::error::{Result, RsrError};
use crate::grassmann::{subspace_at_angle, Subspace};
use crate::linalg::{gaussian_vector, spectral_norm, sym_eigenvalues_desc};

/// Relative residual above which an inlier is reported as off the subspace.
pub const PERMEANCE_RESIDUAL_TOL: f64 = 1e-8;

/// Generator for sample `index` of a Monte Carlo estimate with base seed `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Smallest eigenvalue of `sum x x^T / ||x||` over the inliers, restricted to `L_*`.
pub fn permeance(x_in: &DMatrix<f64>, l_star: &Subspace) -> Result<f64> {
    crate::energy::check_points(x_in, l_star.ambient_dim())?;
    if x_in.ncols() == 0 {
        warn!("permeance of an empty inlier set is 0");
        return Ok(0.0);
    }
    let coords = l_star.basis().transpose() * x_in;
    let d = l_star.dim();
    let mut m = DMatrix::zeros(d, d);
    let mut off = 0;
    for (i, x) in x_in.column_iter().enumerate() {
        let n = x.norm();
        if n == 0.0 {
            continue;
        }
        let c = coords.column(i);
        if l_star.residual(&x.into_owned()).norm() > PERMEANCE_RESIDUAL_TOL * n {
            off += 1;
        }
        m += c * c.transpose() / n;
    }
    if off > 0 {
        warn!("{off} inliers are not on the reference subspace; permeance assumes noiseless inliers");
    }
    Ok(sym_eigenvalues_desc(&m)[d - 1].max(0.0))
}

/// Spectral norm of `sum (Q_L x / ||Q_L x||) x^T V` over the active outliers, i.e. of the
/// outlier part of the Grassmannian gradient.
pub fn alignment(x_out: &DMatrix<f64>, l: &Subspace, tol_active: f64) -> Result<f64> {
    if x_out.ncols() == 0 {
        return Ok(0.0);
    }
    Ok(spectral_norm(&grass_gradient(l, x_out, tol_active)?))
}

/// `sqrt(N_out) * ||X_out||_2`, an upper bound on the alignment at every subspace.
pub fn alignment_global_bound(x_out: &DMatrix<f64>) -> f64 {
    (x_out.ncols() as f64).sqrt() * spectral_norm(x_out)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < std::f64::consts::FRAC_PI_2) {
        return Err(RsrError::invalid(format!("gamma must lie in (0, pi/2), got {gamma}")));
    }
    Ok(())
}

/// `n` subspaces with largest principal angle to `l_star` drawn uniformly from `(0, gamma]`.
pub fn sample_ball(l_star: &Subspace, gamma: f64, n: usize, seed: u64) -> Result<Vec<Subspace>> {
    check_gamma(gamma)?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i as u64);
            let angle = gamma * (1.0 - rng.random::<f64>());
            subspace_at_angle(l_star, angle, &mut rng)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    pub permeance: f64,
    pub alignment_at_center: f64,
    /// Largest alignment over the center and the sampled subspaces (an estimate of the sup).
    pub alignment_sup_estimate: f64,
    pub alignment_global_bound: f64,
    pub gamma: f64,
    /// `cos(gamma) * permeance - alignment_sup_estimate`.
    pub s_sampled: f64,
    /// `cos(gamma) * permeance - alignment_global_bound`, a certified lower bound.
    pub s_global_lower: f64,
    pub n_samples: usize,
    pub seed: u64,
}

const REPORT_FIELDS: [&str; 9] = [
    "permeance",
    "alignment_at_center",
    "alignment_sup_estimate",
    "alignment_global_bound",
    "gamma",
    "s_sampled",
    "s_global_lower",
    "n_samples",
    "seed",
];

impl StabilityReport {
    fn values(&self) -> [String; 9] {
        [
            format!("{:.16e}", self.permeance),
            format!("{:.16e}", self.alignment_at_center),
            format!("{:.16e}", self.alignment_sup_estimate),
            format!("{:.16e}", self.alignment_global_bound),
            format!("{:.16e}", self.gamma),
            format!("{:.16e}", self.s_sampled),
            format!("{:.16e}", self.s_global_lower),
            self.n_samples.to_string(),
            self.seed.to_string(),
        ]
    }

    /// One `key=value` line per field.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        for (k, v) in REPORT_FIELDS.iter().zip(self.values()) {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn csv_header() -> String {
        REPORT_FIELDS.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        self.values().join(",")
    }
}

/// Noiseless stability statistic with the sup over `B(L_*, gamma)` estimated from
/// `n_samples` random subspaces (plus `L_*` itself).
pub fn stability<R: Rng + ?Sized>(
    x: &Dataset,
    gamma: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<StabilityReport> {
    let l_star = x.require_ground_truth()?;
    check_gamma(gamma)?;
    let seed = rng.random::<u64>();
    let samples = sample_ball(l_star, gamma, n_samples, seed)?;
    stability_with_samples(x, gamma, &samples, seed)
}

/// [`stability`] over an explicit set of sampled subspaces.
pub fn stability_with_samples(
    x: &Dataset,
    gamma: f64,
    samples: &[Subspace],
    seed: u64,
) -> Result<StabilityReport> {
    let l_star = x.require_ground_truth()?;
    check_gamma(gamma)?;
    let perm = permeance(x.inliers(), l_star)?;
    let center = alignment(x.outliers(), l_star, DEFAULT_TOL_ACTIVE)?;
    let sampled: Vec<f64> = samples
        .par_iter()
        .map(|l| alignment(x.outliers(), l, DEFAULT_TOL_ACTIVE))
        .collect::<Result<_>>()?;
    let sup = sampled.iter().copied().fold(center, f64::max);
    let bound = alignment_global_bound(x.outliers());
    let scaled = gamma.cos() * perm;
    Ok(StabilityReport {
        permeance: perm,
        alignment_at_center: center,
        alignment_sup_estimate: sup,
        alignment_global_bound: bound,
        gamma,
        s_sampled: scaled - sup,
        s_global_lower: scaled - bound,
        n_samples: samples.len(),
        seed,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisyStabilityReport {
    pub epsilon: f64,
    pub delta: f64,
    pub gamma: f64,
    /// `2 * atan(epsilon / delta)`, the accuracy the statistic certifies.
    pub eta: f64,
    /// `cos(gamma - eta) / 2` times the sampled min over directions of the trimmed sum.
    pub trimmed_permeance_term: f64,
    /// `sqrt(delta^2 + epsilon^2)` times the sampled max count of small projections.
    pub small_projection_term: f64,
    pub alignment_sup_estimate: f64,
    pub s_n: f64,
    pub n_direction_samples: usize,
    pub n_subspace_samples: usize,
    pub seed: u64,
}

/// Noisy stability statistic `S_n` with both extrema over unit directions `w` of `L_*`
/// estimated from `n_dir_samples` uniform directions.
///
/// For each direction, inliers with `|w^T x| <= delta` are small-projection inliers;
/// the others contribute `(w^T P x)^2 / (||P x|| + sqrt(eps^2 + delta^2))`.
pub fn noisy_stability<R: Rng + ?Sized>(
    x: &Dataset,
    epsilon: f64,
    delta: f64,
    gamma: f64,
    n_dir_samples: usize,
    n_sub_samples: usize,
    rng: &mut R,
) -> Result<NoisyStabilityReport> {
    let l_star = x.require_ground_truth()?;
    check_gamma(gamma)?;
    if !(epsilon > 0.0 && delta > epsilon) {
        return Err(RsrError::invalid(format!(
            "need delta > epsilon > 0, got epsilon={epsilon}, delta={delta}"
        )));
    }
    let eta = 2.0 * (epsilon / delta).atan();
    if eta >= gamma {
        return Err(RsrError::invalid(format!(
            "accuracy eta = {eta} must be below gamma = {gamma}"
        )));
    }
    if n_dir_samples == 0 {
        return Err(RsrError::invalid("need at least one direction sample"));
    }
    let seed = rng.random::<u64>();
    let radius = (epsilon * epsilon + delta * delta).sqrt();
    let coords = l_star.basis().transpose() * x.inliers();
    let proj_norms: Vec<f64> = coords.column_iter().map(|c| c.norm()).collect();

    let per_direction: Vec<(f64, usize)> = (0..n_dir_samples)
        .into_par_iter()
        .map(|i| {
            let mut drng = sample_rng(seed, i as u64);
            let w = loop {
                let g = gaussian_vector(l_star.dim(), &mut drng);
                if g.norm() > 0.0 {
                    break g.normalize();
                }
            };
            let mut sum = 0.0;
            let mut small = 0;
            for (j, c) in coords.column_iter().enumerate() {
                let wx = w.dot(&c);
                if wx.abs() > delta {
                    sum += wx * wx / (proj_norms[j] + radius);
                } else {
                    small += 1;
                }
            }
            (sum, small)
        })
        .collect();
    let min_sum = per_direction.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_small = per_direction.iter().map(|p| p.1).max().unwrap_or(0);

    let samples = sample_ball(l_star, gamma, n_sub_samples, seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let center = alignment(x.outliers(), l_star, DEFAULT_TOL_ACTIVE)?;
    let sampled: Vec<f64> = samples
        .par_iter()
        .map(|l| alignment(x.outliers(), l, DEFAULT_TOL_ACTIVE))
        .collect::<Result<_>>()?;
    let sup = sampled.iter().copied().fold(center, f64::max);

    let trimmed = (gamma - eta).cos() / 2.0 * min_sum;
    let small_term = radius * max_small as f64;
    Ok(NoisyStabilityReport {
        epsilon,
        delta,
        gamma,
        eta,
        trimmed_permeance_term: trimmed,
        small_projection_term: small_term,
        alignment_sup_estimate: sup,
        s_n: trimmed - small_term - sup,
        n_direction_samples: n_dir_samples,
        n_subspace_samples: n_sub_samples,
        seed,
    })
}

/// `lhs = sqrt(2) sin(gamma) lambda_d(X_in X_in^T) - ||X_out||_2^2`; when `lhs > 0` the
/// PCA subspace lies in `B(L_*, gamma)`.
pub fn pca_init_condition(x: &Dataset, gamma: f64) -> Result<(f64, bool)> {
    let l_star = x.require_ground_truth()?;
    let d = l_star.dim();
    let lambda_d = if x.n_inliers() == 0 {
        0.0
    } else {
        let c = x.inliers() * x.inliers().transpose();
        sym_eigenvalues_desc(&c)[d - 1].max(0.0)
    };
    let out = spectral_norm(x.outliers());
    let lhs = std::f64::consts::SQRT_2 * gamma.sin() * lambda_d - out * out;
    Ok((lhs, lhs > 0.0))
}

/// Indices of the points with `||Q_L x|| <= tol * ||x||`.
pub fn points_on_subspace(x: &DMatrix<f64>, l: &Subspace, tol: f64) -> Result<Vec<usize>> {
    crate::energy::check_points(x, l.ambient_dim())?;
    Ok(x.column_iter()
        .enumerate()
        .filter(|(_, c)| l.residual(&c.into_owned()).norm() <= tol * c.norm())
        .map(|(i, _)| i)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrongGradientCheck {
    /// A quarter of the smallest `|special_geodesic_derivative|` over the samples.
    pub lhs_estimate: f64,
    /// Largest `2 * sum ||x||` over the points lying on a sampled subspace.
    pub rhs: f64,
    pub holds: bool,
}

/// Strong gradient condition over explicit samples of `B(L_*, gamma) \ {L_*}`.
pub fn strong_gradient_check_with_samples(
    x: &Dataset,
    samples: &[Subspace],
    tol_on: f64,
) -> Result<StrongGradientCheck> {
    let l_star = x.require_ground_truth()?;
    let points = x.points();
    let per: Vec<(f64, f64)> = samples
        .par_iter()
        .map(|l| {
            let der = special_geodesic_derivative(l, l_star, &points, DEFAULT_TOL_ACTIVE)?;
            let on = points_on_subspace(&points, l, tol_on)?;
            let mass: f64 = on.iter().map(|&i| 2.0 * points.column(i).norm()).sum();
            Ok((der.abs(), mass))
        })
        .collect::<Result<_>>()?;
    let lhs = 0.25 * per.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let rhs = per.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(StrongGradientCheck { lhs_estimate: lhs, rhs, holds: lhs > rhs })
}

pub fn strong_gradient_check<R: Rng + ?Sized>(
    x: &Dataset,
    gamma: f64,
    n_samples: usize,
    tol_on: f64,
    rng: &mut R,
) -> Result<StrongGradientCheck> {
    let l_star = x.require_ground_truth()?;
    let samples = sample_ball(l_star, gamma, n_samples, rng.random())?;
    strong_gradient_check_with_samples(x, &samples, tol_on)
}
