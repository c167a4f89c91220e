//! Synthetic inlier/outlier datasets, SNR threshold formulas and dataset files.
//!
//! A dataset on disk is a CSV file with one point per row (`x0,...,x{D-1},label`, label
//! `in` or `out`) next to a JSON sidecar (`<stem>.meta.json`) holding the generation
//! parameters, seed and ground-truth basis.

use std::f64::consts::SQRT_2;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RsrError};
use crate::grassmann::{random_subspace, Subspace};
use crate::linalg::{gaussian_matrix, gaussian_vector, hstack};

/// Relative residual tolerance for noiseless inliers.
pub const INLIER_CONTAINMENT_TOL: f64 = 1e-10;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub model: String,
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default)]
    pub noise_distribution: Option<String>,
}

/// Labeled inliers and outliers (`D x N_in` and `D x N_out`, one point per column).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inliers: DMatrix<f64>,
    outliers: DMatrix<f64>,
    ground_truth: Option<Subspace>,
    noise_epsilon: Option<f64>,
    pub meta: DatasetMeta,
}

impl Dataset {
    /// Builds a dataset, checking that noiseless inliers lie on the ground truth
    /// (relative residual at most [`INLIER_CONTAINMENT_TOL`]) and noisy ones within
    /// `noise_epsilon` of it.
    pub fn new(
        inliers: DMatrix<f64>,
        outliers: DMatrix<f64>,
        ground_truth: Option<Subspace>,
        noise_epsilon: Option<f64>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        let ambient = if inliers.ncols() > 0 { inliers.nrows() } else { outliers.nrows() };
        if ambient == 0 {
            return Err(RsrError::invalid("points must have positive dimension"));
        }
        for (name, m) in [("inliers", &inliers), ("outliers", &outliers)] {
            if m.ncols() > 0 && m.nrows() != ambient {
                return Err(RsrError::DimensionMismatch(format!(
                    "{name} have dimension {}, expected {ambient}",
                    m.nrows()
                )));
            }
        }
        let inliers = if inliers.ncols() == 0 { DMatrix::zeros(ambient, 0) } else { inliers };
        let outliers = if outliers.ncols() == 0 { DMatrix::zeros(ambient, 0) } else { outliers };
        let all = hstack(&inliers, &outliers);
        crate::energy::check_points(&all, ambient)?;
        if let Some(eps) = noise_epsilon {
            if !(eps > 0.0) {
                return Err(RsrError::invalid(format!("noise epsilon must be positive, got {eps}")));
            }
        }
        if let Some(l) = &ground_truth {
            if l.ambient_dim() != ambient {
                return Err(RsrError::DimensionMismatch(format!(
                    "ground truth lives in R^{}, points in R^{ambient}",
                    l.ambient_dim()
                )));
            }
            for (i, x) in inliers.column_iter().enumerate() {
                let r = l.residual(&x.into_owned()).norm();
                let ok = match noise_epsilon {
                    None => r <= INLIER_CONTAINMENT_TOL * x.norm(),
                    Some(eps) => r < eps,
                };
                if !ok {
                    return Err(RsrError::invalid(format!(
                        "inlier {i} is {r:e} away from the ground-truth subspace"
                    )));
                }
            }
        }
        Ok(Dataset { inliers, outliers, ground_truth, noise_epsilon, meta })
    }

    pub fn inliers(&self) -> &DMatrix<f64> {
        &self.inliers
    }

    pub fn outliers(&self) -> &DMatrix<f64> {
        &self.outliers
    }

    pub fn ground_truth(&self) -> Option<&Subspace> {
        self.ground_truth.as_ref()
    }

    pub fn require_ground_truth(&self) -> Result<&Subspace> {
        self.ground_truth.as_ref().ok_or(RsrError::MissingGroundTruth)
    }

    pub fn noise_epsilon(&self) -> Option<f64> {
        self.noise_epsilon
    }

    pub fn ambient_dim(&self) -> usize {
        self.inliers.nrows()
    }

    pub fn n_inliers(&self) -> usize {
        self.inliers.ncols()
    }

    pub fn n_outliers(&self) -> usize {
        self.outliers.ncols()
    }

    pub fn len(&self) -> usize {
        self.n_inliers() + self.n_outliers()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All points, inliers first.
    pub fn points(&self) -> DMatrix<f64> {
        hstack(&self.inliers, &self.outliers)
    }

    /// The same dataset with inliers replaced by their projections onto the ground truth.
    pub fn denoised(&self) -> Result<Dataset> {
        let l = self.require_ground_truth()?;
        let b = l.basis();
        let inliers = b * (b.transpose() * &self.inliers);
        Dataset::new(inliers, self.outliers.clone(), Some(l.clone()), None, self.meta.clone())
    }

    /// CSV text of the points; inliers come first.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (0..self.ambient_dim()).map(|i| format!("x{i}")).collect();
        let _ = writeln!(out, "{},label", header.join(","));
        for (m, label) in [(&self.inliers, "in"), (&self.outliers, "out")] {
            for col in m.column_iter() {
                for v in col.iter() {
                    let _ = write!(out, "{v:.16e},");
                }
                let _ = writeln!(out, "{label}");
            }
        }
        out
    }

    /// Writes `path` and its metadata sidecar (see [`meta_path_for`]).
    pub fn write_files(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string())?;
        let meta = MetaFile {
            meta: self.meta.clone(),
            ambient_dim: self.ambient_dim(),
            n_inliers: self.n_inliers(),
            n_outliers: self.n_outliers(),
            noise_epsilon: self.noise_epsilon,
            ground_truth: self.ground_truth.as_ref().map(|l| {
                (0..l.ambient_dim())
                    .map(|i| l.basis().row(i).iter().copied().collect())
                    .collect()
            }),
        };
        std::fs::write(meta_path_for(path), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    /// Reads a dataset CSV and, when present, its metadata sidecar.
    pub fn read_files(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let (inliers, outliers) = parse_points_csv(&text)?;
        let meta_path = meta_path_for(path);
        if !meta_path.exists() {
            return Dataset::new(inliers, outliers, None, None, DatasetMeta::default());
        }
        let meta: MetaFile = serde_json::from_str(&std::fs::read_to_string(meta_path)?)?;
        if meta.ambient_dim != inliers.nrows()
            || meta.n_inliers != inliers.ncols()
            || meta.n_outliers != outliers.ncols()
        {
            return Err(RsrError::Parse("metadata does not match the point file".into()));
        }
        let ground_truth = match meta.ground_truth {
            None => None,
            Some(rows) => {
                let dd = rows.len();
                let d = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != d) {
                    return Err(RsrError::Parse("ragged ground-truth basis".into()));
                }
                Some(Subspace::from_basis(DMatrix::from_fn(dd, d, |i, j| rows[i][j]))?)
            }
        };
        Dataset::new(inliers, outliers, ground_truth, meta.noise_epsilon, meta.meta)
    }
}

#[derive(Serialize, Deserialize)]
struct MetaFile {
    #[serde(flatten)]
    meta: DatasetMeta,
    ambient_dim: usize,
    n_inliers: usize,
    n_outliers: usize,
    noise_epsilon: Option<f64>,
    /// Row-major `D x d` basis.
    ground_truth: Option<Vec<Vec<f64>>>,
}

/// `data.csv -> data.meta.json`.
pub fn meta_path_for(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}

fn parse_points_csv(text: &str) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| RsrError::Parse("empty dataset file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let ambient = cols.len().saturating_sub(1);
    let expected = (0..ambient).map(|i| format!("x{i}"));
    if ambient == 0 || cols[ambient] != "label" || !expected.zip(&cols).all(|(e, c)| e == *c) {
        return Err(RsrError::Parse(format!("bad dataset header {header:?}")));
    }
    let mut inl = Vec::new();
    let mut out = Vec::new();
    for (row, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != ambient + 1 {
            return Err(RsrError::Parse(format!("row {row} has {} fields", f.len())));
        }
        let target = match f[ambient] {
            "in" => &mut inl,
            "out" => &mut out,
            other => return Err(RsrError::Parse(format!("row {row}: unknown label {other:?}"))),
        };
        for v in &f[..ambient] {
            target.push(
                v.parse::<f64>()
                    .map_err(|_| RsrError::Parse(format!("row {row}: bad number {v:?}")))?,
            );
        }
    }
    Ok((
        DMatrix::from_vec(ambient, inl.len() / ambient, inl),
        DMatrix::from_vec(ambient, out.len() / ambient, out),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HaystackParams {
    pub n_in: usize,
    pub n_out: usize,
    pub sigma_in: f64,
    pub sigma_out: f64,
    #[serde(rename = "D")]
    pub ambient: usize,
    pub d: usize,
}

impl HaystackParams {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d >= self.ambient {
            return Err(RsrError::invalid(format!(
                "need 1 <= d < D, got d={}, D={}",
                self.d, self.ambient
            )));
        }
        if !(self.sigma_in > 0.0 && self.sigma_out > 0.0) {
            return Err(RsrError::invalid("standard deviations must be positive"));
        }
        Ok(())
    }
}

/// Haystack model: a uniformly random `L_*`, inliers `N(0, sigma_in^2 P_{L_*} / d)` and
/// outliers `N(0, sigma_out^2 I / D)`.
pub fn haystack<R: Rng + ?Sized>(p: &HaystackParams, rng: &mut R) -> Result<Dataset> {
    p.validate()?;
    let l = random_subspace(p.ambient, p.d, rng)?;
    let inliers = l.basis() * gaussian_matrix(p.d, p.n_in, rng) * (p.sigma_in / (p.d as f64).sqrt());
    let outliers = gaussian_matrix(p.ambient, p.n_out, rng) * (p.sigma_out / (p.ambient as f64).sqrt());
    let meta = DatasetMeta {
        model: "haystack".into(),
        seed: None,
        params: serde_json::to_value(p)?,
        noise_distribution: None,
    };
    Dataset::new(inliers, outliers, Some(l), None, meta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedHaystackParams {
    pub n_in: usize,
    /// Diagonal of `Lambda_in`; its length is `d`.
    pub lambda_in: Vec<f64>,
    pub n_out: usize,
    /// Rows of the `D x D` outlier covariance.
    pub sigma_out: Vec<Vec<f64>>,
}

/// Generalized Haystack model: inliers `N(0, V_* Lambda_in V_*^T / d)` on a random `L_*`,
/// outliers `N(0, Sigma_out / D_out)` with `D_out` the numerical rank of `Sigma_out`.
pub fn generalized_haystack<R: Rng + ?Sized>(
    p: &GeneralizedHaystackParams,
    ambient: usize,
    rng: &mut R,
) -> Result<Dataset> {
    let d = p.lambda_in.len();
    if d == 0 || d >= ambient {
        return Err(RsrError::invalid(format!("need 1 <= d < D, got d={d}, D={ambient}")));
    }
    if p.lambda_in.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(RsrError::invalid("inlier variances must be positive"));
    }
    if p.sigma_out.len() != ambient || p.sigma_out.iter().any(|r| r.len() != ambient) {
        return Err(RsrError::DimensionMismatch(format!("outlier covariance must be {ambient}x{ambient}")));
    }
    let sigma = DMatrix::from_fn(ambient, ambient, |i, j| p.sigma_out[i][j]);
    let (factor, d_out) = covariance_factor(&sigma)?;

    let l = random_subspace(ambient, d, rng)?;
    let scale = DVector::from_iterator(d, p.lambda_in.iter().map(|l| l.sqrt()));
    let g = DMatrix::from_diagonal(&scale) * gaussian_matrix(d, p.n_in, rng);
    let inliers = l.basis() * g / (d as f64).sqrt();
    let outliers = if d_out == 0 {
        DMatrix::zeros(ambient, p.n_out)
    } else {
        &factor * gaussian_matrix(factor.ncols(), p.n_out, rng) / (d_out as f64).sqrt()
    };
    let meta = DatasetMeta {
        model: "generalized_haystack".into(),
        seed: None,
        params: serde_json::json!({ "D": ambient, "d": d, "D_out": d_out, "params": p }),
        noise_distribution: None,
    };
    Dataset::new(inliers, outliers, Some(l), None, meta)
}

/// `F` with `F F^T = Sigma` built from the eigendecomposition, keeping only the
/// eigenvalues above `1e-10 * lambda_1`; also returns their count (the numerical rank).
fn covariance_factor(sigma: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    let asym = (sigma - sigma.transpose()).abs().max();
    if asym > 1e-10 * (1.0 + sigma.abs().max()) {
        return Err(RsrError::invalid("outlier covariance is not symmetric"));
    }
    let eig = SymmetricEigen::new((sigma + sigma.transpose()) * 0.5);
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let lmin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if lmin < -1e-10 {
        return Err(RsrError::invalid(format!(
            "outlier covariance is not positive semi-definite (smallest eigenvalue {lmin:e})"
        )));
    }
    let keep: Vec<usize> = (0..sigma.nrows())
        .filter(|&i| eig.eigenvalues[i] > 1e-10 * lmax && eig.eigenvalues[i] > 0.0)
        .collect();
    let mut f = DMatrix::zeros(sigma.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        f.set_column(c, &(eig.eigenvectors.column(i) * eig.eigenvalues[i].sqrt()));
    }
    Ok((f, keep.len()))
}

/// `n` points drawn uniformly from the ball of radius `m` in `R^ambient`.
pub fn bounded_uniform_outliers<R: Rng + ?Sized>(
    n: usize,
    m: f64,
    ambient: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if !(m > 0.0 && m.is_finite()) || ambient == 0 {
        return Err(RsrError::invalid(format!("need M > 0 and D >= 1, got M={m}, D={ambient}")));
    }
    let mut out = DMatrix::zeros(ambient, n);
    for j in 0..n {
        let g = loop {
            let g = gaussian_vector(ambient, rng);
            if g.norm() > 0.0 {
                break g;
            }
        };
        let radius = m * rng.random::<f64>().powf(1.0 / ambient as f64);
        out.set_column(j, &(g.normalize() * radius));
    }
    Ok(out)
}

/// Perturbs every inlier by an independent vector in the orthogonal complement of the
/// ground truth with a uniform direction and magnitude `Uniform(0, epsilon)`.
pub fn add_noise<R: Rng + ?Sized>(x: &Dataset, epsilon: f64, rng: &mut R) -> Result<Dataset> {
    let l = x.require_ground_truth()?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(RsrError::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if l.dim() == l.ambient_dim() {
        return Err(RsrError::invalid("ground truth has no orthogonal complement"));
    }
    let mut inliers = x.inliers().clone();
    for mut col in inliers.column_iter_mut() {
        let dir = loop {
            let g = gaussian_vector(l.ambient_dim(), rng);
            let q = l.residual(&l.residual(&g));
            if q.norm() > 1e-8 * g.norm() {
                break q.normalize();
            }
        };
        let magnitude = epsilon * rng.random::<f64>();
        col += dir * magnitude;
    }
    let eps = x.noise_epsilon().unwrap_or(0.0) + epsilon;
    let mut meta = x.meta.clone();
    meta.noise_distribution = Some("uniform direction in the complement, magnitude Uniform(0, epsilon)".into());
    Dataset::new(inliers, x.outliers().clone(), Some(l.clone()), Some(eps), meta)
}

/// `N_in / N_out`.
pub fn snr(x: &Dataset) -> Result<f64> {
    if x.n_outliers() == 0 {
        return Err(RsrError::SnrUndefined);
    }
    Ok(x.n_inliers() as f64 / x.n_outliers() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrRegime {
    SmallSample,
    LargeSample,
}

/// Sufficient SNR for recovery under the Haystack model.
///
/// Small samples: `max(8 sqrt2 (so/si) d / sqrt(D), 2 (so/si)^2 d / D)`.
/// Large samples: `max(5 sqrt2 (so/si) d / sqrt(D (D - d)), 2 (so/si)^2 d / D)`.
pub fn snr_threshold(
    regime: SnrRegime,
    sigma_in: f64,
    sigma_out: f64,
    ambient: usize,
    d: usize,
) -> Result<f64> {
    if d == 0 || d >= ambient || !(sigma_in > 0.0 && sigma_out > 0.0) {
        return Err(RsrError::invalid("SNR threshold needs 1 <= d < D and positive sigmas"));
    }
    let ratio = sigma_out / sigma_in;
    let (dd, d) = (ambient as f64, d as f64);
    let pca_term = 2.0 * ratio * ratio * d / dd;
    let stability_term = match regime {
        SnrRegime::SmallSample => 8.0 * SQRT_2 * ratio * d / dd.sqrt(),
        SnrRegime::LargeSample => 5.0 * SQRT_2 * ratio * d / (dd * (dd - d)).sqrt(),
    };
    Ok(stability_term.max(pca_term))
}

/// SNR above which the stability statistic is positive with high probability at
/// neighborhood radius `gamma`: `8 / cos(gamma) * (so/si) * d / sqrt(D)`.
pub fn stability_snr_threshold(
    gamma: f64,
    sigma_in: f64,
    sigma_out: f64,
    ambient: usize,
    d: usize,
) -> Result<f64> {
    if !(gamma > 0.0 && gamma < std::f64::consts::FRAC_PI_2) {
        return Err(RsrError::invalid(format!("gamma must lie in (0, pi/2), got {gamma}")));
    }
    if d == 0 || d >= ambient || !(sigma_in > 0.0 && sigma_out > 0.0) {
        return Err(RsrError::invalid("SNR threshold needs 1 <= d < D and positive sigmas"));
    }
    Ok(8.0 / gamma.cos() * (sigma_out / sigma_in) * d as f64 / (ambient as f64).sqrt())
}

/// High-probability bound on `||X_out||_2` for `n` i.i.d. uniform points of `B(0, m)` in
/// `R^ambient`: `m (sqrt(n / (D - 1/2)) + sqrt2 + t / sqrt(D - 1/2))`.
pub fn uniform_ball_norm_bound(n: usize, m: f64, ambient: usize, t: f64) -> f64 {
    let dd = ambient as f64 - 0.5;
    m * ((n as f64 / dd).sqrt() + SQRT_2 + t / dd.sqrt())
}
