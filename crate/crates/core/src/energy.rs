//! The least-absolute-deviations energy `F(L; X) = sum_i ||Q_L x_i||` and its
//! first-order information: the Euclidean subderivative, the Grassmannian gradient and
//! directional derivatives along geodesics.
//!
//! Point sets are `D x N` matrices with one point per column. A point counts as lying
//! on the subspace when `||Q_V x|| <= tol_active * ||x||`; such points (and zero points)
//! contribute nothing to the energy or to any derivative. Sums run in column order, so
//! results are bitwise reproducible.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RsrError};
use crate::grassmann::{principal_decomposition, Subspace};

/// Default relative threshold separating points on the subspace from active points.
pub const DEFAULT_TOL_ACTIVE: f64 = 1e-12;

/// Below this ratio `||Qx||^2 / ||x||^2` the cheap residual formula loses too many digits
/// and the residual is recomputed directly.
const CANCELLATION_GUARD: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyEval {
    pub value: f64,
    pub active_count: usize,
    pub skipped_count: usize,
}

/// Per-point quantities shared by the energy and the gradients.
pub(crate) struct Residuals {
    /// `V^T X`, `d x N`.
    pub proj: DMatrix<f64>,
    /// `||Q_V x_i||`, zero for skipped points.
    pub norms: Vec<f64>,
    /// `1 / ||Q_V x_i||` for active points, zero otherwise.
    pub weights: Vec<f64>,
    pub active: usize,
}

pub(crate) fn check_points(x: &DMatrix<f64>, ambient: usize) -> Result<()> {
    if x.ncols() > 0 && x.nrows() != ambient {
        return Err(RsrError::DimensionMismatch(format!(
            "points have dimension {}, subspace lives in R^{ambient}",
            x.nrows()
        )));
    }
    for (i, col) in x.column_iter().enumerate() {
        if col.iter().any(|v| !v.is_finite()) {
            return Err(RsrError::NonFinite { index: i });
        }
    }
    Ok(())
}

pub(crate) fn residuals(v: &Subspace, x: &DMatrix<f64>, tol_active: f64) -> Result<Residuals> {
    check_points(x, v.ambient_dim())?;
    let basis = v.basis();
    let n = x.ncols();
    let proj = if n == 0 {
        DMatrix::zeros(v.dim(), 0)
    } else {
        basis.transpose() * x
    };
    let mut norms = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut active = 0;
    for i in 0..n {
        let xi = x.column(i);
        let nx2 = xi.norm_squared();
        if nx2 == 0.0 {
            continue;
        }
        let mut r2 = nx2 - proj.column(i).norm_squared();
        if r2 < CANCELLATION_GUARD * nx2 {
            r2 = (xi - basis * proj.column(i)).norm_squared();
        }
        let r = r2.max(0.0).sqrt();
        if r > tol_active * nx2.sqrt() {
            norms[i] = r;
            weights[i] = 1.0 / r;
            active += 1;
        }
    }
    Ok(Residuals { proj, norms, weights, active })
}

impl Residuals {
    pub fn eval(&self) -> EnergyEval {
        EnergyEval {
            value: self.norms.iter().sum(),
            active_count: self.active,
            skipped_count: self.norms.len() - self.active,
        }
    }

    /// `(V^T x_i) / ||Q x_i||` as columns, zero for skipped points.
    fn weighted_proj(&self) -> DMatrix<f64> {
        let mut wp = self.proj.clone();
        for (i, mut col) in wp.column_iter_mut().enumerate() {
            col *= self.weights[i];
        }
        wp
    }

    pub fn euclidean(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        if x.ncols() == 0 {
            return DMatrix::zeros(x.nrows(), self.proj.nrows());
        }
        -(x * self.weighted_proj().transpose())
    }

    pub fn grassmannian(&self, v: &Subspace, x: &DMatrix<f64>) -> DMatrix<f64> {
        if x.ncols() == 0 {
            return DMatrix::zeros(v.ambient_dim(), v.dim());
        }
        let resid = x - v.basis() * &self.proj;
        -(resid * self.weighted_proj().transpose())
    }
}

/// `F(L; X)` with the default active tolerance.
pub fn energy(l: &Subspace, x: &DMatrix<f64>) -> Result<EnergyEval> {
    energy_with_tol(l, x, DEFAULT_TOL_ACTIVE)
}

pub fn energy_with_tol(l: &Subspace, x: &DMatrix<f64>, tol_active: f64) -> Result<EnergyEval> {
    Ok(residuals(l, x, tol_active)?.eval())
}

/// `-sum x_i x_i^T V / ||Q_V x_i||` over the active points.
pub fn euclidean_subderivative(v: &Subspace, x: &DMatrix<f64>, tol_active: f64) -> Result<DMatrix<f64>> {
    Ok(residuals(v, x, tol_active)?.euclidean(x))
}

/// Grassmannian gradient `Q_V * euclidean_subderivative`, evaluated as
/// `-sum (Q_V x_i)(x_i^T V) / ||Q_V x_i||` so that it is tangent at `V` to roundoff.
pub fn grass_gradient(v: &Subspace, x: &DMatrix<f64>, tol_active: f64) -> Result<DMatrix<f64>> {
    Ok(residuals(v, x, tol_active)?.grassmannian(v, x))
}

/// Energy and Grassmannian gradient from a single pass over the data.
pub fn energy_and_gradient(
    v: &Subspace,
    x: &DMatrix<f64>,
    tol_active: f64,
) -> Result<(EnergyEval, DMatrix<f64>)> {
    let r = residuals(v, x, tol_active)?;
    Ok((r.eval(), r.grassmannian(v, x)))
}

/// Sum over active points of `-sum_j c_j (v_j^T x)(u_j^T x) / ||Q_{L0} x||`.
fn directional_sum(
    l0: &Subspace,
    x: &DMatrix<f64>,
    tol_active: f64,
    v: &DMatrix<f64>,
    u: &DMatrix<f64>,
    coef: &[f64],
) -> Result<f64> {
    let r = residuals(l0, x, tol_active)?;
    if x.ncols() == 0 {
        return Ok(0.0);
    }
    let vx = v.transpose() * x;
    let ux = u.transpose() * x;
    let mut total = 0.0;
    for i in 0..x.ncols() {
        if r.weights[i] == 0.0 {
            continue;
        }
        let s: f64 = coef
            .iter()
            .enumerate()
            .map(|(j, c)| c * vx[(j, i)] * ux[(j, i)])
            .sum();
        total -= s * r.weights[i];
    }
    Ok(total)
}

/// Directional geodesic subderivative of `F` at `L0` towards `L1`:
/// `-sum_x sum_j theta_j (v_j^T x)(u_j^T x) / ||Q_{L0} x||`.
///
/// This is the derivative at `t = 0` of `t -> F(geodesic(L0, L1, t))` for the geodesic
/// reaching `L1` at `t = 1`; divide by `theta1` for the unit-speed parametrization.
pub fn geodesic_subderivative(
    l0: &Subspace,
    l1: &Subspace,
    x: &DMatrix<f64>,
    tol_active: f64,
) -> Result<f64> {
    let pd = principal_decomposition(l0, l1)?;
    let k = pd.interaction_dim;
    if k == 0 {
        return Err(RsrError::DirectionUndefined);
    }
    let v = pd.left_vectors.columns(0, k).into_owned();
    directional_sum(l0, x, tol_active, &v, &pd.complementary, &pd.angles[..k])
}

/// Tolerance on angle differences used to group the largest principal angles.
pub const ANGLE_BLOCK_TOL: f64 = 1e-9;

/// Derivative at `t = 0` of the energy along the unit-speed geodesic that rotates only
/// the block of largest principal angles of `(L, L_star)` towards `L_star`:
/// `-sum_{j <= l} sum_x (v_j^T x)(x^T u_j) / ||Q_L x||`.
pub fn special_geodesic_derivative(
    l: &Subspace,
    l_star: &Subspace,
    x: &DMatrix<f64>,
    tol_active: f64,
) -> Result<f64> {
    let pd = principal_decomposition(l, l_star)?;
    if pd.interaction_dim == 0 {
        return Err(RsrError::DirectionUndefined);
    }
    let block = pd.leading_block(ANGLE_BLOCK_TOL);
    let v = pd.left_vectors.columns(0, block).into_owned();
    let u = pd.complementary.columns(0, block).into_owned();
    directional_sum(l, x, tol_active, &v, &u, &vec![1.0; block])
}

/// The curve `span(v_j cos t + u_j sin t for j <= l, v_{l+1}, ..., v_d)` along which
/// [`special_geodesic_derivative`] differentiates.
pub fn special_geodesic(l: &Subspace, l_star: &Subspace, t: f64) -> Result<Subspace> {
    let pd = principal_decomposition(l, l_star)?;
    if pd.interaction_dim == 0 {
        return Err(RsrError::DirectionUndefined);
    }
    let block = pd.leading_block(ANGLE_BLOCK_TOL);
    let mut b = pd.left_vectors.clone();
    for j in 0..block {
        let col: DVector<f64> = pd.left_vectors.column(j) * t.cos() + pd.complementary.column(j) * t.sin();
        b.set_column(j, &col);
    }
    crate::grassmann::orthonormalize(&b)
}
