//! Geometry of the Grassmannian `G(D, d)`: orthonormal bases, principal angles,
//! geodesics and the metric given by the largest principal angle.
//!
//! Principal angles are reported in *decreasing* order, so `angles[0]` is the
//! largest angle and doubles as the distance between two subspaces.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Result, RsrError};
use crate::linalg::{gaussian_matrix, orthonormality_defect, random_orthogonal, svd_sorted};

/// Tolerance on `max |B^T B - I|` accepted for a stored basis.
pub const ORTHONORMAL_TOL: f64 = 1e-10;
/// Angles at or below this value are treated as exactly zero.
pub const ZERO_ANGLE_TOL: f64 = 1e-12;
/// A geodesic between two subspaces is rejected once the largest angle is this close to pi/2.
pub const GEODESIC_UNIQUE_MARGIN: f64 = 1e-8;
/// Relative singular value threshold used to declare a matrix rank deficient.
const RANK_TOL: f64 = 1e-12;

/// A point of `G(D, d)`, stored as a `D x d` matrix with orthonormal columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    /// Wraps an existing orthonormal basis, rejecting it if `B^T B` is not the identity
    /// within [`ORTHONORMAL_TOL`].
    pub fn from_basis(basis: DMatrix<f64>) -> Result<Self> {
        let (dd, d) = basis.shape();
        if d == 0 || d > dd {
            return Err(RsrError::invalid(format!(
                "subspace basis must satisfy 1 <= d <= D, got {dd}x{d}"
            )));
        }
        if basis.iter().any(|v| !v.is_finite()) {
            return Err(RsrError::invalid("subspace basis has non-finite entries"));
        }
        let defect = orthonormality_defect(&basis);
        if defect > ORTHONORMAL_TOL {
            return Err(RsrError::invalid(format!(
                "basis is not orthonormal (max |B^T B - I| = {defect:e})"
            )));
        }
        Ok(Subspace { basis })
    }

    pub(crate) fn from_basis_unchecked(basis: DMatrix<f64>) -> Self {
        Subspace { basis }
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn into_basis(self) -> DMatrix<f64> {
        self.basis
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Orthogonal projector `P = V V^T`.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    /// Complementary projector `Q = I - V V^T`.
    pub fn complement_projector(&self) -> DMatrix<f64> {
        let n = self.ambient_dim();
        DMatrix::identity(n, n) - self.projector()
    }

    /// `Q x = x - V V^T x`, computed without forming the projector.
    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        x - &self.basis * (self.basis.transpose() * x)
    }

    /// The same subspace described by the basis `V R` for an orthogonal `d x d` matrix `R`.
    pub fn with_rotated_basis(&self, rot: &DMatrix<f64>) -> Result<Self> {
        Subspace::from_basis(&self.basis * rot)
    }

    /// Image of the subspace under an orthogonal map `R` of the ambient space.
    pub fn transformed(&self, rot: &DMatrix<f64>) -> Result<Self> {
        orthonormalize(&(rot * &self.basis))
    }

    /// Serializes the basis as CSV: a `# subspace D=<D> d=<d>` header followed by one
    /// row per ambient coordinate.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# subspace D={} d={}", self.ambient_dim(), self.dim());
        for i in 0..self.ambient_dim() {
            let row: Vec<String> = (0..self.dim())
                .map(|j| format!("{:.16e}", self.basis[(i, j)]))
                .collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| RsrError::Parse("empty subspace file".into()))?;
        let (dd, d) = parse_subspace_header(header)?;
        let mut basis = DMatrix::zeros(dd, d);
        for i in 0..dd {
            let line = lines
                .next()
                .ok_or_else(|| RsrError::Parse(format!("subspace file ends after {i} rows")))?;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != d {
                return Err(RsrError::Parse(format!(
                    "row {i} has {} columns, expected {d}",
                    fields.len()
                )));
            }
            for (j, f) in fields.iter().enumerate() {
                basis[(i, j)] = f
                    .parse()
                    .map_err(|_| RsrError::Parse(format!("bad number {f:?} in row {i}")))?;
            }
        }
        if lines.next().is_some() {
            return Err(RsrError::Parse("subspace file has extra rows".into()));
        }
        Subspace::from_basis(basis)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Subspace::from_csv_str(&std::fs::read_to_string(path)?)
    }
}

fn parse_subspace_header(line: &str) -> Result<(usize, usize)> {
    let bad = || RsrError::Parse(format!("bad subspace header {line:?}"));
    let rest = line.trim().strip_prefix("# subspace").ok_or_else(bad)?;
    let mut dd = None;
    let mut d = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("D=") {
            dd = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("d=") {
            d = v.parse().ok();
        }
    }
    match (dd, d) {
        (Some(dd), Some(d)) => Ok((dd, d)),
        _ => Err(bad()),
    }
}

/// Orthonormal basis of the column space of `m` (Householder QR, signs chosen so
/// that `R` has a positive diagonal; an already orthonormal input comes back unchanged
/// up to roundoff).
pub fn orthonormalize(m: &DMatrix<f64>) -> Result<Subspace> {
    let (dd, d) = m.shape();
    if d == 0 || d > dd {
        return Err(RsrError::invalid(format!(
            "cannot orthonormalize a {dd}x{d} matrix (need 1 <= d <= D)"
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(RsrError::invalid("matrix has non-finite entries"));
    }
    let qr = m.clone().qr();
    let r = qr.r();
    let diag_max = (0..d).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    let diag_min = (0..d).map(|j| r[(j, j)].abs()).fold(f64::INFINITY, f64::min);
    if diag_max == 0.0 || diag_min <= RANK_TOL * diag_max {
        let s = crate::linalg::singular_values_desc(m);
        let smax = s.first().copied().unwrap_or(0.0);
        let rank = s.iter().filter(|&&v| v > RANK_TOL * smax && v > 0.0).count();
        if rank < d {
            return Err(RsrError::RankDeficient { rank, expected: d });
        }
    }
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(Subspace::from_basis_unchecked(q))
}

fn check_same_shape(l0: &Subspace, l1: &Subspace) -> Result<()> {
    if l0.basis.shape() != l1.basis.shape() {
        return Err(RsrError::DimensionMismatch(format!(
            "subspaces live in G({}, {}) and G({}, {})",
            l0.ambient_dim(),
            l0.dim(),
            l1.ambient_dim(),
            l1.dim()
        )));
    }
    Ok(())
}

/// Principal angles and vectors between two subspaces, plus the complementary
/// orthogonal basis used to build the geodesic from `L0` to `L1`.
///
/// Column `j` of `left_vectors` (`v_j`, in `L0`) and `right_vectors` (`y_j`, in `L1`)
/// realize `angles[j]`; column `j < k` of `complementary` is the unit vector `u_j`
/// orthogonal to `v_j` inside `span(v_j, y_j)` with `u_j^T y_j > 0`.
#[derive(Clone, Debug)]
pub struct PrincipalDecomposition {
    pub angles: Vec<f64>,
    pub left_vectors: DMatrix<f64>,
    pub right_vectors: DMatrix<f64>,
    pub complementary: DMatrix<f64>,
    pub interaction_dim: usize,
}

impl PrincipalDecomposition {
    pub fn theta1(&self) -> f64 {
        self.angles[0]
    }

    /// Size of the leading block of angles equal to the largest one within `tol`.
    pub fn leading_block(&self, tol: f64) -> usize {
        let top = self.angles[0];
        self.angles
            .iter()
            .take(self.interaction_dim)
            .take_while(|&&a| top - a <= tol)
            .count()
    }
}

/// `(I - V0 V0^T) V1`, projected twice so the result is orthogonal to `L0` to working
/// precision even when the angles are tiny.
fn sine_matrix(w0: &DMatrix<f64>, w1: &DMatrix<f64>, cosm: &DMatrix<f64>) -> DMatrix<f64> {
    let z = w1 - w0 * cosm;
    let corr = w0.transpose() * &z;
    z - w0 * corr
}

/// Principal decomposition of `(L0, L1)`.
///
/// Angles of at least pi/4 come from an SVD of `V0^T V1` (cosines), smaller ones from
/// an SVD of `(I - V0 V0^T) V1` (sines), so every angle is resolved to roughly machine
/// precision. The large-angle SVD is restricted to the orthogonal complement of the
/// small-angle directions, which keeps the two groups exactly orthogonal. Repeated
/// angles get whatever principal vectors the SVD returns for that block.
pub fn principal_decomposition(l0: &Subspace, l1: &Subspace) -> Result<PrincipalDecomposition> {
    check_same_shape(l0, l1)?;
    let w0 = l0.basis();
    let w1 = l1.basis();
    let d = l0.dim();

    let cosm = w0.transpose() * w1;
    let sinm = sine_matrix(w0, w1, &cosm);
    let sine = svd_sorted(&sinm);

    let n_small = sine.sigma.iter().filter(|&&s| s * s < 0.5).count();
    let n_large = d - n_small;

    // (angle, coefficients of v in the basis of L0, coefficients of y in the basis of L1)
    let mut parts: Vec<(f64, DVector<f64>, DVector<f64>, bool)> = Vec::with_capacity(d);

    if n_large > 0 {
        let b_large = sine.v.columns(0, n_large).into_owned();
        let mb = &cosm * &b_large;
        let cos_svd = svd_sorted(&mb);
        for j in 0..n_large {
            let r = &b_large * cos_svd.v.column(j);
            let c = cos_svd.sigma[j].clamp(0.0, 1.0);
            let s = (&sinm * &r).norm();
            let angle = s.atan2(c);
            let reliable = c > 1e-6;
            parts.push((angle, cos_svd.u.column(j).into_owned(), r, reliable));
        }
    }
    for j in n_large..d {
        let r = sine.v.column(j).into_owned();
        let a = &cosm * &r;
        let c = a.norm();
        let s = (&sinm * &r).norm();
        let angle = s.atan2(c);
        parts.push((angle, a / c, r, true));
    }

    parts.sort_by(|x, y| y.0.total_cmp(&x.0));

    let mut a_coef = DMatrix::zeros(d, d);
    let mut r_coef = DMatrix::zeros(d, d);
    let mut reliable = vec![false; d];
    let mut angles = Vec::with_capacity(d);
    for (j, (angle, a, r, ok)) in parts.into_iter().enumerate() {
        angles.push(angle);
        a_coef.set_column(j, &a);
        r_coef.set_column(j, &r);
        reliable[j] = ok;
    }
    repair_left_coefficients(&mut a_coef, &reliable);

    let left_vectors = w0 * &a_coef;
    let right_vectors = w1 * &r_coef;
    let interaction_dim = angles.iter().filter(|&&a| a > ZERO_ANGLE_TOL).count();
    let mut complementary = DMatrix::zeros(l0.ambient_dim(), interaction_dim);
    for j in 0..interaction_dim {
        let z = &sinm * r_coef.column(j);
        let n = z.norm();
        complementary.set_column(j, &(z / n));
    }

    Ok(PrincipalDecomposition {
        angles,
        left_vectors,
        right_vectors,
        complementary,
        interaction_dim,
    })
}

/// Left principal vectors whose cosine is (numerically) zero are only determined up to
/// the orthogonal complement of the others; Gram-Schmidt them against the reliable ones.
fn repair_left_coefficients(a: &mut DMatrix<f64>, reliable: &[bool]) {
    let d = a.nrows();
    let mut fixed: Vec<usize> = (0..d).filter(|&j| reliable[j]).collect();
    for j in 0..d {
        if reliable[j] {
            continue;
        }
        let mut candidates: Vec<DVector<f64>> = vec![a.column(j).into_owned()];
        candidates.extend((0..d).map(|i| DVector::from_fn(d, |r, _| if r == i { 1.0 } else { 0.0 })));
        for mut c in candidates {
            for _ in 0..2 {
                for &f in &fixed {
                    let col = a.column(f).into_owned();
                    c -= &col * col.dot(&c);
                }
            }
            let n = c.norm();
            if n > 0.5 {
                a.set_column(j, &(c / n));
                break;
            }
        }
        fixed.push(j);
    }
}

/// Principal angles in decreasing order, each taken from whichever of the sine or
/// cosine singular values resolves it accurately.
pub fn principal_angles(l0: &Subspace, l1: &Subspace) -> Result<Vec<f64>> {
    check_same_shape(l0, l1)?;
    let w0 = l0.basis();
    let w1 = l1.basis();
    let cosm = w0.transpose() * w1;
    let sinm = sine_matrix(w0, w1, &cosm);
    let mut cosines = crate::linalg::singular_values_desc(&cosm);
    cosines.reverse();
    let sines = crate::linalg::singular_values_desc(&sinm);
    Ok(sines
        .iter()
        .zip(cosines.iter())
        .map(|(&s, &c)| {
            let s = s.clamp(0.0, 1.0);
            let c = c.clamp(0.0, 1.0);
            if s * s < 0.5 {
                s.asin()
            } else {
                c.acos()
            }
        })
        .collect())
}

/// Largest principal angle, the distance `dist(L0, L1)` on `G(D, d)`.
pub fn theta1(l0: &Subspace, l1: &Subspace) -> Result<f64> {
    Ok(principal_angles(l0, l1)?[0])
}

/// The geodesic from `L0` (t = 0) to `L1` (t = 1), rotating each principal vector
/// `v_j` towards `u_j` by `t * theta_j`.
#[derive(Clone, Debug)]
pub struct Geodesic {
    decomposition: PrincipalDecomposition,
}

impl Geodesic {
    pub fn between(l0: &Subspace, l1: &Subspace) -> Result<Self> {
        let decomposition = principal_decomposition(l0, l1)?;
        let theta = decomposition.theta1();
        if theta >= FRAC_PI_2 - GEODESIC_UNIQUE_MARGIN {
            return Err(RsrError::GeodesicNotUnique { theta });
        }
        Ok(Geodesic { decomposition })
    }

    pub fn decomposition(&self) -> &PrincipalDecomposition {
        &self.decomposition
    }

    pub fn at(&self, t: f64) -> Result<Subspace> {
        let pd = &self.decomposition;
        let mut b = pd.left_vectors.clone();
        for j in 0..pd.interaction_dim {
            let a = pd.angles[j] * t;
            let col = pd.left_vectors.column(j) * a.cos() + pd.complementary.column(j) * a.sin();
            b.set_column(j, &col);
        }
        orthonormalize(&b)
    }
}

pub fn geodesic(l0: &Subspace, l1: &Subspace, t: f64) -> Result<Subspace> {
    Geodesic::between(l0, l1)?.at(t)
}

/// The geodesic leaving `V` with velocity `-G`, prepared once so several step sizes
/// can be tried along it.
#[derive(Clone, Debug)]
pub struct GeodesicDirection {
    start: Subspace,
    vw: DMatrix<f64>,
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    w_t: DMatrix<f64>,
}

impl GeodesicDirection {
    /// `g` is projected onto the tangent space at `v` before its SVD is taken.
    pub fn new(v: &Subspace, g: &DMatrix<f64>) -> Result<Self> {
        if g.shape() != v.basis().shape() {
            return Err(RsrError::DimensionMismatch(format!(
                "gradient is {}x{}, subspace basis is {}x{}",
                g.nrows(),
                g.ncols(),
                v.ambient_dim(),
                v.dim()
            )));
        }
        if let Some(pos) = g.iter().position(|x| !x.is_finite()) {
            return Err(RsrError::NonFinite { index: pos / g.nrows() });
        }
        let basis = v.basis();
        let velocity = -(g - basis * (basis.transpose() * g));
        let svd = svd_sorted(&velocity);
        Ok(GeodesicDirection {
            start: v.clone(),
            vw: basis * &svd.v,
            u: svd.u,
            sigma: svd.sigma,
            w_t: svd.v.transpose(),
        })
    }

    /// Spectral norm of the (projected) velocity.
    pub fn speed(&self) -> f64 {
        self.sigma.iter().copied().fold(0.0, f64::max)
    }

    pub fn at(&self, t: f64) -> Result<Subspace> {
        if t == 0.0 || self.speed() == 0.0 {
            return Ok(self.start.clone());
        }
        let cos = DMatrix::from_diagonal(&self.sigma.map(|s| (s * t).cos()));
        let sin = DMatrix::from_diagonal(&self.sigma.map(|s| (s * t).sin()));
        let m = &self.vw * cos * &self.w_t + &self.u * sin * &self.w_t;
        orthonormalize(&m)
    }
}

/// One geodesic gradient step `V(t) = V W cos(S t) W^T + U sin(S t) W^T` where
/// `-G = U S W^T`, re-orthonormalized.
pub fn geodesic_step(v: &Subspace, g: &DMatrix<f64>, t: f64) -> Result<Subspace> {
    GeodesicDirection::new(v, g)?.at(t)
}

/// Uniformly distributed point of `G(D, d)`.
pub fn random_subspace<R: Rng + ?Sized>(ambient: usize, d: usize, rng: &mut R) -> Result<Subspace> {
    if d == 0 || d > ambient {
        return Err(RsrError::invalid(format!(
            "random subspace needs 1 <= d <= D, got D={ambient}, d={d}"
        )));
    }
    loop {
        match orthonormalize(&gaussian_matrix(ambient, d, rng)) {
            Ok(s) => return Ok(s),
            Err(RsrError::RankDeficient { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
}

const AT_ANGLE_RETRIES: usize = 32;

/// Random subspace whose largest principal angle with `l_star` is exactly `gamma`.
///
/// A uniformly rotated basis of `l_star` is tilted into fresh orthonormal directions of
/// its complement: the first vector by `gamma`, the others by independent
/// `Uniform(0, gamma)` angles (directions that do not fit in the complement stay put).
pub fn subspace_at_angle<R: Rng + ?Sized>(
    l_star: &Subspace,
    gamma: f64,
    rng: &mut R,
) -> Result<Subspace> {
    if !(gamma > 0.0 && gamma < FRAC_PI_2) {
        return Err(RsrError::invalid(format!("gamma must lie in (0, pi/2), got {gamma}")));
    }
    let (dd, d) = l_star.basis().shape();
    if dd < d + 1 {
        return Err(RsrError::invalid(format!(
            "no room to tilt a {d}-subspace of R^{dd}"
        )));
    }
    let vs = l_star.basis();
    let tilted = d.min(dd - d);
    for _ in 0..AT_ANGLE_RETRIES {
        let rotated = vs * random_orthogonal(d, rng);
        let g = gaussian_matrix(dd, tilted, rng);
        let mut comp = &g - vs * (vs.transpose() * &g);
        comp -= vs * (vs.transpose() * &comp);
        let comp = match orthonormalize(&comp) {
            Ok(c) => c.into_basis(),
            Err(RsrError::RankDeficient { .. }) => continue,
            Err(e) => return Err(e),
        };
        let mut b = rotated.clone();
        for j in 0..tilted {
            let a = if j == 0 { gamma } else { gamma * rng.random::<f64>() };
            let col = rotated.column(j) * a.cos() + comp.column(j) * a.sin();
            b.set_column(j, &col);
        }
        let l = orthonormalize(&b)?;
        if (theta1(&l, l_star)? - gamma).abs() <= 1e-8 {
            return Ok(l);
        }
    }
    Err(RsrError::invalid(format!(
        "could not realize a subspace at angle {gamma} after {AT_ANGLE_RETRIES} attempts"
    )))
}
