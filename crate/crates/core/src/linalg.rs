//! Small dense helpers shared by the geometry, energy and statistics code.
//!
//! Singular value decompositions go through a Householder QR followed by one-sided
//! (Hestenes) Jacobi on the triangular factor. nalgebra's bidiagonal SVD returns wrong
//! factors for some rectangular inputs (see `rectangular_regression` below), and Jacobi
//! also resolves small singular values to high relative accuracy, which the
//! principal-angle code relies on.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

/// Thin SVD with singular values sorted in decreasing order.
///
/// For an `m x n` input, returns `U` (`m x r`), `sigma` (`r`) and `V` (`n x r`) with
/// `r = min(m, n)`, such that `A = U diag(sigma) V^T`. Both factors have orthonormal
/// columns, also when `A` is rank deficient.
pub(crate) struct SortedSvd {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
}

const JACOBI_TOL: f64 = 1e-15;
const JACOBI_MAX_SWEEPS: usize = 80;

pub(crate) fn svd_sorted(a: &DMatrix<f64>) -> SortedSvd {
    let (m, n) = a.shape();
    if m.min(n) == 0 {
        return SortedSvd {
            u: DMatrix::zeros(m, 0),
            sigma: DVector::zeros(0),
            v: DMatrix::zeros(n, 0),
        };
    }
    if m < n {
        let t = svd_sorted(&a.transpose());
        return SortedSvd { u: t.v, sigma: t.sigma, v: t.u };
    }
    let (q, r) = if m > n {
        let qr = a.clone().qr();
        (Some(qr.q()), qr.r())
    } else {
        (None, a.clone())
    };
    let (ur, sigma, v) = jacobi_square(r);
    let u = match q {
        Some(q) => q * ur,
        None => ur,
    };
    SortedSvd { u, sigma, v }
}

/// One-sided Jacobi SVD of a square matrix; returns sorted `(U, sigma, V)`.
fn jacobi_square(mut w: DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let n = w.ncols();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut w, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigma: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    let mut u = DMatrix::zeros(n, n);
    let mut vs = DMatrix::zeros(n, n);
    let mut missing = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        vs.set_column(dst, &v.column(src));
        let s = sigma[src];
        if s > 0.0 && s.is_finite() {
            u.set_column(dst, &(w.column(src) / s));
        } else {
            missing.push(dst);
        }
    }
    sigma = order.iter().map(|&i| sigma[i]).collect();
    complete_orthonormal(&mut u, &missing);
    (u, DVector::from_vec(sigma), vs)
}

fn rotate_columns(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let a = m[(i, p)];
        let b = m[(i, q)];
        m[(i, p)] = c * a - s * b;
        m[(i, q)] = s * a + c * b;
    }
}

/// Fills the listed columns of `u` with unit vectors orthogonal to all other columns.
fn complete_orthonormal(u: &mut DMatrix<f64>, missing: &[usize]) {
    let n = u.nrows();
    let mut filled: Vec<usize> = (0..u.ncols()).filter(|j| !missing.contains(j)).collect();
    for &j in missing {
        for i in 0..n {
            let mut c = DVector::<f64>::zeros(n);
            c[i] = 1.0;
            for _ in 0..2 {
                for &f in &filled {
                    let col = u.column(f).into_owned();
                    c -= &col * col.dot(&c);
                }
            }
            let norm = c.norm();
            if norm > 0.5 {
                u.set_column(j, &(c / norm));
                break;
            }
        }
        filled.push(j);
    }
}

/// Largest singular value; zero for empty matrices.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return 0.0;
    }
    let gram = if m >= n { a.transpose() * a } else { a * a.transpose() };
    let top = sym_eigenvalues_desc(&gram)[0].max(0.0);
    top.sqrt()
}

/// Singular values in decreasing order.
pub fn singular_values_desc(a: &DMatrix<f64>) -> Vec<f64> {
    svd_sorted(a).sigma.iter().copied().collect()
}

/// Eigenvalues of a symmetric matrix in decreasing order.
pub fn sym_eigenvalues_desc(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Maximum entry of `|A^T A - I|`.
pub fn orthonormality_defect(a: &DMatrix<f64>) -> f64 {
    let gram = a.transpose() * a;
    let n = gram.nrows();
    max_abs(&(gram - DMatrix::<f64>::identity(n, n)))
}

/// `rows x cols` matrix of i.i.d. standard normal entries, filled column by column.
pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

pub fn gaussian_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Horizontal concatenation of two matrices with the same row count.
pub fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows(), "hstack row mismatch");
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Random `n x n` orthogonal matrix, Haar distributed.
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = gaussian_matrix(n, n, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
