//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factor of a PSD matrix, retrying once with a diagonal jitter
/// of `1e-10 * trace / dim`.
pub fn cholesky_jitter(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let sym = symmetrize(m);
    if let Some(c) = Cholesky::new(sym.clone()) {
        return Some(c);
    }
    let n = sym.nrows();
    let trace = sym.trace();
    if !(trace > 0.0) {
        return None;
    }
    let jitter = 1e-10 * trace / n as f64;
    Cholesky::new(sym + DMatrix::identity(n, n) * jitter)
}

/// Lower-triangular square root of a PSD covariance.
///
/// An all-zero matrix yields a zero factor (noiseless component).
pub fn sqrt_psd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.iter().all(|&v| v == 0.0) {
        return Ok(DMatrix::zeros(m.nrows(), m.ncols()));
    }
    cholesky_jitter(m)
        .map(|c| c.l())
        .ok_or_else(|| Error::Covariance(format!("{what} is not positive semidefinite")))
}

/// Log-determinant from a Cholesky factor.
pub fn chol_logdet(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Singular-value cutoff used for minimum-norm solves:
/// `eps * max(rows, cols) * sigma_max`.
pub fn svd_cutoff(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    f64::EPSILON * rows.max(cols) as f64 * sigma_max
}

/// Minimum-norm least-squares solution of `a x = b` for each column of `b`.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, b.ncols());
    }
    let (u, s, v_t) = checked_svd(a);
    let sigma_max = s.iter().cloned().fold(0.0, f64::max);
    let cutoff = svd_cutoff(rows, cols, sigma_max);
    let mut ut_b = u.transpose() * b;
    for (i, s) in s.iter().enumerate() {
        let scale = if *s > cutoff { 1.0 / s } else { 0.0 };
        ut_b.row_mut(i).scale_mut(scale);
    }
    v_t.transpose() * ut_b
}

type Svd = (DMatrix<f64>, DVector<f64>, DMatrix<f64>);

fn thin_svd(a: &DMatrix<f64>) -> Svd {
    let svd = a.clone().svd(true, true);
    (svd.u.expect("u computed"), svd.singular_values, svd.v_t.expect("v_t computed"))
}

fn recon_error(a: &DMatrix<f64>, (u, s, v_t): &Svd) -> f64 {
    (u * DMatrix::from_diagonal(s) * v_t - a).amax()
}

/// Thin SVD `a = u diag(s) v_t` with a reconstruction check.
///
/// nalgebra's bidiagonal SVD can return an inconsistent factorisation for
/// rank-deficient tall matrices; the transpose is then tried, and failing
/// that the eigendecomposition of the Gram matrix.
pub fn checked_svd(a: &DMatrix<f64>) -> Svd {
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let tol = 1e-10 * scale * (a.nrows().max(a.ncols()) as f64);
    let direct = thin_svd(a);
    let err_direct = recon_error(a, &direct);
    if err_direct <= tol {
        return direct;
    }
    let (u, s, v_t) = thin_svd(&a.transpose());
    let flipped = (v_t.transpose(), s, u.transpose());
    let err_flipped = recon_error(a, &flipped);
    if err_flipped <= tol {
        return flipped;
    }
    let gram = gram_svd(a);
    let err_gram = recon_error(a, &gram);
    log::warn!(
        "svd reconstruction errors {err_direct:.3e} / {err_flipped:.3e} / {err_gram:.3e}; using best"
    );
    [(err_direct, direct), (err_flipped, flipped), (err_gram, gram)]
        .into_iter()
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .map(|(_, svd)| svd)
        .expect("three candidates")
}

/// SVD via the symmetric eigendecomposition of `a^T a` (less accurate for
/// small singular values, used only as a last resort).
fn gram_svd(a: &DMatrix<f64>) -> Svd {
    let eig = (a.transpose() * a).symmetric_eigen();
    let k = a.ncols();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let s = DVector::from_iterator(k, order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()));
    let v = DMatrix::from_fn(k, k, |r, c| eig.eigenvectors[(r, order[c])]);
    let av = a * &v;
    let mut u = DMatrix::zeros(a.nrows(), k);
    for c in 0..k {
        if s[c] > 0.0 {
            u.set_column(c, &(av.column(c) / s[c]));
        }
    }
    (u, s, v.transpose())
}

/// Solve a symmetric positive (semi)definite system, falling back to the
/// minimum-norm solution when Cholesky fails.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let bm = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    DVector::from_column_slice(solve_spd_mat(a, &bm).as_slice())
}

/// Matrix right-hand-side version of [`solve_spd`].
pub fn solve_spd_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    match Cholesky::new(symmetrize(a)) {
        Some(c) => c.solve(b),
        None => lstsq_min_norm(a, b),
    }
}
