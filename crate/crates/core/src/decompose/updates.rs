//! Least-squares factor and coefficient updates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tensor::{khatri_rao, pinv, Tensor3};

/// `unfolded * (A ⊙ B) * [(A^T A) * (B^T B)]^†`: the Gram form of
/// `min_X || unfolded - X (A ⊙ B)^T ||`.
pub(crate) fn gram_update(
    unfolded: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    tol: f64,
) -> Result<DMatrix<f64>> {
    let kr = khatri_rao(a, b)?;
    let gram = (a.transpose() * a).component_mul(&(b.transpose() * b));
    Ok(unfolded * kr * pinv(&gram, tol)?)
}

/// Coupled `W` update using the precomputed mode-1 unfolding.
pub(crate) fn coupled_w_from_unfolding(
    j1: &DMatrix<f64>,
    f: &DMatrix<f64>,
    v: &DMatrix<f64>,
    h: &DMatrix<f64>,
    z: &DMatrix<f64>,
    lambda: f64,
    tol: f64,
) -> Result<DMatrix<f64>> {
    let l2 = lambda * lambda;
    let kr = khatri_rao(h, v)?;
    let rhs = j1 * kr + f * z * l2;
    let gram = (h.transpose() * h).component_mul(&(v.transpose() * v)) + z.transpose() * z * l2;
    Ok(rhs * pinv(&gram, tol)?)
}

fn check_coupled_shapes(
    t: &Tensor3,
    f: &DMatrix<f64>,
    v: &DMatrix<f64>,
    h: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<()> {
    let (n, m, big_n) = t.dims();
    let r = v.ncols();
    if f.shape() != (n, big_n) {
        return Err(Error::shape(format!(
            "F is {:?}, tensor needs {:?}",
            f.shape(),
            (n, big_n)
        )));
    }
    if v.shape() != (m, r) || h.shape() != (big_n, r) || z.shape() != (big_n, r) {
        return Err(Error::shape("V, H, Z shapes inconsistent with tensor and rank"));
    }
    Ok(())
}

/// `W = [J_(1) (H ⊙ V) + λ² F Z] [(H^T H) * (V^T V) + λ² Z^T Z]^†`.
///
/// Algebraically equal to [`update_w_coupled_naive`] but only inverts an
/// `r x r` matrix.
pub fn update_w_coupled(
    t: &Tensor3,
    f: &DMatrix<f64>,
    v: &DMatrix<f64>,
    h: &DMatrix<f64>,
    z: &DMatrix<f64>,
    lambda: f64,
    pinv_tol: f64,
) -> Result<DMatrix<f64>> {
    check_coupled_shapes(t, f, v, h, z)?;
    coupled_w_from_unfolding(&t.unfold(1)?, f, v, h, z, lambda, pinv_tol)
}

/// `W = [J_(1), λ F] [(H ⊙ V)^T, λ Z^T]^†`, the stacked form with a
/// pseudo-inverse of an `r x N(m+1)` matrix.
pub fn update_w_coupled_naive(
    t: &Tensor3,
    f: &DMatrix<f64>,
    v: &DMatrix<f64>,
    h: &DMatrix<f64>,
    z: &DMatrix<f64>,
    lambda: f64,
    pinv_tol: f64,
) -> Result<DMatrix<f64>> {
    check_coupled_shapes(t, f, v, h, z)?;
    let j1 = t.unfold(1)?;
    let (n, cols_t) = j1.shape();
    let big_n = f.ncols();
    let mut left = DMatrix::zeros(n, cols_t + big_n);
    left.columns_mut(0, cols_t).copy_from(&j1);
    left.columns_mut(cols_t, big_n).copy_from(&(f * lambda));
    let r = v.ncols();
    let mut right = DMatrix::zeros(r, cols_t + big_n);
    right
        .columns_mut(0, cols_t)
        .copy_from(&khatri_rao(h, v)?.transpose());
    right
        .columns_mut(cols_t, big_n)
        .copy_from(&(z.transpose() * lambda));
    Ok(left * pinv(&right, pinv_tol)?)
}

/// Minimiser of `||h - X c||² + λ²||z - Y c||²` via
/// `c = [X; λY]^† [h; λz]`. With `y`/`z` absent only the first term is used.
pub(crate) fn solve_branch(
    x: &DMatrix<f64>,
    h: &DVector<f64>,
    yz: Option<(&DMatrix<f64>, &DVector<f64>)>,
    lambda: f64,
    tol: f64,
) -> Result<DVector<f64>> {
    let big_n = x.nrows();
    match yz {
        None => Ok(pinv(x, tol)? * h),
        Some((y, z)) => {
            let d1 = x.ncols();
            let mut a = DMatrix::zeros(2 * big_n, d1);
            a.rows_mut(0, big_n).copy_from(x);
            a.rows_mut(big_n, big_n).copy_from(&(y * lambda));
            let mut b = DVector::zeros(2 * big_n);
            b.rows_mut(0, big_n).copy_from(h);
            b.rows_mut(big_n, big_n).copy_from(&(z * lambda));
            Ok(pinv(&a, tol)? * b)
        }
    }
}

fn check_coefficient_shapes(
    h: &DMatrix<f64>,
    z: &DMatrix<f64>,
    xs: &[DMatrix<f64>],
    ys: &[DMatrix<f64>],
) -> Result<usize> {
    let r = h.ncols();
    if z.shape() != h.shape() || xs.len() != r || ys.len() != r {
        return Err(Error::shape("H, Z, X_l, Y_l counts/shapes inconsistent"));
    }
    let d1 = xs.first().map(|x| x.ncols()).unwrap_or(0);
    for (x, y) in xs.iter().zip(ys) {
        if x.shape() != (h.nrows(), d1) || y.shape() != (h.nrows(), d1) {
            return Err(Error::shape("X_l / Y_l must all be N x (d+1)"));
        }
    }
    Ok(d1)
}

/// Coefficient update decoupled per branch:
/// `c_l = [X_l; λY_l]^† [h_l; λz_l]`. Returns the `(d+1) x r` matrix.
pub fn solve_coefficients(
    h: &DMatrix<f64>,
    z: &DMatrix<f64>,
    xs: &[DMatrix<f64>],
    ys: &[DMatrix<f64>],
    lambda: f64,
    pinv_tol: f64,
) -> Result<DMatrix<f64>> {
    if lambda < 0.0 {
        return Err(Error::Config("lambda must be >= 0".into()));
    }
    let d1 = check_coefficient_shapes(h, z, xs, ys)?;
    let mut c = DMatrix::zeros(d1, h.ncols());
    for l in 0..h.ncols() {
        let hl = h.column(l).clone_owned();
        let zl = z.column(l).clone_owned();
        let cl = solve_branch(&xs[l], &hl, Some((&ys[l], &zl)), lambda, pinv_tol)?;
        c.set_column(l, &cl);
    }
    Ok(c)
}

/// The same minimiser from the full block-diagonal system
/// `[blkdiag(X); λ blkdiag(Y)]^† [vec(H); λ vec(Z)]`.
pub fn solve_coefficients_monolithic(
    h: &DMatrix<f64>,
    z: &DMatrix<f64>,
    xs: &[DMatrix<f64>],
    ys: &[DMatrix<f64>],
    lambda: f64,
    pinv_tol: f64,
) -> Result<DMatrix<f64>> {
    let d1 = check_coefficient_shapes(h, z, xs, ys)?;
    let (big_n, r) = h.shape();
    let mut a = DMatrix::zeros(2 * r * big_n, r * d1);
    let mut b = DVector::zeros(2 * r * big_n);
    for l in 0..r {
        a.view_mut((l * big_n, l * d1), (big_n, d1)).copy_from(&xs[l]);
        a.view_mut((r * big_n + l * big_n, l * d1), (big_n, d1))
            .copy_from(&(&ys[l] * lambda));
        b.rows_mut(l * big_n, big_n).copy_from(&h.column(l));
        b.rows_mut(r * big_n + l * big_n, big_n)
            .copy_from(&(z.column(l) * lambda));
    }
    let c = pinv(&a, pinv_tol)? * b;
    Ok(DMatrix::from_column_slice(d1, r, c.as_slice()))
}
