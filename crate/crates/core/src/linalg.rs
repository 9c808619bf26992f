//! Small dense helpers on top of nalgebra.

use nalgebra::linalg::{Cholesky, SVD};

use crate::types::{Matrix, Vector};

/// Inverse of a symmetric positive definite matrix via Cholesky, returned
/// exactly symmetric. `None` when the factorization fails.
pub fn spd_inverse(m: &Matrix) -> Option<Matrix> {
    if m.nrows() == 0 {
        return Some(Matrix::zeros(0, 0));
    }
    let inv = Cholesky::new(m.clone())?.inverse();
    Some(symmetrize(&inv))
}

/// `log|m|` for symmetric positive definite `m`.
pub fn log_det_spd(m: &Matrix) -> Option<f64> {
    if m.nrows() == 0 {
        return Some(0.0);
    }
    let chol = Cholesky::new(m.clone())?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for k in 0..m.nrows() {
        let d = l[(k, k)];
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        acc += d.ln();
    }
    Some(2.0 * acc)
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Solves `m x = rhs` for symmetric positive definite `m`.
pub fn spd_solve(m: &Matrix, rhs: &Matrix) -> Option<Matrix> {
    if m.nrows() == 0 {
        return Some(Matrix::zeros(0, rhs.ncols()));
    }
    let chol = Cholesky::new(m.clone())?;
    let x = chol.solve(rhs);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Thin SVD `m = U diag(sigma) V^T` with singular values sorted in
/// decreasing order.
pub struct SortedSvd {
    pub u: Matrix,
    pub sigma: Vector,
    pub v: Matrix,
}

pub fn sorted_svd(m: &Matrix) -> SortedSvd {
    let (nr, nc) = m.shape();
    let k = nr.min(nc);
    if k == 0 {
        return SortedSvd {
            u: Matrix::zeros(nr, 0),
            sigma: Vector::zeros(0),
            v: Matrix::zeros(nc, 0),
        };
    }
    let svd = SVD::new(m.clone(), true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]).then(i.cmp(&j)));
    let sigma = Vector::from_iterator(k, order.iter().map(|&i| svd.singular_values[i]));
    let u = Matrix::from_columns(&order.iter().map(|&i| u.column(i).into_owned()).collect::<Vec<_>>());
    let v = Matrix::from_columns(
        &order
            .iter()
            .map(|&i| vt.row(i).transpose().into_owned())
            .collect::<Vec<_>>(),
    );
    SortedSvd { u, sigma, v }
}

/// Singular values of `m` in decreasing order.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Sign (+1 or -1) that makes the first entry of `col` whose magnitude
/// exceeds `rel_tol * |col|` positive.
pub fn leading_sign(col: nalgebra::DVectorView<'_, f64>, rel_tol: f64) -> f64 {
    let thresh = rel_tol * col.norm();
    col.iter()
        .find(|v| v.abs() > thresh)
        .map_or(1.0, |&v| if v < 0.0 { -1.0 } else { 1.0 })
}

/// `diag(M S M^T)` without forming the product.
pub fn diag_sandwich(m: &Matrix, s: &Matrix) -> Vector {
    if m.ncols() == 0 {
        return Vector::zeros(m.nrows());
    }
    let ms = m * s;
    Vector::from_iterator(m.nrows(), (0..m.nrows()).map(|j| ms.row(j).dot(&m.row(j))))
}

/// `M^T diag(w) M`.
pub fn weighted_gram(m: &Matrix, w: &Vector) -> Matrix {
    let mut scaled = m.clone();
    for (j, mut row) in scaled.row_iter_mut().enumerate() {
        row *= w[j];
    }
    m.transpose() * scaled
}
