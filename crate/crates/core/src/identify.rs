//! Identifiability: per-block alignment of fitted loadings to the
//! diagonal-Gram normal form, and a report on the model's identifiability
//! conditions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{leading_sign, sorted_svd, symmetrize};
use crate::types::{FactorCounts, FitResult, Matrix, ModelParameters};

/// Relative threshold for "first nonzero entry" of a loading column.
pub const SIGN_TOL: f64 = 1e-10;

/// Rotation `T` with `L = L' T` where `L' = U Sigma D` is the aligned block
/// (`D` the sign fix), so `L m = L' (T m)`. `T = D V'` is orthogonal.
fn block_alignment(loadings: &Matrix) -> Result<(Matrix, Matrix)> {
    let k = loadings.ncols();
    if k == 0 {
        return Ok((loadings.clone(), Matrix::zeros(0, 0)));
    }
    if k > loadings.nrows() {
        return Err(Error::DegenerateLoadings);
    }
    let svd = sorted_svd(loadings);
    if !(svd.sigma[0] > 0.0) || svd.sigma[k - 1] <= 1e-12 * svd.sigma[0] {
        return Err(Error::DegenerateLoadings);
    }
    let mut aligned = svd.u.columns(0, k).into_owned();
    let mut rot = svd.v.transpose();
    for c in 0..k {
        let sign = leading_sign(aligned.column(c), SIGN_TOL);
        aligned.column_mut(c).scale_mut(sign * svd.sigma[c]);
        rot.row_mut(c).scale_mut(sign);
    }
    Ok((aligned, rot))
}

fn rotate_scores(scores: &Matrix, rot: &Matrix) -> Matrix {
    scores * rot.transpose()
}

fn rotate_covs(covs: &[Matrix], rot: &Matrix) -> Vec<Matrix> {
    covs.iter().map(|c| symmetrize(&(rot * c * rot.transpose()))).collect()
}

/// Replaces every loading block by its `U Sigma` form (decreasing singular
/// values, leading entries positive) and co-rotates the posterior means and
/// covariances, leaving `A m_f`, `B_s m_h` and `A S_f A'`, `B_s S_h B_s'`
/// unchanged.
pub fn align(fit: &FitResult) -> Result<FitResult> {
    let mut out = fit.clone();
    let (a, rot_a) = block_alignment(&fit.params.a)?;
    out.params.a = a;
    for s in 0..fit.params.n_studies() {
        out.var_state.m_f[s] = rotate_scores(&fit.var_state.m_f[s], &rot_a);
        out.var_state.s_f[s] = rotate_covs(&fit.var_state.s_f[s], &rot_a);

        let (b, rot_b) = block_alignment(&fit.params.b[s])?;
        out.params.b[s] = b;
        out.var_state.m_h[s] = rotate_scores(&fit.var_state.m_h[s], &rot_b);
        out.var_state.s_h[s] = rotate_covs(&fit.var_state.s_h[s], &rot_b);
    }
    out.factor_scores_shared = out.var_state.m_f.clone();
    out.factor_scores_specific = out.var_state.m_h.clone();
    Ok(out)
}

/// Outcome of each identifiability condition with a measured slack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    /// Diagonal, decreasing, positive Grams with positive leading signs.
    pub a1_diagonal_gram: bool,
    /// Largest `|G_kl| / sqrt(G_kk G_ll)` over all checked Grams.
    pub a1_max_offdiag: f64,
    pub a1_decreasing: bool,
    pub a1_signs: bool,
    /// `p - 1 > q + sum q_s`.
    pub a2_dimension: bool,
    /// `(p - 1) - (q + sum q_s)`.
    pub a2_slack: i64,
    /// For every `k <= q_min`, some pair of studies has different k-th columns.
    pub a3_distinct_columns: bool,
    /// Smallest over `k` of the largest relative pairwise column difference.
    pub a3_min_difference: f64,
    /// `nu > 2`.
    pub a4_dof: bool,
    pub a4_slack: f64,
}

impl IdentifiabilityReport {
    pub fn all_pass(&self) -> bool {
        self.a1_diagonal_gram && self.a2_dimension && self.a3_distinct_columns && self.a4_dof
    }
}

struct GramCheck {
    max_offdiag: f64,
    decreasing: bool,
}

fn gram_check(block: &Matrix) -> GramCheck {
    let g = block.transpose() * block;
    let k = g.nrows();
    let mut max_offdiag: f64 = 0.0;
    let mut decreasing = (0..k).all(|i| g[(i, i)] > 0.0);
    for i in 0..k {
        for j in 0..k {
            if i != j {
                let denom = (g[(i, i)] * g[(j, j)]).sqrt();
                let rel = if denom > 0.0 { g[(i, j)].abs() / denom } else { f64::INFINITY };
                max_offdiag = max_offdiag.max(rel);
            }
        }
        if i > 0 && !(g[(i, i)] < g[(i - 1, i - 1)]) {
            decreasing = false;
        }
    }
    GramCheck { max_offdiag, decreasing }
}

/// Evaluates the identifiability conditions on `params`. `tol` bounds the
/// relative Gram off-diagonals and is the minimum relative column
/// difference for the study-specific condition.
pub fn check_identifiability(params: &ModelParameters, counts: &FactorCounts, tol: f64) -> IdentifiabilityReport {
    let p = params.n_vars();
    let n_studies = params.n_studies();

    let mut blocks = Vec::with_capacity(n_studies);
    if n_studies > 0 {
        let q = params.a.ncols();
        let q1 = params.b[0].ncols();
        let mut joint = Matrix::zeros(p, q + q1);
        joint.columns_mut(0, q).copy_from(&params.a);
        joint.columns_mut(q, q1).copy_from(&params.b[0]);
        blocks.push(joint);
        blocks.extend(params.b[1..].iter().cloned());
    }
    let mut max_offdiag: f64 = 0.0;
    let mut decreasing = true;
    for block in &blocks {
        let c = gram_check(block);
        max_offdiag = max_offdiag.max(c.max_offdiag);
        decreasing &= c.decreasing;
    }
    let signs = std::iter::once(&params.a)
        .chain(params.b.iter())
        .all(|m| (0..m.ncols()).all(|c| leading_sign(m.column(c), SIGN_TOL) > 0.0));

    let a2_slack = p as i64 - 1 - counts.total() as i64;

    let q_min = params.b.iter().map(|b| b.ncols()).min().unwrap_or(0);
    let mut a3_min_difference = f64::INFINITY;
    for k in 0..q_min {
        let mut best: f64 = 0.0;
        for s1 in 0..n_studies {
            for s2 in (s1 + 1)..n_studies {
                let c1 = params.b[s1].column(k);
                let c2 = params.b[s2].column(k);
                let scale = c1.norm().max(c2.norm());
                let diff = if scale > 0.0 { (c1 - c2).norm() / scale } else { 0.0 };
                best = best.max(diff);
            }
        }
        a3_min_difference = a3_min_difference.min(best);
    }
    let a3_distinct_columns = q_min == 0 || a3_min_difference > tol;

    IdentifiabilityReport {
        a1_diagonal_gram: max_offdiag <= tol && decreasing && signs,
        a1_max_offdiag: max_offdiag,
        a1_decreasing: decreasing,
        a1_signs: signs,
        a2_dimension: a2_slack > 0,
        a2_slack,
        a3_distinct_columns,
        a3_min_difference: if q_min == 0 { 0.0 } else { a3_min_difference },
        a4_dof: params.nu > 2.0,
        a4_slack: params.nu - 2.0,
    }
}
