//! Accuracy metrics: subspace trace statistics against a known truth,
//! in-sample reconstruction error and out-of-sample prediction error.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sorted_svd, spd_solve};
use crate::simulation::{substream, GroundTruth};
use crate::types::{FitResult, Matrix, ModelParameters, MultiStudyDataset, Vector};

/// Fraction of `truth`'s energy lying in the column space of `estimate`:
/// `tr(D' P D) / tr(D' D)` with `P` the projector onto `span(estimate)`.
pub fn trace_stat(estimate: &Matrix, truth: &Matrix) -> Result<f64> {
    if estimate.nrows() != truth.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has {} rows, truth has {}",
            estimate.nrows(),
            truth.nrows()
        )));
    }
    let total = truth.norm_squared();
    if !(total > 0.0) {
        return Err(Error::ZeroTruth);
    }
    let k = estimate.ncols();
    if k == 0 || k > estimate.nrows() {
        return Err(Error::DegenerateEstimate);
    }
    let svd = sorted_svd(estimate);
    let tol = svd.sigma[0] * 1e-12 * estimate.nrows().max(k) as f64;
    if !(svd.sigma[0] > 0.0) || svd.sigma[k - 1] <= tol {
        return Err(Error::DegenerateEstimate);
    }
    let captured = (svd.u.transpose() * truth).norm_squared();
    Ok((captured / total).clamp(0.0, 1.0))
}

/// Arithmetic mean of per-study trace statistics.
pub fn mean_trace(estimates: &[Matrix], truths: &[Matrix]) -> Result<f64> {
    if estimates.is_empty() || estimates.len() != truths.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates for {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    let mut sum = 0.0;
    for (e, t) in estimates.iter().zip(truths) {
        sum += trace_stat(e, t)?;
    }
    Ok(sum / estimates.len() as f64)
}

/// Subspace accuracy of a fit against the generating truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceMetrics {
    pub tr_a: f64,
    pub mtr_f: f64,
    pub mtr_b: f64,
    pub mtr_h: f64,
}

/// Loadings and factor scores, estimated or true.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    pub a: Matrix,
    pub b: Vec<Matrix>,
    pub f: Vec<Matrix>,
    pub h: Vec<Matrix>,
}

impl FactorSet {
    pub fn from_fit(fit: &FitResult) -> Self {
        Self {
            a: fit.params.a.clone(),
            b: fit.params.b.clone(),
            f: fit.factor_scores_shared.clone(),
            h: fit.factor_scores_specific.clone(),
        }
    }

    pub fn from_truth(truth: &GroundTruth) -> Self {
        Self {
            a: truth.params0.a.clone(),
            b: truth.params0.b.clone(),
            f: truth.f.clone(),
            h: truth.h.clone(),
        }
    }
}

pub fn compare_factor_sets(estimate: &FactorSet, truth: &FactorSet) -> Result<TraceMetrics> {
    if estimate.b.len() != truth.b.len() || estimate.f.len() != truth.f.len() {
        return Err(Error::DimensionMismatch("number of studies".into()));
    }
    Ok(TraceMetrics {
        tr_a: trace_stat(&estimate.a, &truth.a)?,
        mtr_f: mean_trace(&estimate.f, &truth.f)?,
        mtr_b: mean_trace(&estimate.b, &truth.b)?,
        mtr_h: mean_trace(&estimate.h, &truth.h)?,
    })
}

pub fn trace_metrics(fit: &FitResult, truth: &GroundTruth) -> Result<TraceMetrics> {
    compare_factor_sets(&FactorSet::from_fit(fit), &FactorSet::from_truth(truth))
}

/// Root-mean-square error per variable and its average over variables.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyError {
    pub overall: f64,
    pub per_variable: Vector,
}

fn column_rms(diff: &Matrix) -> StudyError {
    let n = diff.nrows() as f64;
    let per_variable = Vector::from_iterator(
        diff.ncols(),
        diff.column_iter().map(|c| (c.norm_squared() / n).sqrt()),
    );
    StudyError {
        overall: per_variable.mean(),
        per_variable,
    }
}

/// In-sample error of `mu_s + A m_f + B_s m_h` against the data, per study.
pub fn reconstruction_error(fit: &FitResult, data: &MultiStudyDataset) -> Result<Vec<StudyError>> {
    reconstruction_error_from(
        &fit.params,
        &fit.factor_scores_shared,
        &fit.factor_scores_specific,
        data,
    )
}

/// [`reconstruction_error`] from parameters and score matrices.
pub fn reconstruction_error_from(
    params: &ModelParameters,
    f: &[Matrix],
    h: &[Matrix],
    data: &MultiStudyDataset,
) -> Result<Vec<StudyError>> {
    if params.n_studies() != data.n_studies() || params.n_vars() != data.n_vars() {
        return Err(Error::DimensionMismatch("parameters and data disagree".into()));
    }
    if f.len() != data.n_studies() || h.len() != data.n_studies() {
        return Err(Error::DimensionMismatch("number of score matrices".into()));
    }
    (0..data.n_studies())
        .map(|s| {
            let n = data.n_obs(s);
            if f[s].shape() != (n, params.a.ncols()) || h[s].shape() != (n, params.b[s].ncols()) {
                return Err(Error::DimensionMismatch(format!("study {} score shapes", s + 1)));
            }
            let mut fitted = &f[s] * params.a.transpose() + &h[s] * params.b[s].transpose();
            for mut row in fitted.row_iter_mut() {
                row += params.mu[s].transpose();
            }
            Ok(column_rms(&(fitted - data.study(s))))
        })
        .collect()
}

fn projector_solve(loadings: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    if loadings.ncols() == 0 {
        return Ok(Matrix::zeros(0, rhs.ncols()));
    }
    let gram = loadings.transpose() * loadings;
    spd_solve(&gram, &(loadings.transpose() * rhs)).ok_or(Error::DegenerateLoadings)
}

/// Least-squares factor scores of a held-out observation: both `f` and `h`
/// project the same centered vector `x - mu_s`, with no cross adjustment.
pub fn oos_factor_scores(params: &ModelParameters, x_test: &Vector, s: usize) -> Result<(Vector, Vector)> {
    if x_test.len() != params.n_vars() || s >= params.n_studies() {
        return Err(Error::DimensionMismatch("test vector or study index".into()));
    }
    let centered = Matrix::from_column_slice(x_test.len(), 1, (x_test - &params.mu[s]).as_slice());
    let f = projector_solve(&params.a, &centered)?;
    let h = projector_solve(&params.b[s], &centered)?;
    Ok((f.column(0).into_owned(), h.column(0).into_owned()))
}

/// Out-of-sample prediction error per study, using projection scores.
pub fn prediction_error(params: &ModelParameters, test: &MultiStudyDataset) -> Result<Vec<StudyError>> {
    if params.n_studies() != test.n_studies() || params.n_vars() != test.n_vars() {
        return Err(Error::DimensionMismatch("parameters and test data disagree".into()));
    }
    (0..test.n_studies())
        .map(|s| {
            let mut centered = test.study(s).transpose();
            for mut col in centered.column_iter_mut() {
                col -= &params.mu[s];
            }
            let f = projector_solve(&params.a, &centered)?;
            let h = projector_solve(&params.b[s], &centered)?;
            let fitted = &params.a * f + &params.b[s] * h;
            Ok(column_rms(&(fitted - centered).transpose()))
        })
        .collect()
}

/// Per-study uniform random train/test split. Each study keeps at least one
/// training row; the test part takes `round(test_fraction * n_s)` rows.
pub fn split_dataset(
    data: &MultiStudyDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(MultiStudyDataset, MultiStudyDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig("test fraction must lie in (0, 1)".into()));
    }
    let mut train = Vec::with_capacity(data.n_studies());
    let mut test = Vec::with_capacity(data.n_studies());
    for s in 0..data.n_studies() {
        let n = data.n_obs(s);
        let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n.saturating_sub(1));
        if n < 2 {
            return Err(Error::InvalidDataset(format!("study {} has too few rows to split", s + 1)));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut substream(seed, &[0x5711, s as u64]));
        let (test_idx, train_idx) = idx.split_at(n_test);
        let mut test_idx = test_idx.to_vec();
        let mut train_idx = train_idx.to_vec();
        test_idx.sort_unstable();
        train_idx.sort_unstable();
        train.push(data.study(s).select_rows(train_idx.iter()));
        test.push(data.study(s).select_rows(test_idx.iter()));
    }
    let names = data.variable_names().map(|v| v.to_vec());
    let ids = data.study_ids().to_vec();
    Ok((
        MultiStudyDataset::with_metadata(train, names.clone(), ids.clone())?,
        MultiStudyDataset::with_metadata(test, names, ids)?,
    ))
}
