//! Step-wise singular-value-ratio choice of `q` and `q_s`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::singular_values;
use crate::types::{FactorCounts, FitConfig, MultiStudyDataset};
use crate::vem::fit;

/// Denominators below this fraction of the leading singular value are
/// floored before taking ratios.
const RATIO_FLOOR: f64 = 1e-10;

/// `argmax_{k <= k_max} sv[k-1] / sv[k]` (1-based `k`), ties to the smaller `k`.
pub fn svr(singular_values: &[f64], k_max: usize) -> Result<usize> {
    if k_max == 0 || singular_values.len() < k_max + 1 {
        return Err(Error::InvalidConfig(format!(
            "need at least {} singular values, got {}",
            k_max + 1,
            singular_values.len()
        )));
    }
    if singular_values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NonFinite);
    }
    let lead = singular_values[0];
    if !(lead > 0.0) {
        return Err(Error::DegenerateSpectrum);
    }
    let floor = RATIO_FLOOR * lead;
    let mut best = (1, f64::NEG_INFINITY);
    for k in 1..=k_max {
        let ratio = singular_values[k - 1] / singular_values[k].max(floor);
        if ratio > best.1 {
            best = (k, ratio);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub q_hat: usize,
    pub q_s_hat: Vec<usize>,
    pub shared_singular_values: Vec<f64>,
    pub specific_singular_values: Vec<Vec<f64>>,
    pub q_max: usize,
    pub q_s_max: Vec<usize>,
}

impl SelectionResult {
    pub fn counts(&self) -> FactorCounts {
        FactorCounts::new(self.q_hat, self.q_s_hat.clone())
    }
}

pub const DEFAULT_Q_MAX: usize = 10;
pub const DEFAULT_QS_MAX: usize = 6;

/// Two-stage selection: fit at the upper bounds and read `q` off the shared
/// loadings' spectrum, then refit at `(q_hat, q_s_max)` and read each `q_s`
/// off the study loadings' spectra.
pub fn select_factor_counts(
    data: &MultiStudyDataset,
    q_max: usize,
    q_s_max: &[usize],
    config: &FitConfig,
) -> Result<SelectionResult> {
    if q_max < 2 || q_s_max.iter().any(|&b| b < 2) {
        return Err(Error::InvalidCounts("selection bounds must be at least 2".into()));
    }
    let upper = FactorCounts::new(q_max, q_s_max.to_vec());
    upper.validate(data.n_vars(), data.n_studies())?;

    let stage1 = fit(data, &upper, config)?;
    let shared_singular_values = singular_values(&stage1.params.a);
    let q_hat = svr(&shared_singular_values, q_max - 1)?;

    let stage2 = fit(data, &FactorCounts::new(q_hat, q_s_max.to_vec()), config)?;
    let specific_singular_values: Vec<Vec<f64>> =
        stage2.params.b.iter().map(singular_values).collect();
    let q_s_hat = specific_singular_values
        .iter()
        .zip(q_s_max)
        .map(|(sv, &bound)| svr(sv, bound - 1))
        .collect::<Result<Vec<_>>>()?;

    Ok(SelectionResult {
        q_hat,
        q_s_hat,
        shared_singular_values,
        specific_singular_values,
        q_max,
        q_s_max: q_s_max.to_vec(),
    })
}
