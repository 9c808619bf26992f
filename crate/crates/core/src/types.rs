//! Domain types shared across the crate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// `S` observation matrices sharing one variable set. Rows are observations,
/// columns are variables.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStudyDataset {
    studies: Vec<Matrix>,
    variable_names: Option<Vec<String>>,
    study_ids: Vec<String>,
}

impl MultiStudyDataset {
    /// Builds a dataset with study ids `"1"`, `"2"`, ...
    pub fn new(studies: Vec<Matrix>) -> Result<Self> {
        let ids = (1..=studies.len()).map(|s| s.to_string()).collect();
        Self::with_metadata(studies, None, ids)
    }

    pub fn with_metadata(
        studies: Vec<Matrix>,
        variable_names: Option<Vec<String>>,
        study_ids: Vec<String>,
    ) -> Result<Self> {
        if studies.is_empty() {
            return Err(Error::InvalidDataset("no studies".into()));
        }
        if study_ids.len() != studies.len() {
            return Err(Error::InvalidDataset(format!(
                "{} study ids for {} studies",
                study_ids.len(),
                studies.len()
            )));
        }
        let p = studies[0].ncols();
        if p == 0 {
            return Err(Error::InvalidDataset("zero variables".into()));
        }
        for (s, x) in studies.iter().enumerate() {
            if x.ncols() != p {
                return Err(Error::InvalidDataset(format!(
                    "study {} has {} columns, expected {}",
                    s + 1,
                    x.ncols(),
                    p
                )));
            }
            if x.nrows() == 0 {
                return Err(Error::InvalidDataset(format!("study {} has no rows", s + 1)));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        if let Some(names) = &variable_names {
            if names.len() != p {
                return Err(Error::InvalidDataset(format!(
                    "{} variable names for {} columns",
                    names.len(),
                    p
                )));
            }
        }
        Ok(Self {
            studies,
            variable_names,
            study_ids,
        })
    }

    pub fn studies(&self) -> &[Matrix] {
        &self.studies
    }

    pub fn study(&self, s: usize) -> &Matrix {
        &self.studies[s]
    }

    pub fn n_studies(&self) -> usize {
        self.studies.len()
    }

    pub fn n_vars(&self) -> usize {
        self.studies[0].ncols()
    }

    pub fn n_obs(&self, s: usize) -> usize {
        self.studies[s].nrows()
    }

    pub fn total_obs(&self) -> usize {
        self.studies.iter().map(|x| x.nrows()).sum()
    }

    pub fn variable_names(&self) -> Option<&[String]> {
        self.variable_names.as_deref()
    }

    pub fn study_ids(&self) -> &[String] {
        &self.study_ids
    }
}

/// Number of shared factors `q` and study-specific factors `q_s`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorCounts {
    pub q: usize,
    pub q_s: Vec<usize>,
}

impl FactorCounts {
    pub fn new(q: usize, q_s: Vec<usize>) -> Self {
        Self { q, q_s }
    }

    pub fn total(&self) -> usize {
        self.q + self.q_s.iter().sum::<usize>()
    }

    pub fn q_min(&self) -> usize {
        self.q_s.iter().copied().min().unwrap_or(0)
    }

    /// Checks the counts against `p` variables and `n_studies` studies:
    /// `p - 1 > q + sum(q_s)` and at least one factor per study.
    pub fn validate(&self, p: usize, n_studies: usize) -> Result<()> {
        if self.q_s.len() != n_studies {
            return Err(Error::InvalidCounts(format!(
                "{} study-specific counts for {} studies",
                self.q_s.len(),
                n_studies
            )));
        }
        if let Some(s) = self.q_s.iter().position(|&qs| self.q + qs == 0) {
            return Err(Error::InvalidCounts(format!("study {} has no factors", s + 1)));
        }
        if p < 1 || p - 1 <= self.total() {
            return Err(Error::InvalidCounts(format!(
                "need p - 1 > q + sum(q_s), got p = {} and {} factors",
                p,
                self.total()
            )));
        }
        Ok(())
    }
}

/// Model parameters: per-study means, shared and study loadings, diagonal
/// scales and the degrees of freedom of the t errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub mu: Vec<Vector>,
    pub a: Matrix,
    pub b: Vec<Matrix>,
    pub lambda: Vec<Vector>,
    pub nu: f64,
}

impl ModelParameters {
    pub fn n_studies(&self) -> usize {
        self.mu.len()
    }

    pub fn n_vars(&self) -> usize {
        self.a.nrows()
    }

    pub fn counts(&self) -> FactorCounts {
        FactorCounts::new(self.a.ncols(), self.b.iter().map(|b| b.ncols()).collect())
    }

    /// Dimension and value checks. `nu` only needs to be positive here; the
    /// `nu > 2` identifiability requirement is reported by
    /// [`crate::identify::check_identifiability`].
    pub fn validate(&self) -> Result<()> {
        let s = self.mu.len();
        let p = self.a.nrows();
        if self.b.len() != s || self.lambda.len() != s {
            return Err(Error::DimensionMismatch(
                "mu, B and Lambda must have one entry per study".into(),
            ));
        }
        for k in 0..s {
            if self.mu[k].len() != p || self.lambda[k].len() != p || self.b[k].nrows() != p {
                return Err(Error::DimensionMismatch(format!(
                    "study {} parameters do not have {} rows",
                    k + 1,
                    p
                )));
            }
        }
        if !(self.nu > 0.0) || self.nu.is_nan() {
            return Err(Error::InvalidDof(self.nu));
        }
        let finite = self.mu.iter().all(|m| m.iter().all(|v| v.is_finite()))
            && self.a.iter().all(|v| v.is_finite())
            && self.b.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NonFinite);
        }
        for l in &self.lambda {
            if l.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidScale);
            }
        }
        Ok(())
    }
}

/// Mean-field Gaussian posterior summaries per observation plus the cached
/// robust weights `phi`. Indexing is `[study][observation]`; the means are
/// stored as `n_s x q` (resp. `n_s x q_s`) matrices with one row per
/// observation.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub m_f: Vec<Matrix>,
    pub s_f: Vec<Vec<Matrix>>,
    pub m_h: Vec<Matrix>,
    pub s_h: Vec<Vec<Matrix>>,
    pub phi: Vec<Vector>,
}

impl VariationalState {
    pub fn n_studies(&self) -> usize {
        self.m_f.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Relative ELBO change below which the loop stops.
    pub eps: f64,
    pub nu_grid: Vec<f64>,
    /// When set, `nu` is held at this value and the grid search is skipped.
    pub nu_fixed: Option<f64>,
    pub seed: u64,
    pub lambda_floor: f64,
}

pub const DEFAULT_NU_GRID: [f64; 12] = [
    2.1, 2.5, 3.0, 4.0, 5.0, 7.0, 10.0, 15.0, 20.0, 30.0, 50.0, 100.0,
];

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            eps: 1e-6,
            nu_grid: DEFAULT_NU_GRID.to_vec(),
            nu_fixed: None,
            seed: 1,
            lambda_floor: 1e-8,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig("eps must be positive".into()));
        }
        if !(self.lambda_floor > 0.0) {
            return Err(Error::InvalidConfig("lambda_floor must be positive".into()));
        }
        if self.nu_grid.is_empty() {
            return Err(Error::InvalidConfig("nu_grid is empty".into()));
        }
        if self.nu_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidConfig("nu_grid must be strictly increasing".into()));
        }
        if !(self.nu_grid[0] > 2.0) {
            return Err(Error::InvalidConfig("nu_grid entries must exceed 2".into()));
        }
        if let Some(nu) = self.nu_fixed {
            if !(nu > 0.0) || !nu.is_finite() {
                return Err(Error::InvalidDof(nu));
            }
        }
        Ok(())
    }

    /// Starting `nu`: the fixed value if any, else the lower median of the grid.
    pub fn initial_nu(&self) -> f64 {
        self.nu_fixed
            .unwrap_or_else(|| self.nu_grid[(self.nu_grid.len() - 1) / 2])
    }
}

/// Counters collected while iterating.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// ELBO of the initialization.
    pub initial_elbo: f64,
    /// Iterations whose ELBO fell below the previous one.
    pub elbo_decreases: usize,
    /// Whether `nu` was searched over the grid.
    pub nu_searched: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ModelParameters,
    pub var_state: VariationalState,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub factor_scores_shared: Vec<Matrix>,
    pub factor_scores_specific: Vec<Matrix>,
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    pub fn final_elbo(&self) -> f64 {
        self.elbo_trace
            .last()
            .copied()
            .unwrap_or(self.diagnostics.initial_elbo)
    }

    /// Fitted mean `mu_s + A m_f + B_s m_h` for every observation of study `s`.
    pub fn reconstruction(&self, s: usize) -> Matrix {
        let p = &self.params;
        let mut x = &self.var_state.m_f[s] * p.a.transpose()
            + &self.var_state.m_h[s] * p.b[s].transpose();
        for mut row in x.row_iter_mut() {
            row += p.mu[s].transpose();
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_rejects_ragged_columns() {
        let e = MultiStudyDataset::new(vec![Matrix::zeros(3, 4), Matrix::zeros(2, 5)]);
        assert!(matches!(e, Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn dataset_rejects_nan() {
        let mut x = Matrix::zeros(3, 4);
        x[(1, 1)] = f64::NAN;
        assert_eq!(MultiStudyDataset::new(vec![x]), Err(Error::NonFinite));
    }

    #[test]
    fn counts_dimensionality_constraint() {
        let c = FactorCounts::new(3, vec![2, 2]);
        assert!(c.validate(7, 2).is_err());
        assert!(c.validate(8, 2).is_err());
        assert!(c.validate(9, 2).is_ok());
        assert!(FactorCounts::new(0, vec![0, 1]).validate(50, 2).is_err());
        assert!(FactorCounts::new(0, vec![1, 1]).validate(50, 2).is_ok());
    }

    #[test]
    fn config_grid_checks() {
        let mut c = FitConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!(c.initial_nu(), 7.0);
        c.nu_grid = vec![3.0, 3.0];
        assert!(c.validate().is_err());
        c.nu_grid = vec![2.0, 3.0];
        assert!(c.validate().is_err());
        c.nu_grid = vec![];
        assert!(c.validate().is_err());
    }
}
