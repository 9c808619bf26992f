//! Multi-study robust factor model.
//!
//! Observations `x_si` of study `s` follow
//! `x_si = mu_s + A f_si + B_s h_si + e_si` with shared loadings `A`,
//! study-specific loadings `B_s`, standard-normal factors and multivariate-t
//! errors `e_si ~ MVT_p(nu, 0, Lambda_s)`. The crate fits the model by a
//! fixed-point variational EM ([`vem::fit`]), chooses factor counts from
//! singular-value ratios ([`selection::select_factor_counts`]), aligns and
//! checks identifiability ([`identify`]), scores fits ([`evaluation`]) and
//! generates seeded simulation designs ([`simulation`]).

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod identify;
pub mod io;
pub mod linalg;
pub mod objective;
pub mod selection;
pub mod simulation;
pub mod types;
pub mod vem;

pub use error::{Error, Result};
pub use types::{
    FactorCounts, FitConfig, FitDiagnostics, FitResult, Matrix, ModelParameters, MultiStudyDataset,
    VariationalState, Vector,
};
