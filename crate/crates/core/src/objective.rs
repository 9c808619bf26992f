//! The robust weight `phi` and the variational lower bound.
//!
//! For observation `i` of study `s` with residual
//! `y = x - mu_s - A m_f - B_s m_h`,
//!
//! ```text
//! phi = 1 + ( y' L^-1 y + tr(A' L^-1 A S_f) + tr(B_s' L^-1 B_s S_h) ) / nu
//! ```
//!
//! and the lower bound is
//!
//! ```text
//! l = - sum (nu + p)/2 ln phi
//!     + sum_s { n_s ln C_p(nu) - n_s/2 ln|L_s| }
//!     - 1/2 sum { |m_f|^2 + tr S_f + |m_h|^2 + tr S_h }
//!     + 1/2 sum { ln|S_f| + ln|S_h| }
//! ```
//!
//! with the parameter-free additive constant dropped.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{log_det_spd, weighted_gram};
use crate::types::{Matrix, ModelParameters, MultiStudyDataset, VariationalState, Vector};

/// `ln C_p(nu)` with `C_p(nu) = (pi nu)^(-p/2) Gamma((nu+p)/2) / Gamma(nu/2)`.
pub fn log_cp(nu: f64, p: usize) -> Result<f64> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::InvalidDof(nu));
    }
    if p == 0 {
        return Ok(0.0);
    }
    let pf = p as f64;
    Ok(-0.5 * pf * (std::f64::consts::PI * nu).ln() + ln_gamma(0.5 * (nu + pf)) - ln_gamma(0.5 * nu))
}

fn check_lambda(lambda: &Vector) -> Result<Vector> {
    if lambda.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    if lambda.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidScale);
    }
    Ok(lambda.map(|v| 1.0 / v))
}

/// Robust weight of a single observation.
pub fn compute_phi(
    params: &ModelParameters,
    obs: &Vector,
    study: usize,
    m_f: &Vector,
    s_f: &Matrix,
    m_h: &Vector,
    s_h: &Matrix,
) -> Result<f64> {
    let p = params.n_vars();
    let b = params
        .b
        .get(study)
        .ok_or_else(|| Error::DimensionMismatch(format!("no study {}", study + 1)))?;
    if obs.len() != p
        || m_f.len() != params.a.ncols()
        || m_h.len() != b.ncols()
        || s_f.shape() != (m_f.len(), m_f.len())
        || s_h.shape() != (m_h.len(), m_h.len())
    {
        return Err(Error::DimensionMismatch("compute_phi operand shapes".into()));
    }
    let finite = |m: &[f64]| m.iter().all(|v| v.is_finite());
    if !finite(obs.as_slice())
        || !finite(m_f.as_slice())
        || !finite(m_h.as_slice())
        || !finite(s_f.as_slice())
        || !finite(s_h.as_slice())
        || !params.nu.is_finite()
    {
        return Err(Error::NonFinite);
    }
    if !(params.nu > 0.0) {
        return Err(Error::InvalidDof(params.nu));
    }
    let inv_lambda = check_lambda(&params.lambda[study])?;
    let resid = obs - &params.mu[study] - &params.a * m_f - b * m_h;
    let quad: f64 = resid
        .iter()
        .zip(inv_lambda.iter())
        .map(|(r, w)| r * r * w)
        .sum();
    let ga = weighted_gram(&params.a, &inv_lambda);
    let gb = weighted_gram(b, &inv_lambda);
    let traces = (ga * s_f).trace() + (gb * s_h).trace();
    Ok(1.0 + (quad + traces) / params.nu)
}

/// Per-study `A' L_s^-1 A` and `B_s' L_s^-1 B_s`.
pub(crate) struct StudyPrecision {
    pub inv_lambda: Vector,
    pub ga: Matrix,
    pub gb: Matrix,
}

pub(crate) fn study_precision(params: &ModelParameters, s: usize) -> Result<StudyPrecision> {
    let inv_lambda = check_lambda(&params.lambda[s])?;
    let ga = weighted_gram(&params.a, &inv_lambda);
    let gb = weighted_gram(&params.b[s], &inv_lambda);
    Ok(StudyPrecision { inv_lambda, ga, gb })
}

/// Residual matrix `X_s - 1 mu_s' - M_f A' - M_h B_s'`.
pub(crate) fn residuals(
    params: &ModelParameters,
    state: &VariationalState,
    data: &MultiStudyDataset,
    s: usize,
) -> Matrix {
    let mut y = data.study(s) - &state.m_f[s] * params.a.transpose() - &state.m_h[s] * params.b[s].transpose();
    for mut row in y.row_iter_mut() {
        row -= params.mu[s].transpose();
    }
    y
}

/// `nu (phi - 1)` for every observation of every study: the expected
/// Mahalanobis residual, which does not depend on `nu`.
pub fn expected_quad_forms(
    params: &ModelParameters,
    state: &VariationalState,
    data: &MultiStudyDataset,
) -> Result<Vec<Vector>> {
    (0..data.n_studies())
        .map(|s| {
            let prec = study_precision(params, s)?;
            let y = residuals(params, state, data, s);
            let n = data.n_obs(s);
            let mut out = Vector::zeros(n);
            for i in 0..n {
                let quad: f64 = y
                    .row(i)
                    .iter()
                    .zip(prec.inv_lambda.iter())
                    .map(|(r, w)| r * r * w)
                    .sum();
                let tf = prec.ga.dot(&state.s_f[s][i]);
                let th = prec.gb.dot(&state.s_h[s][i]);
                out[i] = quad + tf + th;
            }
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
            Ok(out)
        })
        .collect()
}

/// Robust weights for all observations at the current `(params, state)`.
pub fn phi_all(
    params: &ModelParameters,
    state: &VariationalState,
    data: &MultiStudyDataset,
) -> Result<Vec<Vector>> {
    let nu = params.nu;
    Ok(expected_quad_forms(params, state, data)?
        .into_iter()
        .map(|q| q.map(|v| 1.0 + v / nu))
        .collect())
}

/// The pieces of the lower bound, split so that it can be re-evaluated at
/// any `nu` without touching the data again.
#[derive(Debug, Clone)]
pub struct ElboParts {
    quad: Vec<Vector>,
    n_obs: Vec<usize>,
    p: usize,
    log_det_lambda: Vec<f64>,
    latent: f64,
}

impl ElboParts {
    pub fn new(
        params: &ModelParameters,
        state: &VariationalState,
        data: &MultiStudyDataset,
    ) -> Result<Self> {
        let quad = expected_quad_forms(params, state, data)?;
        let log_det_lambda = params
            .lambda
            .iter()
            .map(|l| l.iter().map(|v| v.ln()).sum())
            .collect();
        let mut latent = 0.0;
        for s in 0..data.n_studies() {
            for i in 0..data.n_obs(s) {
                let sf = &state.s_f[s][i];
                let sh = &state.s_h[s][i];
                let ld_f = log_det_spd(sf).ok_or(Error::DegenerateCovariance)?;
                let ld_h = log_det_spd(sh).ok_or(Error::DegenerateCovariance)?;
                let second_moment = state.m_f[s].row(i).norm_squared()
                    + sf.trace()
                    + state.m_h[s].row(i).norm_squared()
                    + sh.trace();
                latent += -0.5 * second_moment + 0.5 * (ld_f + ld_h);
            }
        }
        Ok(Self {
            quad,
            n_obs: (0..data.n_studies()).map(|s| data.n_obs(s)).collect(),
            p: data.n_vars(),
            log_det_lambda,
            latent,
        })
    }

    /// Lower bound at degrees of freedom `nu`, with `phi` recomputed for
    /// that `nu`.
    pub fn value(&self, nu: f64) -> Result<f64> {
        let lcp = log_cp(nu, self.p)?;
        let half = 0.5 * (nu + self.p as f64);
        let mut total = self.latent;
        for (s, q) in self.quad.iter().enumerate() {
            let n = self.n_obs[s] as f64;
            let log_phi: f64 = q.iter().map(|v| (v / nu).ln_1p()).sum();
            total += -half * log_phi + n * lcp - 0.5 * n * self.log_det_lambda[s];
        }
        Ok(total)
    }
}

/// Variational lower bound at `(params, state)`.
pub fn elbo(
    params: &ModelParameters,
    state: &VariationalState,
    data: &MultiStudyDataset,
) -> Result<f64> {
    ElboParts::new(params, state, data)?.value(params.nu)
}
