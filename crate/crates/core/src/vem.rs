//! Fixed-point variational EM.
//!
//! Each outer iteration freezes the robust weights `phi` at the previous
//! iterate, runs the closed-form E-step (f-block then h-block for every
//! observation), then the M-step in the order `mu -> A -> B_s -> Lambda_s ->
//! nu`, and finally refreshes `phi` and evaluates the lower bound.

use log::debug;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{diag_sandwich, sorted_svd, spd_inverse, spd_solve, symmetrize, weighted_gram};
use crate::objective::{elbo, phi_all, residuals, study_precision, ElboParts};
use crate::types::{
    FactorCounts, FitConfig, FitDiagnostics, FitResult, Matrix, ModelParameters,
    MultiStudyDataset, VariationalState, Vector,
};

fn column_means(x: &Matrix) -> Vector {
    let n = x.nrows() as f64;
    Vector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

fn center(x: &Matrix, mu: &Vector) -> Matrix {
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= mu.transpose();
    }
    xc
}

/// Leading directions of one centered study under a rank-`r` plus isotropic
/// noise covariance model.
struct StudySpectrum {
    directions: Matrix,
    /// Fraction of variance along each direction not explained by noise.
    signal_share: Vec<f64>,
    noise: f64,
}

fn study_spectrum(xc: &Matrix, rank: usize) -> StudySpectrum {
    let (n, p) = xc.shape();
    let svd = sorted_svd(xc);
    let r = rank.min(svd.sigma.len()).min(p - 1);
    let eig: Vec<f64> = svd.sigma.iter().map(|v| v * v / n as f64).collect();
    let total: f64 = eig.iter().sum();
    let lead: f64 = eig[..r].iter().sum();
    let noise = ((total - lead) / (p - r) as f64).max(0.0);
    // round-off directions of exactly low-rank data carry no signal
    let negligible = eig.first().copied().unwrap_or(0.0) * 1e-12;
    let signal_share = eig[..r]
        .iter()
        .map(|&d| if d > noise && d > negligible { 1.0 - noise / d } else { 0.0 })
        .collect();
    StudySpectrum {
        directions: svd.v.columns(0, r).into_owned(),
        signal_share,
        noise,
    }
}

/// Starting shared loadings and scores. Directions are ranked by the
/// harmonic mean of the per-study signal-to-noise covariances, so a direction
/// counts as shared only when it is strong in every study. Each column's scale is
/// the smallest excess variance across studies, which leaves directions that
/// carry a single study's signal near zero for the study loadings to claim.
fn shared_start(centered: &[Matrix], q: usize, ranks: &[usize], floor: f64) -> (Matrix, Vec<Matrix>) {
    let p = centered[0].ncols();
    if q == 0 {
        return (Matrix::zeros(p, 0), centered.iter().map(|x| Matrix::zeros(x.nrows(), 0)).collect());
    }
    let spectra: Vec<StudySpectrum> = centered
        .iter()
        .zip(ranks)
        .map(|(x, &r)| study_spectrum(x, r))
        .collect();

    let width: usize = spectra.iter().map(|sp| sp.directions.ncols()).sum();
    let mut span = Matrix::zeros(p, width);
    let mut offset = 0;
    for sp in &spectra {
        let k = sp.directions.ncols();
        span.columns_mut(offset, k).copy_from(&sp.directions);
        offset += k;
    }
    let span_svd = sorted_svd(&span);
    let kept = span_svd
        .sigma
        .iter()
        .take_while(|&&v| v > 1e-8 * span_svd.sigma[0])
        .count();
    let mut basis = span_svd.u.columns(0, kept).into_owned();
    if kept < q {
        // Not enough distinct directions; complete with the stacked spectrum.
        let stacked = stack_rows(centered);
        basis = sorted_svd(&stacked).v.columns(0, q.min(p)).into_owned();
    }

    let dim = basis.ncols();
    let mut inv_mean = Matrix::zeros(dim, dim);
    for sp in &spectra {
        let proj = basis.transpose() * &sp.directions;
        let share = Vector::from_column_slice(&sp.signal_share);
        inv_mean += Matrix::identity(dim, dim) - weighted_gram(&proj.transpose(), &share);
    }
    let eigen = nalgebra::SymmetricEigen::new(symmetrize(&inv_mean));
    // A value near 0 means strong in every study; near k means weak in k of
    // them. Directions strong everywhere come first, then spare columns are
    // filled from the weakest end so they do not start on a single study's
    // signal.
    let value = |i: usize| eigen.eigenvalues[i];
    let (mut shared, mut spare): (Vec<usize>, Vec<usize>) = (0..dim).partition(|&i| value(i) < 0.5);
    shared.sort_by(|&i, &j| value(i).total_cmp(&value(j)).then(i.cmp(&j)));
    spare.sort_by(|&i, &j| value(j).total_cmp(&value(i)).then(i.cmp(&j)));
    let order: Vec<usize> = shared.into_iter().chain(spare).collect();
    let mut w = Matrix::zeros(p, q);
    for (k, &i) in order.iter().take(q).enumerate() {
        w.set_column(k, &(&basis * eigen.eigenvectors.column(i)));
    }

    let mean_noise = spectra.iter().map(|sp| sp.noise).sum::<f64>() / spectra.len() as f64;
    let mut a = w;
    for k in 0..q {
        let excess = centered
            .iter()
            .zip(&spectra)
            .map(|(x, sp)| (x * a.column(k)).norm_squared() / x.nrows() as f64 - sp.noise)
            .fold(f64::INFINITY, f64::min);
        let scale = excess.max(1e-2 * mean_noise).max(0.0).sqrt();
        a.column_mut(k).scale_mut(scale);
    }

    // Ridge scores under Lambda = noise * I.
    let gram = a.transpose() * &a;
    let m_f = centered
        .iter()
        .zip(&spectra)
        .map(|(x, sp)| {
            let system = &gram + Matrix::identity(q, q) * sp.noise.max(floor);
            let rhs = a.transpose() * x.transpose();
            spd_solve(&system, &rhs)
                .map(|sol| sol.transpose())
                .unwrap_or_else(|| Matrix::zeros(x.nrows(), q))
        })
        .collect();
    (a, m_f)
}

fn stack_rows(blocks: &[Matrix]) -> Matrix {
    let total: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Matrix::zeros(total, blocks[0].ncols());
    let mut offset = 0;
    for b in blocks {
        out.rows_mut(offset, b.nrows()).copy_from(b);
        offset += b.nrows();
    }
    out
}

/// Shrinks rows longer than twice the median row norm onto that radius so a
/// handful of extreme observations cannot steer the spectral start.
fn clip_rows(xc: &Matrix) -> Matrix {
    let mut norms: Vec<f64> = xc.row_iter().map(|r| r.norm()).collect();
    norms.sort_by(f64::total_cmp);
    let radius = 2.0 * norms[(norms.len() - 1) / 2];
    let mut out = xc.clone();
    for mut row in out.row_iter_mut() {
        let norm = row.norm();
        if norm > radius {
            row *= radius / norm;
        }
    }
    out
}

fn columns_scaled(m: &Matrix, w: &Vector) -> Matrix {
    let mut out = m.clone();
    for (j, mut row) in out.row_iter_mut().enumerate() {
        row *= w[j];
    }
    out
}

/// Deterministic spectral start.
///
/// The row-concatenated, per-study centered data `Xc = U D V'` gives
/// `A = V_q D_q / sqrt(N)` and shared scores `sqrt(N) U_q`; each study's
/// residual after removing the shared part gives `B_s` and its scores the
/// same way. `Lambda_s` is the residual column variance, floored.
/// Posterior covariances start at their Gaussian-model values.
pub fn initialize(
    data: &MultiStudyDataset,
    counts: &FactorCounts,
    config: &FitConfig,
) -> Result<(ModelParameters, VariationalState)> {
    config.validate()?;
    let p = data.n_vars();
    let n_studies = data.n_studies();
    counts.validate(p, n_studies)?;
    let q = counts.q;
    for s in 0..n_studies {
        let needed = q + counts.q_s[s];
        if data.n_obs(s) <= needed {
            return Err(Error::InsufficientObservations {
                study: s + 1,
                n: data.n_obs(s),
                needed,
            });
        }
    }

    let mu: Vec<Vector> = data.studies().iter().map(column_means).collect();
    let centered: Vec<Matrix> = data
        .studies()
        .iter()
        .zip(&mu)
        .map(|(x, m)| clip_rows(&center(x, m)))
        .collect();

    let ranks: Vec<usize> = counts.q_s.iter().map(|qs| q + qs).collect();
    let (a, m_f) = shared_start(&centered, q, &ranks, config.lambda_floor);

    let mut b = Vec::with_capacity(n_studies);
    let mut m_h = Vec::with_capacity(n_studies);
    let mut lambda = Vec::with_capacity(n_studies);
    for s in 0..n_studies {
        let n = data.n_obs(s);
        let qs = counts.q_s[s];
        let resid = &centered[s] - &m_f[s] * a.transpose();
        let (bs, mh) = if qs == 0 {
            (Matrix::zeros(p, 0), Matrix::zeros(n, 0))
        } else {
            let svd = sorted_svd(&resid);
            let root_n = (n as f64).sqrt();
            let mut bs = svd.v.columns(0, qs).into_owned();
            for k in 0..qs {
                let scale = svd.sigma[k] / root_n;
                bs.column_mut(k).scale_mut(scale);
            }
            (bs, svd.u.columns(0, qs) * root_n)
        };
        let noise = &resid - &mh * bs.transpose();
        let lam = Vector::from_iterator(
            p,
            noise
                .column_iter()
                .map(|c| (c.norm_squared() / n as f64).max(config.lambda_floor)),
        );
        b.push(bs);
        m_h.push(mh);
        lambda.push(lam);
    }

    let params = ModelParameters {
        mu,
        a,
        b,
        lambda,
        nu: config.initial_nu(),
    };
    // Covariances start at the Gaussian posterior (A' L^-1 A + I)^-1, which
    // keeps the trace part of phi below q + q_s.
    let mut s_f = Vec::with_capacity(n_studies);
    let mut s_h = Vec::with_capacity(n_studies);
    for s in 0..n_studies {
        let prec = study_precision(&params, s)?;
        let qs = counts.q_s[s];
        let cf = spd_inverse(&(prec.ga + Matrix::identity(q, q))).ok_or(Error::InvalidScale)?;
        let ch = spd_inverse(&(prec.gb + Matrix::identity(qs, qs))).ok_or(Error::InvalidScale)?;
        s_f.push(vec![cf; data.n_obs(s)]);
        s_h.push(vec![ch; data.n_obs(s)]);
    }
    let mut state = VariationalState {
        s_f,
        s_h,
        m_f,
        m_h,
        phi: Vec::new(),
    };
    state.phi = phi_all(&params, &state, data)?;
    Ok((params, state))
}

/// Posterior precision weight `(nu + p) / (nu phi)`.
fn precision_weight(nu: f64, p: usize, phi: f64) -> Result<f64> {
    if !phi.is_finite() || !(phi > 0.0) {
        return Err(Error::NonFinite);
    }
    Ok((nu + p as f64) / (nu * phi))
}

struct StudyPosterior {
    m_f: Matrix,
    s_f: Vec<Matrix>,
    m_h: Matrix,
    s_h: Vec<Matrix>,
}

fn e_step_study(
    params: &ModelParameters,
    state: &VariationalState,
    data: &MultiStudyDataset,
    s: usize,
) -> Result<StudyPosterior> {
    let prec = study_precision(params, s)?;
    let p = data.n_vars();
    let n = data.n_obs(s);
    let (q, qs) = (params.a.ncols(), params.b[s].ncols());
    let xc = center(data.study(s), &params.mu[s]);
    let phi = &state.phi[s];

    let a_scaled = columns_scaled(&params.a, &prec.inv_lambda);
    let zf = (&xc - &state.m_h[s] * params.b[s].transpose()) * a_scaled;
    let mut m_f = Matrix::zeros(n, q);
    let mut s_f = Vec::with_capacity(n);
    for i in 0..n {
        let w = precision_weight(params.nu, p, phi[i])?;
        let cov = spd_inverse(&(&prec.ga * w + Matrix::identity(q, q))).ok_or(Error::InvalidScale)?;
        let mean = &cov * zf.row(i).transpose() * w;
        m_f.row_mut(i).copy_from(&mean.transpose());
        s_f.push(cov);
    }

    let b_scaled = columns_scaled(&params.b[s], &prec.inv_lambda);
    let zh = (&xc - &m_f * params.a.transpose()) * b_scaled;
    let mut m_h = Matrix::zeros(n, qs);
    let mut s_h = Vec::with_capacity(n);
    for i in 0..n {
        let w = precision_weight(params.nu, p, phi[i])?;
        let cov = spd_inverse(&(&prec.gb * w + Matrix::identity(qs, qs))).ok_or(Error::InvalidScale)?;
        let mean = &cov * zh.row(i).transpose() * w;
        m_h.row_mut(i).copy_from(&mean.transpose());
        s_h.push(cov);
    }
    Ok(StudyPosterior { m_f, s_f, m_h, s_h })
}

/// Closed-form variational update with `phi` held at `state.phi`. The
/// returned state carries the same `phi`.
pub fn e_step(
    params: &ModelParameters,
    state: &VariationalState,
    data: &MultiStudyDataset,
) -> Result<VariationalState> {
    let per_study: Vec<StudyPosterior> = (0..data.n_studies())
        .into_par_iter()
        .map(|s| e_step_study(params, state, data, s))
        .collect::<Result<_>>()?;
    let mut out = VariationalState {
        m_f: Vec::with_capacity(per_study.len()),
        s_f: Vec::with_capacity(per_study.len()),
        m_h: Vec::with_capacity(per_study.len()),
        s_h: Vec::with_capacity(per_study.len()),
        phi: state.phi.clone(),
    };
    for post in per_study {
        out.m_f.push(post.m_f);
        out.s_f.push(post.s_f);
        out.m_h.push(post.m_h);
        out.s_h.push(post.s_h);
    }
    Ok(out)
}

fn inverse_weights(phi: &Vector) -> Vector {
    phi.map(|v| 1.0 / v)
}

/// `1/phi`-weighted mean of the factor-adjusted observations of study `s`.
pub fn m_step_mu(
    params: &ModelParameters,
    state: &VariationalState,
    data: &MultiStudyDataset,
    s: usize,
) -> Vector {
    let v = inverse_weights(&state.phi[s]);
    let adjusted =
        data.study(s) - &state.m_f[s] * params.a.transpose() - &state.m_h[s] * params.b[s].transpose();
    adjusted.transpose() * &v / v.sum()
}

/// Shared loadings, solved one variable (row of `A`) at a time: row `j`
/// solves a `q x q` system whose Gram and right-hand side weight each
/// study's contribution by `1/lambda_sj`.
pub fn m_step_a(
    params: &ModelParameters,
    state: &VariationalState,
    data: &MultiStudyDataset,
) -> Result<Matrix> {
    let p = data.n_vars();
    let q = params.a.ncols();
    if q == 0 {
        return Ok(Matrix::zeros(p, 0));
    }
    let mut grams = Vec::with_capacity(data.n_studies());
    let mut cross = Vec::with_capacity(data.n_studies());
    for s in 0..data.n_studies() {
        let v = inverse_weights(&state.phi[s]);
        let mf = &state.m_f[s];
        let weighted_mf = columns_scaled(mf, &v);
        let mut g = mf.transpose() * &weighted_mf;
        for (i, sf) in state.s_f[s].iter().enumerate() {
            g += sf * v[i];
        }
        let mut x_tilde = data.study(s) - &state.m_h[s] * params.b[s].transpose();
        for mut row in x_tilde.row_iter_mut() {
            row -= params.mu[s].transpose();
        }
        grams.push(g);
        cross.push(x_tilde.transpose() * weighted_mf);
    }
    let rows: Vec<Vector> = (0..p)
        .into_par_iter()
        .map(|j| {
            let mut g = Matrix::zeros(q, q);
            let mut r = Vector::zeros(q);
            for s in 0..data.n_studies() {
                let il = 1.0 / params.lambda[s][j];
                g += &grams[s] * il;
                r += cross[s].row(j).transpose() * il;
            }
            let rhs = Matrix::from_column_slice(q, 1, r.as_slice());
            spd_solve(&g, &rhs)
                .map(|x| x.column(0).into_owned())
                .ok_or(Error::UnidentifiedSharedLoadings { row: j + 1 })
        })
        .collect::<Result<_>>()?;
    let mut a = Matrix::zeros(p, q);
    for (j, row) in rows.iter().enumerate() {
        a.row_mut(j).copy_from(&row.transpose());
    }
    Ok(a)
}

/// Study loadings: weighted regression of `x - mu_s - A m_f` onto the
/// `m_h` scores. `Lambda_s` is constant within a study and cancels.
pub fn m_step_b(
    params: &ModelParameters,
    state: &VariationalState,
    data: &MultiStudyDataset,
    s: usize,
) -> Result<Matrix> {
    let p = data.n_vars();
    let qs = params.b[s].ncols();
    if qs == 0 {
        return Ok(Matrix::zeros(p, 0));
    }
    let v = inverse_weights(&state.phi[s]);
    let mh = &state.m_h[s];
    let weighted_mh = columns_scaled(mh, &v);
    let mut gram = mh.transpose() * &weighted_mh;
    for (i, sh) in state.s_h[s].iter().enumerate() {
        gram += sh * v[i];
    }
    let mut x_breve = data.study(s) - &state.m_f[s] * params.a.transpose();
    for mut row in x_breve.row_iter_mut() {
        row -= params.mu[s].transpose();
    }
    let cross = x_breve.transpose() * weighted_mh;
    let bt = spd_solve(&gram, &cross.transpose())
        .ok_or(Error::UnidentifiedStudyLoadings { study: s + 1 })?;
    Ok(bt.transpose())
}

/// Diagonal scales of study `s`, floored at `floor`.
pub fn m_step_lambda(
    params: &ModelParameters,
    state: &VariationalState,
    data: &MultiStudyDataset,
    s: usize,
    floor: f64,
) -> Vector {
    let p = data.n_vars();
    let n = data.n_obs(s);
    let (q, qs) = (params.a.ncols(), params.b[s].ncols());
    let w = state.phi[s].map(|phi| (params.nu + p as f64) / (params.nu * phi));
    let y = residuals(params, state, data, s);
    let mut acc = Vector::zeros(p);
    for (i, row) in y.row_iter().enumerate() {
        for j in 0..p {
            acc[j] += w[i] * row[j] * row[j];
        }
    }
    let mut wf = Matrix::zeros(q, q);
    let mut wh = Matrix::zeros(qs, qs);
    for i in 0..n {
        wf += &state.s_f[s][i] * w[i];
        wh += &state.s_h[s][i] * w[i];
    }
    acc += diag_sandwich(&params.a, &wf) + diag_sandwich(&params.b[s], &wh);
    acc.map(|v| {
        let lam = v / n as f64;
        if lam.is_nan() {
            lam
        } else {
            lam.max(floor)
        }
    })
}

/// Grid point maximizing the lower bound, with `phi` recomputed for each
/// candidate. Ties go to the smaller `nu`.
pub fn m_step_nu(
    params: &ModelParameters,
    state: &VariationalState,
    data: &MultiStudyDataset,
    grid: &[f64],
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("nu_grid is empty".into()));
    }
    let parts = ElboParts::new(params, state, data)?;
    let mut best = (grid[0], parts.value(grid[0])?);
    for &nu in &grid[1..] {
        let val = parts.value(nu)?;
        if val > best.1 {
            best = (nu, val);
        }
    }
    Ok(best.0)
}

fn package(
    params: ModelParameters,
    state: VariationalState,
    elbo_trace: Vec<f64>,
    converged: bool,
    diagnostics: FitDiagnostics,
) -> FitResult {
    FitResult {
        factor_scores_shared: state.m_f.clone(),
        factor_scores_specific: state.m_h.clone(),
        iterations: elbo_trace.len(),
        params,
        var_state: state,
        elbo_trace,
        converged,
        diagnostics,
    }
}

/// Runs the full algorithm from the spectral start.
pub fn fit(data: &MultiStudyDataset, counts: &FactorCounts, config: &FitConfig) -> Result<FitResult> {
    let (params, state) = initialize(data, counts, config)?;
    fit_from(data, params, state, config)
}

/// Runs the algorithm from a given starting point.
pub fn fit_from(
    data: &MultiStudyDataset,
    mut params: ModelParameters,
    mut state: VariationalState,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    if let Some(nu) = config.nu_fixed {
        params.nu = nu;
        state.phi = phi_all(&params, &state, data)?;
    }
    let initial = elbo(&params, &state, data)?;
    let mut diagnostics = FitDiagnostics {
        initial_elbo: initial,
        elbo_decreases: 0,
        nu_searched: config.nu_fixed.is_none(),
    };
    let mut trace = Vec::new();
    let mut prev = initial;
    let mut converged = false;
    for t in 1..=config.max_iter {
        // state.phi still holds the weights of iterate t-1.
        state = e_step(&params, &state, data)?;
        for s in 0..data.n_studies() {
            params.mu[s] = m_step_mu(&params, &state, data, s);
        }
        params.a = m_step_a(&params, &state, data)?;
        for s in 0..data.n_studies() {
            params.b[s] = m_step_b(&params, &state, data, s)?;
        }
        for s in 0..data.n_studies() {
            params.lambda[s] = m_step_lambda(&params, &state, data, s, config.lambda_floor);
        }
        if config.nu_fixed.is_none() {
            params.nu = m_step_nu(&params, &state, data, &config.nu_grid)?;
        }
        state.phi = phi_all(&params, &state, data)?;
        let current = elbo(&params, &state, data)?;
        if !current.is_finite() {
            return Err(Error::NonFinite);
        }
        trace.push(current);
        if current < prev {
            diagnostics.elbo_decreases += 1;
            debug!("iteration {t}: lower bound decreased from {prev} to {current}");
        }
        if ((current - prev) / prev.abs()).abs() < config.eps {
            converged = true;
            break;
        }
        prev = current;
    }
    Ok(package(params, state, trace, converged, diagnostics))
}
