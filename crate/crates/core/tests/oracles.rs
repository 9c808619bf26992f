mod common;

use common::*;
use multirfm::evaluation::{oos_factor_scores, prediction_error, trace_stat};
use multirfm::objective::phi_all;
use multirfm::vem::{self, e_step, initialize, m_step_a, m_step_b, m_step_lambda, m_step_mu, m_step_nu};
use multirfm::{FactorCounts, FitConfig, Matrix, ModelParameters, MultiStudyDataset, VariationalState, Vector};

fn one_study(x: Matrix, a: Matrix, b: Matrix, lambda: Vector, nu: f64) -> (MultiStudyDataset, ModelParameters) {
    let p = x.ncols();
    let params = ModelParameters {
        mu: vec![Vector::zeros(p)],
        a,
        b: vec![b],
        lambda: vec![lambda],
        nu,
    };
    (MultiStudyDataset::new(vec![x]).unwrap(), params)
}

fn state_for(n: usize, q: usize, qs: usize, phi: &[f64]) -> VariationalState {
    VariationalState {
        m_f: vec![Matrix::zeros(n, q)],
        s_f: vec![vec![Matrix::zeros(q, q); n]],
        m_h: vec![Matrix::zeros(n, qs)],
        s_h: vec![vec![Matrix::zeros(qs, qs); n]],
        phi: vec![Vector::from_column_slice(phi)],
    }
}

#[test]
fn shared_loadings_match_kronecker_system() {
    let errs = a_oracle_errors(0..50);
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    assert!(worst <= 1e-8, "worst {worst:e}");
}

#[test]
fn study_loadings_match_normal_equations() {
    let errs = b_oracle_errors(100..150);
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    assert!(worst <= 1e-10, "worst {worst:e}");
}

#[test]
fn every_block_update_is_a_surrogate_stationary_point() {
    for seed in 0..20 {
        for (block, r) in stationarity_ratios(1000 + seed) {
            assert!(r <= 1e-5, "seed {seed} block {} ratio {r:e}", block.name());
        }
    }
}

#[test]
fn gaussian_limit_reproduces_factor_analysis_covariance() {
    for seed in 0..5 {
        let err = gaussian_limit_error(seed);
        assert!(err <= 1e-4, "seed {seed}: {err:e}");
    }
}

#[test]
fn weighted_mean_by_hand() {
    let x = Matrix::from_column_slice(2, 1, &[2.0, 10.0]);
    let (data, params) = one_study(x, Matrix::zeros(1, 1), Matrix::zeros(1, 1), Vector::from_element(1, 1.0), 5.0);
    let state = state_for(2, 1, 1, &[1.0, 3.0]);
    let mu = m_step_mu(&params, &state, &data, 0);
    assert!((mu[0] - 4.0).abs() < 1e-14);
}

#[test]
fn single_row_mean_subtracts_factor_parts() {
    let x = Matrix::from_row_slice(1, 2, &[1.0, 2.0]);
    let a = Matrix::from_column_slice(2, 1, &[0.5, -1.0]);
    let b = Matrix::from_column_slice(2, 1, &[2.0, 1.0]);
    let (data, params) = one_study(x, a, b, Vector::from_element(2, 1.0), 5.0);
    let mut state = state_for(1, 1, 1, &[2.5]);
    state.m_f[0][(0, 0)] = 3.0;
    state.m_h[0][(0, 0)] = -1.0;
    let mu = m_step_mu(&params, &state, &data, 0);
    // x - 3 a + b
    assert!((mu - Vector::from_column_slice(&[1.0 - 1.5 + 2.0, 2.0 + 3.0 + 1.0])).norm() < 1e-14);
}

#[test]
fn scalar_scale_by_hand() {
    let x = Matrix::from_column_slice(2, 1, &[1.0, 3.0]);
    let (data, params) = one_study(x, Matrix::zeros(1, 1), Matrix::zeros(1, 1), Vector::from_element(1, 1.0), 2.0);
    let state = state_for(2, 1, 1, &[2.0, 2.0]);
    let lam = m_step_lambda(&params, &state, &data, 0, 1e-8);
    assert!((lam[0] - 3.75).abs() < 1e-14);
}

#[test]
fn exact_fit_scale_hits_floor() {
    let x = Matrix::from_column_slice(3, 1, &[0.0, 0.0, 0.0]);
    let (data, params) = one_study(x, Matrix::zeros(1, 1), Matrix::zeros(1, 1), Vector::from_element(1, 1.0), 4.0);
    let state = state_for(3, 1, 1, &[1.0, 1.0, 1.0]);
    assert_eq!(m_step_lambda(&params, &state, &data, 0, 1e-8)[0], 1e-8);
}

#[test]
fn scalar_shared_loading_by_hand() {
    let x = Matrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]);
    let (data, mut params) =
        one_study(x.clone(), Matrix::zeros(1, 1), Matrix::zeros(1, 1), Vector::from_element(1, 0.7), 4.0);
    params.mu[0][0] = 0.2;
    let mut state = state_for(3, 1, 1, &[1.0, 2.0, 4.0]);
    let m = [0.3, -1.1, 2.0];
    let s = [0.5, 0.2, 0.9];
    for i in 0..3 {
        state.m_f[0][(i, 0)] = m[i];
        state.s_f[0][i][(0, 0)] = s[i];
    }
    let phi = [1.0, 2.0, 4.0];
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..3 {
        num += (x[(i, 0)] - 0.2) * m[i] / (phi[i] * 0.7);
        den += (m[i] * m[i] + s[i]) / (phi[i] * 0.7);
    }
    let a = m_step_a(&params, &state, &data).unwrap();
    assert!((a[(0, 0)] - num / den).abs() < 1e-14);
}

#[test]
fn unit_weights_reduce_loadings_to_least_squares() {
    let inst = random_instance(7, 9, 2);
    let x = inst.data.study(0).clone();
    let n = x.nrows();
    let (q, qs) = (inst.params.a.ncols(), inst.params.b[0].ncols());
    let (data, mut params) = one_study(
        x.clone(),
        inst.params.a.clone(),
        inst.params.b[0].clone(),
        Vector::from_element(x.ncols(), 1.0),
        5.0,
    );
    params.mu[0] = inst.params.mu[0].clone();
    let mut state = state_for(n, q, qs, &vec![1.0; n]);
    state.m_f[0] = inst.state.m_f[0].clone();
    state.m_h[0] = inst.state.m_h[0].clone();
    let centered = Matrix::from_fn(n, x.ncols(), |i, j| x[(i, j)] - params.mu[0][j]);

    let target_a = &centered - &state.m_h[0] * params.b[0].transpose();
    let ols_a = state.m_f[0].clone().svd(true, true).solve(&target_a, 1e-14).unwrap().transpose();
    assert!(rel_err(&m_step_a(&params, &state, &data).unwrap(), &ols_a) < 1e-10);

    let target_b = &centered - &state.m_f[0] * params.a.transpose();
    let ols_b = state.m_h[0].clone().svd(true, true).solve(&target_b, 1e-14).unwrap().transpose();
    assert!(rel_err(&m_step_b(&params, &state, &data, 0).unwrap(), &ols_b) < 1e-10);
}

#[test]
fn zero_scores_with_identity_gram_give_zero_study_loadings() {
    let inst = random_instance(3, 8, 2);
    let mut state = inst.state.clone();
    for s in 0..state.n_studies() {
        state.m_h[s].fill(0.0);
        let k = state.m_h[s].ncols();
        for c in state.s_h[s].iter_mut() {
            *c = Matrix::identity(k, k);
        }
    }
    for s in 0..state.n_studies() {
        assert!(m_step_b(&inst.params, &state, &inst.data, s).unwrap().norm() == 0.0);
    }
}

#[test]
fn zero_shared_loadings_leave_prior_posterior() {
    let mut inst = random_instance(11, 8, 3);
    inst.params.a.fill(0.0);
    let out = e_step(&inst.params, &inst.state, &inst.data).unwrap();
    let q = inst.params.a.ncols();
    for s in 0..out.n_studies() {
        assert_eq!(out.m_f[s].norm(), 0.0);
        for c in &out.s_f[s] {
            assert!((c - Matrix::identity(q, q)).norm() < 1e-15);
        }
    }
}

#[test]
fn vanishing_information_gives_prior_posterior() {
    let mut inst = random_instance(12, 8, 3);
    for l in inst.params.lambda.iter_mut() {
        l.fill(1e12);
    }
    let out = e_step(&inst.params, &inst.state, &inst.data).unwrap();
    let q = inst.params.a.ncols();
    for s in 0..out.n_studies() {
        assert!(out.m_f[s].amax() < 1e-6);
        assert!(out.m_h[s].amax() < 1e-6);
        for c in &out.s_f[s] {
            assert!((c - Matrix::identity(q, q)).amax() < 1e-6);
        }
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > 1e-11 {
        if fa > fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn scalar_e_step_matches_numerical_maximizer() {
    let x = Matrix::from_row_slice(1, 2, &[1.3, -0.4]);
    let a = Matrix::from_column_slice(2, 1, &[0.8, 0.6]);
    let b = Matrix::from_column_slice(2, 1, &[-0.5, 1.2]);
    let (data, mut params) = one_study(x, a, b, Vector::from_column_slice(&[0.9, 1.4]), 3.0);
    params.mu[0] = Vector::from_column_slice(&[0.1, -0.2]);
    let mut state = state_for(1, 1, 1, &[1.7]);
    state.m_h[0][(0, 0)] = 0.4;
    state.s_f[0][0][(0, 0)] = 0.5;
    state.s_h[0][0][(0, 0)] = 0.5;
    let phi0 = state.phi.clone();
    let out = e_step(&params, &state, &data).unwrap();

    let mut probe = state.clone();
    probe.s_f = out.s_f.clone();
    let mf = golden_max(
        |v| {
            let mut st = probe.clone();
            st.m_f[0][(0, 0)] = v;
            frozen_surrogate(&params, &st, &data, &phi0)
        },
        -20.0,
        20.0,
    );
    assert!((mf - out.m_f[0][(0, 0)]).abs() < 1e-6, "{mf} vs {}", out.m_f[0][(0, 0)]);

    probe.m_f = out.m_f.clone();
    probe.s_h = out.s_h.clone();
    let mh = golden_max(
        |v| {
            let mut st = probe.clone();
            st.m_h[0][(0, 0)] = v;
            frozen_surrogate(&params, &st, &data, &phi0)
        },
        -20.0,
        20.0,
    );
    assert!((mh - out.m_h[0][(0, 0)]).abs() < 1e-6, "{mh} vs {}", out.m_h[0][(0, 0)]);

    let sf = golden_max(
        |v| {
            let mut st = probe.clone();
            st.s_f[0][0][(0, 0)] = v;
            frozen_surrogate(&params, &st, &data, &phi0)
        },
        1e-6,
        1.0,
    );
    assert!((sf - out.s_f[0][0][(0, 0)]).abs() < 1e-6);
}

#[test]
fn nu_search_takes_the_better_of_two() {
    let (data, truth) = small_simulated(4);
    let config = FitConfig::default();
    let (params, state) = initialize(&data, &truth.params0.counts(), &config).unwrap();
    let value = |nu: f64| {
        let mut p = params.clone();
        p.nu = nu;
        let mut st = state.clone();
        st.phi = phi_all(&p, &st, &data).unwrap();
        multirfm::objective::elbo(&p, &st, &data).unwrap()
    };
    let better = if value(3.0) > value(50.0) { 3.0 } else { 50.0 };
    assert_eq!(m_step_nu(&params, &state, &data, &[3.0, 50.0]).unwrap(), better);
}

#[test]
fn noiseless_data_is_reconstructed() {
    let (_, truth) = small_simulated(21);
    let data = MultiStudyDataset::new(
        (0..2)
            .map(|s| {
                let p0 = &truth.params0;
                let mut x = &truth.f[s] * p0.a.transpose() + &truth.h[s] * p0.b[s].transpose();
                for mut row in x.row_iter_mut() {
                    row += p0.mu[s].transpose();
                }
                x
            })
            .collect(),
    )
    .unwrap();
    let fit = vem::fit(&data, &truth.params0.counts(), &FitConfig::default()).unwrap();
    for s in 0..2 {
        let err = (fit.reconstruction(s) - data.study(s)).amax();
        assert!(err < 1e-3, "study {s}: {err:e}");
    }
}

#[test]
fn constant_data_starts_at_the_floor() {
    let data = MultiStudyDataset::new(vec![Matrix::from_element(6, 5, 2.5), Matrix::from_element(7, 5, -1.0)]).unwrap();
    let config = FitConfig::default();
    let (params, _) = initialize(&data, &FactorCounts::new(1, vec![1, 1]), &config).unwrap();
    for l in &params.lambda {
        assert!(l.iter().all(|&v| v == config.lambda_floor));
    }
    assert_eq!(params.a.norm(), 0.0);
    assert_eq!(params.mu[0], Vector::from_element(5, 2.5));
}

#[test]
fn noiseless_rank_q_start_spans_the_truth() {
    let (_, truth) = small_simulated(8);
    let p0 = &truth.params0;
    let data = MultiStudyDataset::new(
        (0..2)
            .map(|s| {
                let mut x = &truth.f[s] * p0.a.transpose();
                for mut row in x.row_iter_mut() {
                    row += p0.mu[s].transpose();
                }
                x
            })
            .collect(),
    )
    .unwrap();
    let (params, _) = initialize(&data, &FactorCounts::new(2, vec![0, 0]), &FitConfig::default()).unwrap();
    assert!((trace_stat(&params.a, &p0.a).unwrap() - 1.0).abs() < 1e-8);
}

#[test]
fn projection_scores_are_least_squares_solutions() {
    let inst = random_instance(31, 12, 3);
    let x = inst.data.study(0).row(0).transpose();
    let (f, h) = oos_factor_scores(&inst.params, &x, 0).unwrap();
    let centered = &x - &inst.params.mu[0];
    let ls = |l: &Matrix| l.clone().svd(true, true).solve(&centered, 1e-14).unwrap();
    assert!((f - ls(&inst.params.a)).norm() < 1e-10);
    assert!((h - ls(&inst.params.b[0])).norm() < 1e-10);
}

#[test]
fn prediction_error_matches_naive_loops() {
    let inst = random_instance(32, 12, 3);
    let pe = prediction_error(&inst.params, &inst.data).unwrap();
    for s in 0..inst.data.n_studies() {
        let x = inst.data.study(s);
        let (n, p) = x.shape();
        let mut per_var = vec![0.0; p];
        for i in 0..n {
            let row = x.row(i).transpose();
            let (f, h) = oos_factor_scores(&inst.params, &row, s).unwrap();
            let fitted = &inst.params.mu[s] + &inst.params.a * f + &inst.params.b[s] * h;
            for j in 0..p {
                per_var[j] += (row[j] - fitted[j]).powi(2);
            }
        }
        let rms: Vec<f64> = per_var.iter().map(|v| (v / n as f64).sqrt()).collect();
        let overall = rms.iter().sum::<f64>() / p as f64;
        for j in 0..p {
            assert!((pe[s].per_variable[j] - rms[j]).abs() < 1e-10);
        }
        assert!((pe[s].overall - overall).abs() < 1e-10);
    }
}
