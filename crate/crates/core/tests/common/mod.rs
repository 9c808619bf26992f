//! Test-side oracles shared by the integration suites. Everything here is
//! written independently of the library's fast paths: naive loops, dense
//! Kronecker systems and finite differences.

#![allow(dead_code)]

use multirfm::{Matrix, ModelParameters, MultiStudyDataset, VariationalState, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct Instance {
    pub data: MultiStudyDataset,
    pub params: ModelParameters,
    pub state: VariationalState,
}

fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Symmetric positive definite with eigenvalues in (0, 1).
fn random_cov(rng: &mut ChaCha8Rng, k: usize) -> Matrix {
    let g = normal_matrix(rng, k, k);
    let m = &g * g.transpose() * 0.5 + Matrix::identity(k, k);
    let inv = m.try_inverse().expect("spd");
    (&inv + inv.transpose()) * 0.5
}

/// A random problem with `p <= max_p`, `q <= max_q`, up to three studies and
/// arbitrary (not fitted) parameters and variational state. `phi` is drawn
/// independently in `[1, 4]`, as a frozen weight would be.
pub fn random_instance(seed: u64, max_p: usize, max_q: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_studies = rng.random_range(1..=3);
    let q = rng.random_range(1..=max_q);
    let q_s: Vec<usize> = (0..n_studies).map(|_| rng.random_range(1..=2)).collect();
    let min_p = q + q_s.iter().sum::<usize>() + 2;
    let p = rng.random_range(min_p.min(max_p)..=max_p.max(min_p));
    let n: Vec<usize> = q_s.iter().map(|qs| q + qs + rng.random_range(1..=6)).collect();

    let studies: Vec<Matrix> = n.iter().map(|&ns| normal_matrix(&mut rng, ns, p) * 2.0).collect();
    let params = ModelParameters {
        mu: (0..n_studies).map(|_| normal_matrix(&mut rng, p, 1).column(0).into_owned()).collect(),
        a: normal_matrix(&mut rng, p, q),
        b: q_s.iter().map(|&k| normal_matrix(&mut rng, p, k)).collect(),
        lambda: (0..n_studies)
            .map(|_| Vector::from_fn(p, |_, _| rng.random_range(0.5..2.0)))
            .collect(),
        nu: rng.random_range(2.5..10.0),
    };
    let mut state = VariationalState {
        m_f: Vec::new(),
        s_f: Vec::new(),
        m_h: Vec::new(),
        s_h: Vec::new(),
        phi: Vec::new(),
    };
    for s in 0..n_studies {
        state.m_f.push(normal_matrix(&mut rng, n[s], q));
        state.m_h.push(normal_matrix(&mut rng, n[s], q_s[s]));
        state.s_f.push((0..n[s]).map(|_| random_cov(&mut rng, q)).collect());
        state.s_h.push((0..n[s]).map(|_| random_cov(&mut rng, q_s[s])).collect());
        state.phi.push(Vector::from_fn(n[s], |_, _| rng.random_range(1.0..4.0)));
    }
    Instance {
        data: MultiStudyDataset::new(studies).unwrap(),
        params,
        state,
    }
}

pub fn rel_err(x: &Matrix, y: &Matrix) -> f64 {
    (x - y).norm() / y.norm().max(f64::MIN_POSITIVE)
}

/// The shared-loading update as one dense `(pq) x (pq)`
/// system of Kronecker products summed over all observations.
pub fn kronecker_a(inst: &Instance) -> Matrix {
    let Instance { data, params, state } = inst;
    let (p, q) = params.a.shape();
    let mut lhs = Matrix::zeros(p * q, p * q);
    let mut rhs = Vector::zeros(p * q);
    for s in 0..data.n_studies() {
        let inv_lambda = Matrix::from_diagonal(&params.lambda[s].map(|v| 1.0 / v));
        let left = Matrix::identity(q, q).kronecker(&inv_lambda);
        for i in 0..data.n_obs(s) {
            let phi = state.phi[s][i];
            let m = state.m_f[s].row(i).transpose();
            let mm = &m * m.transpose() + &state.s_f[s][i];
            lhs += &left * mm.kronecker(&Matrix::identity(p, p)) / phi;
            let x_tilde = data.study(s).row(i).transpose()
                - &params.mu[s]
                - &params.b[s] * state.m_h[s].row(i).transpose();
            let outer = &inv_lambda * x_tilde * m.transpose();
            rhs += Vector::from_column_slice(outer.as_slice()) / phi;
        }
    }
    let vec_a = lhs.lu().solve(&rhs).expect("nonsingular Kronecker system");
    Matrix::from_column_slice(p, q, vec_a.as_slice())
}

/// Study-loading update from explicitly accumulated normal equations.
pub fn normal_equations_b(inst: &Instance, s: usize) -> Matrix {
    let Instance { data, params, state } = inst;
    let (p, k) = params.b[s].shape();
    let mut cross = Matrix::zeros(p, k);
    let mut gram = Matrix::zeros(k, k);
    for i in 0..data.n_obs(s) {
        let w = 1.0 / state.phi[s][i];
        let m = state.m_h[s].row(i).transpose();
        let x_breve = data.study(s).row(i).transpose()
            - &params.mu[s]
            - &params.a * state.m_f[s].row(i).transpose();
        cross += x_breve * m.transpose() * w;
        gram += (&m * m.transpose() + &state.s_h[s][i]) * w;
    }
    cross * gram.try_inverse().expect("invertible gram")
}

/// The lower bound with every `phi_si` in the log term replaced by its
/// first-order surrogate around the frozen `phi0_si`, constants dropped.
/// Written with plain loops.
pub fn frozen_surrogate(
    params: &ModelParameters,
    state: &VariationalState,
    data: &MultiStudyDataset,
    phi0: &[Vector],
) -> f64 {
    let p = data.n_vars();
    let nu = params.nu;
    let mut total = 0.0;
    for s in 0..data.n_studies() {
        let lam = &params.lambda[s];
        let b = &params.b[s];
        total -= 0.5 * data.n_obs(s) as f64 * lam.iter().map(|v| v.ln()).sum::<f64>();
        for i in 0..data.n_obs(s) {
            let mf = state.m_f[s].row(i).transpose();
            let mh = state.m_h[s].row(i).transpose();
            let sf = &state.s_f[s][i];
            let sh = &state.s_h[s][i];
            let mut quad = 0.0;
            for j in 0..p {
                let mut y = data.study(s)[(i, j)] - params.mu[s][j];
                for k in 0..mf.len() {
                    y -= params.a[(j, k)] * mf[k];
                }
                for k in 0..mh.len() {
                    y -= b[(j, k)] * mh[k];
                }
                let mut tf = 0.0;
                for k in 0..mf.len() {
                    for l in 0..mf.len() {
                        tf += params.a[(j, k)] * sf[(k, l)] * params.a[(j, l)];
                    }
                }
                let mut th = 0.0;
                for k in 0..mh.len() {
                    for l in 0..mh.len() {
                        th += b[(j, k)] * sh[(k, l)] * b[(j, l)];
                    }
                }
                quad += (y * y + tf + th) / lam[j];
            }
            let phi = 1.0 + quad / nu;
            total -= 0.5 * (nu + p as f64) * phi / phi0[s][i];
            total -= 0.5 * (mf.norm_squared() + sf.trace() + mh.norm_squared() + sh.trace());
            total += 0.5 * (sf.determinant().ln() + sh.determinant().ln());
        }
    }
    total
}

/// Central-difference gradient of `f` over the entries reachable through
/// `get`/`set`, with a step relative to each entry's magnitude.
pub fn fd_gradient<T: Clone>(
    base: &T,
    len: usize,
    get: impl Fn(&T, usize) -> f64,
    set: impl Fn(&mut T, usize, f64),
    f: impl Fn(&T) -> f64,
) -> Vec<f64> {
    (0..len)
        .map(|k| {
            let x = get(base, k);
            let h = 1e-6 * x.abs().max(1.0);
            let mut up = base.clone();
            set(&mut up, k, x + h);
            let mut down = base.clone();
            set(&mut down, k, x - h);
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative error of the row-wise shared-loading update against the
/// Kronecker system, per instance.
pub fn a_oracle_errors(seeds: std::ops::Range<u64>) -> Vec<f64> {
    seeds
        .map(|seed| {
            let inst = random_instance(seed, 12, 3);
            let fast = multirfm::vem::m_step_a(&inst.params, &inst.state, &inst.data).unwrap();
            rel_err(&fast, &kronecker_a(&inst))
        })
        .collect()
}

/// Worst relative error over studies of the study-loading update against
/// the normal equations, per instance.
pub fn b_oracle_errors(seeds: std::ops::Range<u64>) -> Vec<f64> {
    seeds
        .map(|seed| {
            let inst = random_instance(seed, 12, 3);
            (0..inst.data.n_studies())
                .map(|s| {
                    let fast = multirfm::vem::m_step_b(&inst.params, &inst.state, &inst.data, s).unwrap();
                    rel_err(&fast, &normal_equations_b(&inst, s))
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

#[derive(Clone)]
pub struct Point {
    pub params: ModelParameters,
    pub state: VariationalState,
}

/// Addresses of one block's free entries inside a [`Point`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Mf,
    Sf,
    Mh,
    Sh,
    Mu,
    A,
    B,
    Lambda,
}

impl Block {
    pub const ALL: [Block; 8] = [
        Block::Mf,
        Block::Sf,
        Block::Mh,
        Block::Sh,
        Block::Mu,
        Block::A,
        Block::B,
        Block::Lambda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::Mf => "m_f",
            Block::Sf => "S_f",
            Block::Mh => "m_h",
            Block::Sh => "S_h",
            Block::Mu => "mu",
            Block::A => "A",
            Block::B => "B",
            Block::Lambda => "Lambda",
        }
    }
}

/// `(study, row, col, partner)` addresses; covariance entries carry their
/// mirrored position so a perturbation keeps the matrix symmetric.
fn addresses(block: Block, pt: &Point) -> Vec<(usize, usize, usize, Option<usize>)> {
    let mut out = Vec::new();
    let st = &pt.state;
    let pr = &pt.params;
    match block {
        Block::Mf | Block::Mh => {
            let m = if block == Block::Mf { &st.m_f } else { &st.m_h };
            for (s, ms) in m.iter().enumerate() {
                for i in 0..ms.nrows() {
                    for k in 0..ms.ncols() {
                        out.push((s, i, k, None));
                    }
                }
            }
        }
        Block::Sf | Block::Sh => {
            let c = if block == Block::Sf { &st.s_f } else { &st.s_h };
            for (s, cs) in c.iter().enumerate() {
                for (i, m) in cs.iter().enumerate() {
                    for a in 0..m.nrows() {
                        for b in a..m.ncols() {
                            out.push((s, i, a * m.ncols() + b, Some(b * m.ncols() + a)));
                        }
                    }
                }
            }
        }
        Block::Mu | Block::Lambda => {
            for s in 0..pr.n_studies() {
                for j in 0..pr.n_vars() {
                    out.push((s, j, 0, None));
                }
            }
        }
        Block::A => {
            for j in 0..pr.a.nrows() {
                for k in 0..pr.a.ncols() {
                    out.push((0, j, k, None));
                }
            }
        }
        Block::B => {
            for (s, b) in pr.b.iter().enumerate() {
                for j in 0..b.nrows() {
                    for k in 0..b.ncols() {
                        out.push((s, j, k, None));
                    }
                }
            }
        }
    }
    out
}

fn entry(block: Block, pt: &Point, (s, i, k, _): (usize, usize, usize, Option<usize>)) -> f64 {
    match block {
        Block::Mf => pt.state.m_f[s][(i, k)],
        Block::Mh => pt.state.m_h[s][(i, k)],
        Block::Sf => pt.state.s_f[s][i].as_slice()[k],
        Block::Sh => pt.state.s_h[s][i].as_slice()[k],
        Block::Mu => pt.params.mu[s][i],
        Block::Lambda => pt.params.lambda[s][i],
        Block::A => pt.params.a[(i, k)],
        Block::B => pt.params.b[s][(i, k)],
    }
}

fn set_entry(block: Block, pt: &mut Point, (s, i, k, mirror): (usize, usize, usize, Option<usize>), v: f64) {
    match block {
        Block::Mf => pt.state.m_f[s][(i, k)] = v,
        Block::Mh => pt.state.m_h[s][(i, k)] = v,
        Block::Sf | Block::Sh => {
            let m = if block == Block::Sf {
                &mut pt.state.s_f[s][i]
            } else {
                &mut pt.state.s_h[s][i]
            };
            m.as_mut_slice()[k] = v;
            if let Some(j) = mirror {
                m.as_mut_slice()[j] = v;
            }
        }
        Block::Mu => pt.params.mu[s][i] = v,
        Block::Lambda => pt.params.lambda[s][i] = v,
        Block::A => pt.params.a[(i, k)] = v,
        Block::B => pt.params.b[s][(i, k)] = v,
    }
}

/// Finite-difference gradient of the frozen surrogate over one block.
pub fn block_gradient(block: Block, pt: &Point, data: &MultiStudyDataset, phi0: &[Vector]) -> Vec<f64> {
    let addr = addresses(block, pt);
    fd_gradient(
        pt,
        addr.len(),
        |p, k| entry(block, p, addr[k]),
        |p, k, v| set_entry(block, p, addr[k], v),
        |p| frozen_surrogate(&p.params, &p.state, data, phi0),
    )
}

/// For each block: gradient norm at the block's update output divided by
/// the norm at its input, following one E-step and the M-step sequence
/// `mu, A, B, Lambda` with `phi` frozen at the instance's values.
pub fn stationarity_ratios(seed: u64) -> Vec<(Block, f64)> {
    let inst = random_instance(seed, 10, 3);
    let data = &inst.data;
    let phi0 = inst.state.phi.clone();
    let start = Point {
        params: inst.params.clone(),
        state: inst.state.clone(),
    };
    let updated = multirfm::vem::e_step(&start.params, &start.state, data).unwrap();
    let ratio = |block, before: &Point, after: &Point| {
        let g0 = norm(&block_gradient(block, before, data, &phi0));
        let g1 = norm(&block_gradient(block, after, data, &phi0));
        g1 / g0
    };
    let mut out = Vec::new();

    // the shared block sees the old m_h, the specific block the new m_f
    let mut half = start.clone();
    half.state.m_f = updated.m_f.clone();
    half.state.s_f = updated.s_f.clone();
    out.push((Block::Mf, ratio(Block::Mf, &start, &half)));
    out.push((Block::Sf, ratio(Block::Sf, &start, &half)));
    let full = Point {
        params: start.params.clone(),
        state: updated,
    };
    out.push((Block::Mh, ratio(Block::Mh, &half, &full)));
    out.push((Block::Sh, ratio(Block::Sh, &half, &full)));

    let mut cur = full;
    let mut next = cur.clone();
    for s in 0..data.n_studies() {
        next.params.mu[s] = multirfm::vem::m_step_mu(&cur.params, &cur.state, data, s);
    }
    out.push((Block::Mu, ratio(Block::Mu, &cur, &next)));
    cur = next.clone();
    next.params.a = multirfm::vem::m_step_a(&cur.params, &cur.state, data).unwrap();
    out.push((Block::A, ratio(Block::A, &cur, &next)));
    cur = next.clone();
    for s in 0..data.n_studies() {
        next.params.b[s] = multirfm::vem::m_step_b(&cur.params, &cur.state, data, s).unwrap();
    }
    out.push((Block::B, ratio(Block::B, &cur, &next)));
    cur = next.clone();
    for s in 0..data.n_studies() {
        next.params.lambda[s] = multirfm::vem::m_step_lambda(&cur.params, &cur.state, data, s, 1e-8);
    }
    out.push((Block::Lambda, ratio(Block::Lambda, &cur, &next)));
    out
}

/// Small Gaussian data set drawn from the model itself.
pub fn small_simulated(seed: u64) -> (MultiStudyDataset, multirfm::simulation::GroundTruth) {
    let spec = multirfm::simulation::SimulationSpec {
        n: vec![30, 40],
        p: 20,
        q: 2,
        q_s: vec![1, 2],
        rho_a: 3.0,
        rho_b: 2.0,
        error_law: multirfm::simulation::ErrorLaw::Gaussian,
        seed,
    };
    multirfm::simulation::simulate_dataset(&spec).unwrap()
}

/// Worst relative deviation of one E-step's shared covariances from the
/// Gaussian-model update when `nu` is pinned at `1e6`.
pub fn gaussian_limit_error(seed: u64) -> f64 {
    let (data, truth) = small_simulated(seed);
    let config = multirfm::FitConfig {
        nu_fixed: Some(1e6),
        ..Default::default()
    };
    let (mut params, mut state) = multirfm::vem::initialize(&data, &truth.params0.counts(), &config).unwrap();
    params.nu = 1e6;
    state.phi = multirfm::objective::phi_all(&params, &state, &data).unwrap();
    let out = multirfm::vem::e_step(&params, &state, &data).unwrap();
    let mut worst: f64 = 0.0;
    for s in 0..data.n_studies() {
        let inv_lambda = Matrix::from_diagonal(&params.lambda[s].map(|v| 1.0 / v));
        let q = params.a.ncols();
        let gauss = (params.a.transpose() * inv_lambda * &params.a + Matrix::identity(q, q))
            .try_inverse()
            .unwrap();
        for sf in &out.s_f[s] {
            worst = worst.max(rel_err(sf, &gauss));
        }
    }
    worst
}
