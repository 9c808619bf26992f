//! Seeded data generation for the simulation designs.
//!
//! Every random block is drawn from its own ChaCha20 stream whose key is
//! derived from `(master seed, block tag, replicate, study)`, so any
//! replicate can be regenerated on its own and replicates can be produced
//! in parallel without changing a single bit.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, Pareto, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{leading_sign, sorted_svd};
use crate::types::{FactorCounts, Matrix, ModelParameters, MultiStudyDataset, Vector};

/// Distribution of the idiosyncratic errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ErrorLaw {
    /// Rows from `MVT_p(nu, 0, I)`.
    StudentT { nu: f64 },
    /// Entrywise standard normal.
    Gaussian,
    /// Entrywise `Exp(1) - 1`.
    CenteredExponential,
    /// Entrywise `z - alpha/(alpha-1)` with `z` Pareto(scale 1, shape alpha).
    CenteredPareto { alpha: f64 },
}

impl ErrorLaw {
    pub fn name(&self) -> &'static str {
        match self {
            ErrorLaw::StudentT { .. } => "student_t",
            ErrorLaw::Gaussian => "gaussian",
            ErrorLaw::CenteredExponential => "centered_exponential",
            ErrorLaw::CenteredPareto { .. } => "centered_pareto",
        }
    }

    /// The law's shape parameter (`nu` or `alpha`), if it has one.
    pub fn parameter(&self) -> Option<f64> {
        match *self {
            ErrorLaw::StudentT { nu } => Some(nu),
            ErrorLaw::CenteredPareto { alpha } => Some(alpha),
            _ => None,
        }
    }

    pub fn from_parts(name: &str, parameter: Option<f64>) -> Result<Self> {
        let need = |what: &str| {
            parameter.ok_or_else(|| Error::InvalidSpec(format!("{name} needs a {what}")))
        };
        match name {
            "student_t" | "t" => Ok(ErrorLaw::StudentT { nu: need("nu")? }),
            "gaussian" | "gauss" => Ok(ErrorLaw::Gaussian),
            "centered_exponential" | "exp" => Ok(ErrorLaw::CenteredExponential),
            "centered_pareto" | "pareto" => Ok(ErrorLaw::CenteredPareto { alpha: need("alpha")? }),
            other => Err(Error::InvalidSpec(format!("unknown error law {other}"))),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ErrorLaw::StudentT { nu } if !(nu > 0.0) || !nu.is_finite() => {
                Err(Error::InvalidSpec(format!("student_t needs nu > 0, got {nu}")))
            }
            ErrorLaw::CenteredPareto { alpha } if !(alpha > 1.0) || !alpha.is_finite() => {
                Err(Error::InvalidSpec(format!("centered_pareto needs alpha > 1, got {alpha}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    /// Observations per study; its length is the number of studies.
    pub n: Vec<usize>,
    pub p: usize,
    pub q: usize,
    pub q_s: Vec<usize>,
    pub rho_a: f64,
    pub rho_b: f64,
    pub error_law: ErrorLaw,
    pub seed: u64,
}

impl SimulationSpec {
    pub fn n_studies(&self) -> usize {
        self.n.len()
    }

    pub fn counts(&self) -> FactorCounts {
        FactorCounts::new(self.q, self.q_s.clone())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n.is_empty() {
            return Err(Error::InvalidSpec("no studies".into()));
        }
        if self.n.iter().any(|&n| n == 0) {
            return Err(Error::InvalidSpec("every study needs at least one row".into()));
        }
        self.counts()
            .validate(self.p, self.n.len())
            .map_err(|e| Error::InvalidSpec(e.to_string()))?;
        if !(self.rho_a >= 0.0) || !(self.rho_b >= 0.0) {
            return Err(Error::InvalidSpec("signal strengths must be nonnegative".into()));
        }
        self.error_law.validate()
    }
}

/// True parameters and latent factors behind a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `Lambda_s = I`; `nu` is the t degrees of freedom, or infinity for
    /// the other error laws.
    pub params0: ModelParameters,
    pub f: Vec<Matrix>,
    pub h: Vec<Matrix>,
    /// False when the errors have no finite covariance (t with `nu <= 2`,
    /// Pareto with `alpha <= 2`).
    pub covariance_defined: bool,
}

const TAG_MU: u64 = 1;
const TAG_LOADINGS: u64 = 2;
const TAG_SHARED_FACTORS: u64 = 3;
const TAG_SPECIFIC_FACTORS: u64 = 4;
const TAG_ERRORS: u64 = 5;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for the block identified by `tags` under `seed`.
pub fn substream(seed: u64, tags: &[u64]) -> ChaCha20Rng {
    let mut key = [0u8; 32];
    let mut h = splitmix(seed);
    for &t in tags {
        h = splitmix(h ^ splitmix(t.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    for chunk in key.chunks_mut(8) {
        h = splitmix(h);
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha20Rng::from_seed(key)
}

fn standard_normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> Matrix {
    // Row-major fill keeps the draw order independent of storage layout.
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

/// `rho U L` from the SVD of a standard-normal `p x k` matrix, with the
/// leading entry of every column of `U` made positive.
fn scaled_left_factor(p: usize, k: usize, rho: f64, rng: &mut ChaCha20Rng) -> Matrix {
    if k == 0 {
        return Matrix::zeros(p, 0);
    }
    let raw = standard_normal_matrix(p, k, rng);
    let svd = sorted_svd(&raw);
    let mut out = svd.u.columns(0, k).into_owned();
    for c in 0..k {
        let sign = leading_sign(out.column(c), 1e-10);
        out.column_mut(c).scale_mut(sign * rho * svd.sigma[c]);
    }
    out
}

/// Shared loadings `A_0` and study loadings `B_s0`.
///
/// Study 1's block `(A_0, B_10)` is built jointly at strength `rho_a`, so
/// its Gram is diagonal and decreasing across all `q + q_1` columns; the
/// other studies get independent blocks at strength `rho_b`.
pub fn gen_loadings(spec: &SimulationSpec) -> Result<(Matrix, Vec<Matrix>)> {
    spec.validate()?;
    let (p, q) = (spec.p, spec.q);
    let mut rng = substream(spec.seed, &[TAG_LOADINGS, 0]);
    let joint = scaled_left_factor(p, q + spec.q_s[0], spec.rho_a, &mut rng);
    let a = joint.columns(0, q).into_owned();
    let mut b = vec![joint.columns(q, spec.q_s[0]).into_owned()];
    for s in 1..spec.n_studies() {
        let mut rng = substream(spec.seed, &[TAG_LOADINGS, s as u64]);
        b.push(scaled_left_factor(p, spec.q_s[s], spec.rho_b, &mut rng));
    }
    Ok((a, b))
}

fn sample_errors(law: ErrorLaw, n: usize, p: usize, rng: &mut ChaCha20Rng) -> Result<Matrix> {
    law.validate()?;
    let mut e = Matrix::zeros(n, p);
    match law {
        ErrorLaw::StudentT { nu } => {
            let chi = ChiSquared::new(nu).map_err(|e| Error::InvalidSpec(e.to_string()))?;
            for i in 0..n {
                for j in 0..p {
                    e[(i, j)] = StandardNormal.sample(rng);
                }
                let u: f64 = chi.sample(rng);
                let scale = (nu / u).sqrt();
                e.row_mut(i).scale_mut(scale);
            }
        }
        ErrorLaw::Gaussian => {
            for i in 0..n {
                for j in 0..p {
                    e[(i, j)] = StandardNormal.sample(rng);
                }
            }
        }
        ErrorLaw::CenteredExponential => {
            for i in 0..n {
                for j in 0..p {
                    let z: f64 = Exp1.sample(rng);
                    e[(i, j)] = z - 1.0;
                }
            }
        }
        ErrorLaw::CenteredPareto { alpha } => {
            let dist = Pareto::new(1.0, alpha).map_err(|e| Error::InvalidSpec(e.to_string()))?;
            let mean = alpha / (alpha - 1.0);
            for i in 0..n {
                for j in 0..p {
                    e[(i, j)] = dist.sample(rng) - mean;
                }
            }
        }
    }
    Ok(e)
}

/// `n x p` error matrix drawn under `seed`.
pub fn gen_errors(law: ErrorLaw, n: usize, p: usize, seed: u64) -> Result<Matrix> {
    sample_errors(law, n, p, &mut substream(seed, &[TAG_ERRORS]))
}

fn true_params(spec: &SimulationSpec) -> Result<ModelParameters> {
    let (a, b) = gen_loadings(spec)?;
    let mu = (0..spec.n_studies())
        .map(|s| {
            let mut rng = substream(spec.seed, &[TAG_MU, s as u64]);
            Vector::from_iterator(spec.p, (0..spec.p).map(|_| StandardNormal.sample(&mut rng)))
        })
        .collect();
    let nu = match spec.error_law {
        ErrorLaw::StudentT { nu } => nu,
        _ => f64::INFINITY,
    };
    Ok(ModelParameters {
        mu,
        a,
        b,
        lambda: vec![Vector::from_element(spec.p, 1.0); spec.n_studies()],
        nu,
    })
}

/// Replicate 0 of the design.
pub fn simulate_dataset(spec: &SimulationSpec) -> Result<(MultiStudyDataset, GroundTruth)> {
    simulate_replicate(spec, 0)
}

/// Replicate `rep`: means and loadings depend on the seed only, factors and
/// errors on `(seed, rep)`.
pub fn simulate_replicate(spec: &SimulationSpec, rep: u64) -> Result<(MultiStudyDataset, GroundTruth)> {
    spec.validate()?;
    let params0 = true_params(spec)?;
    let mut studies = Vec::with_capacity(spec.n_studies());
    let mut fs = Vec::with_capacity(spec.n_studies());
    let mut hs = Vec::with_capacity(spec.n_studies());
    for s in 0..spec.n_studies() {
        let n = spec.n[s];
        let f = standard_normal_matrix(n, spec.q, &mut substream(spec.seed, &[TAG_SHARED_FACTORS, rep, s as u64]));
        let h = standard_normal_matrix(
            n,
            spec.q_s[s],
            &mut substream(spec.seed, &[TAG_SPECIFIC_FACTORS, rep, s as u64]),
        );
        let e = sample_errors(
            spec.error_law,
            n,
            spec.p,
            &mut substream(spec.seed, &[TAG_ERRORS, rep, s as u64]),
        )?;
        let mut x = &f * params0.a.transpose() + &h * params0.b[s].transpose() + e;
        for mut row in x.row_iter_mut() {
            row += params0.mu[s].transpose();
        }
        studies.push(x);
        fs.push(f);
        hs.push(h);
    }
    let covariance_defined = match spec.error_law {
        ErrorLaw::StudentT { nu } => nu > 2.0,
        ErrorLaw::CenteredPareto { alpha } => alpha > 2.0,
        _ => true,
    };
    Ok((
        MultiStudyDataset::new(studies)?,
        GroundTruth {
            params0,
            f: fs,
            h: hs,
            covariance_defined,
        },
    ))
}

pub const SCENARIOS: [&str; 10] = [
    "s1-nu2", "s1-nu3", "s1-nu20", "s2-gauss", "s2-exp", "s2-pareto", "s3-(2,3)", "s3-(3,3)",
    "s3-(3,5)", "s4",
];

/// The simulation designs by name, with seed 0.
///
/// All share `S = 2`, `n = (150, 200)`, `p = 500`, `q = 3`, `q_s = (2, 2)`.
pub fn scenario_preset(name: &str) -> Result<SimulationSpec> {
    let (rho_a, rho_b, law) = match name {
        "s1-nu2" => (5.0, 5.0, ErrorLaw::StudentT { nu: 2.0 }),
        "s1-nu3" => (5.0, 5.0, ErrorLaw::StudentT { nu: 3.0 }),
        "s1-nu20" => (5.0, 5.0, ErrorLaw::StudentT { nu: 20.0 }),
        "s2-gauss" => (5.0, 5.0, ErrorLaw::Gaussian),
        "s2-exp" => (5.0, 5.0, ErrorLaw::CenteredExponential),
        "s2-pareto" => (5.0, 5.0, ErrorLaw::CenteredPareto { alpha: 2.0 }),
        "s3-(2,3)" => (2.0, 3.0, ErrorLaw::StudentT { nu: 3.0 }),
        "s3-(3,3)" => (3.0, 3.0, ErrorLaw::StudentT { nu: 3.0 }),
        "s3-(3,5)" => (3.0, 5.0, ErrorLaw::StudentT { nu: 3.0 }),
        "s4" => (6.0, 6.0, ErrorLaw::StudentT { nu: 20.0 }),
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    Ok(SimulationSpec {
        n: vec![150, 200],
        p: 500,
        q: 3,
        q_s: vec![2, 2],
        rho_a,
        rho_b,
        error_law: law,
        seed: 0,
    })
}
