use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use rfens_core::channels::Teacher;
use rfens_core::priors::FeatureEnsemble;
use rfens_core::random::{gaussian_matrix, stream_rng};
use rfens_core::spectrum::{Activation, MAX_FEATURE_ENTRIES};
use rfens_core::{Error, Result};

use crate::scaling;

/// Inputs `x ~ N(0, I_d)`, teacher `θ ~ N(0, ρ I_d)` and labels `f0(θᵀx/√d)`.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    /// `n × d`
    pub x: DMatrix<f64>,
    pub theta: DVector<f64>,
    pub y: DVector<f64>,
    pub teacher: Teacher,
    pub rho: f64,
    pub seed: u64,
}

impl SyntheticDataset {
    /// Fresh inputs labelled by an existing teacher vector.
    pub fn with_teacher(n: usize, theta: &DVector<f64>, rho: f64, teacher: Teacher, seed: u64) -> Result<Self> {
        let d = theta.len();
        if n == 0 || d == 0 {
            return Err(Error::Config(format!("need n, d ≥ 1, got n={n}, d={d}")));
        }
        if n.saturating_mul(d) > MAX_FEATURE_ENTRIES {
            return Err(Error::Resource(format!("{n}×{d} inputs exceed the cap of {MAX_FEATURE_ENTRIES} entries")));
        }
        let x = gaussian_matrix(n, d, &mut stream_rng(seed, 1));
        let y = labels(&x, theta, teacher);
        Ok(SyntheticDataset { x, theta: theta.clone(), y, teacher, rho, seed })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Teacher fields `θᵀx/√d`.
    pub fn fields(&self) -> DVector<f64> {
        &self.x * &self.theta * scaling::input(self.d())
    }
}

fn labels(x: &DMatrix<f64>, theta: &DVector<f64>, teacher: Teacher) -> DVector<f64> {
    let nu = x * theta * scaling::input(theta.len());
    match teacher {
        Teacher::Linear => nu,
        Teacher::Sign => nu.map(|t| if t >= 0.0 { 1.0 } else { -1.0 }),
    }
}

pub fn generate_dataset(n: usize, d: usize, rho: f64, teacher: Teacher, seed: u64) -> Result<SyntheticDataset> {
    if d == 0 {
        return Err(Error::Config("need d ≥ 1".into()));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::Config(format!("teacher variance must be positive, got {rho}")));
    }
    let normal = Normal::new(0.0, rho.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = stream_rng(seed, 0);
    let theta = DVector::from_iterator(d, (0..d).map(|_| normal.sample(&mut rng)));
    SyntheticDataset::with_teacher(n, &theta, rho, teacher, seed)
}

/// How features are computed from inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeatureMap {
    /// `φ(F x/√d)` entrywise.
    Nonlinear { activation: Activation },
    /// `κ0 + κ1 F x/√d + κ* z` with `z ~ N(0, I_p)` drawn from `seed`.
    GaussianEquivalent { seed: u64 },
}

/// One `n × p` block `u_k` per learner.
pub fn featurize(x: &DMatrix<f64>, ensemble: &FeatureEnsemble, map: FeatureMap) -> Result<Vec<DMatrix<f64>>> {
    if x.ncols() != ensemble.d() {
        return Err(Error::Config(format!(
            "inputs have dimension {} but the features expect {}",
            x.ncols(),
            ensemble.d()
        )));
    }
    let (n, p) = (x.nrows(), ensemble.p());
    if n.saturating_mul(p).saturating_mul(ensemble.k()) > MAX_FEATURE_ENTRIES {
        return Err(Error::Resource(format!(
            "{} feature blocks of shape {n}×{p} exceed the cap of {MAX_FEATURE_ENTRIES} entries",
            ensemble.k()
        )));
    }
    let s = scaling::input(ensemble.d());
    (0..ensemble.k())
        .map(|k| {
            let pre = x * ensemble.features(k).transpose() * s;
            Ok(match map {
                FeatureMap::Nonlinear { activation } => pre.map(|t| activation.apply(t)),
                FeatureMap::GaussianEquivalent { seed } => {
                    let c = ensemble.coeffs();
                    let z = gaussian_matrix(n, p, &mut stream_rng(seed, k as u64));
                    pre * c.kappa1 + z * c.kappa_star + DMatrix::from_element(n, p, c.kappa0)
                }
            })
        })
        .collect()
}
