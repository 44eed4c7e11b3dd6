//! Repeated trials of the full pipeline: data, features, training, overlaps
//! and test errors on fresh samples.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rfens_core::channels::{ChannelSpec, Loss, Teacher};
use rfens_core::priors::FeatureEnsemble;
use rfens_core::random::{derive_seed, feature_matrix};
use rfens_core::spectrum::{Activation, MAX_FEATURE_ENTRIES};
use rfens_core::{Error, Result};

use crate::data::{featurize, generate_dataset, FeatureMap, SyntheticDataset};
use crate::overlaps::{empirical_overlaps, TrainedEnsemble};
use crate::scaling;
use crate::train::{mean_loss, train_ensemble, NewtonOptions};

const TEST_BLOCK: usize = 1024;

fn default_rho() -> f64 {
    1.0
}

fn default_activation() -> Activation {
    Activation::Erf
}

fn default_test_samples() -> usize {
    10_000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub loss: Loss,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Replace `φ(F x/√d)` by its Gaussian-equivalent surrogate.
    #[serde(default)]
    pub gaussian_equivalent: bool,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Penalty of `Σ_µ ℓ + λ/2 ‖w‖²`; the trainers receive `λ/n`.
    pub lambda: f64,
    pub n: usize,
    pub p: usize,
    pub d: usize,
    pub learners: usize,
    /// Ensemble sizes at which test errors are reported; each at most `learners`.
    #[serde(default)]
    pub ensemble_sizes: Vec<usize>,
    #[serde(default)]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Explicit per-trial seeds; overrides `trials` and `seed`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_test_samples")]
    pub test_samples: usize,
    #[serde(default)]
    pub newton: NewtonOptions,
}

impl ExperimentConfig {
    pub fn new(loss: Loss, lambda: f64, n: usize, p: usize, d: usize, learners: usize, trials: usize, seed: u64) -> Self {
        ExperimentConfig {
            loss,
            activation: Activation::Erf,
            gaussian_equivalent: false,
            rho: 1.0,
            lambda,
            n,
            p,
            d,
            learners,
            ensemble_sizes: vec![learners],
            trials,
            seed,
            seeds: None,
            test_samples: default_test_samples(),
            newton: NewtonOptions::default(),
        }
    }

    pub fn trial_seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.trials as u64).map(|t| derive_seed(self.seed, t)).collect(),
        }
    }

    pub fn reported_sizes(&self) -> Vec<usize> {
        if self.ensemble_sizes.is_empty() {
            vec![self.learners]
        } else {
            self.ensemble_sizes.clone()
        }
    }

    pub fn teacher(&self) -> Teacher {
        ChannelSpec::for_loss(self.loss).teacher
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.d == 0 || self.learners == 0 {
            return Err(Error::Config(format!(
                "need n, p, d, learners ≥ 1, got n={}, p={}, d={}, learners={}",
                self.n, self.p, self.d, self.learners
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive and finite, got {}", self.lambda)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be positive and finite, got {}", self.rho)));
        }
        if self.loss == Loss::Hinge {
            return Err(Error::Config("the ERM lab trains square and logistic losses only".into()));
        }
        if let Some(k) = self.reported_sizes().iter().find(|k| **k == 0 || **k > self.learners) {
            return Err(Error::Config(format!("ensemble size {k} outside 1..={}", self.learners)));
        }
        if self.test_samples == 0 {
            return Err(Error::Config("test_samples must be at least 1".into()));
        }
        let entries = self.n.max(TEST_BLOCK).saturating_mul(self.p).saturating_mul(self.learners);
        if entries > MAX_FEATURE_ENTRIES || self.p.saturating_mul(self.d).saturating_mul(self.learners) > MAX_FEATURE_ENTRIES {
            return Err(Error::Resource(format!(
                "n={}, p={}, d={} with {} learners exceed the cap of {MAX_FEATURE_ENTRIES} entries",
                self.n, self.p, self.d, self.learners
            )));
        }
        Ok(())
    }
}

/// Outcome of one trial; numeric fields are NaN when the trial failed or the
/// quantity is undefined (`q1` and disagreement for one learner).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub error: Option<String>,
    pub m: f64,
    pub q0: f64,
    pub q1: f64,
    pub train_loss: f64,
    /// Test error at each reported ensemble size.
    pub eps_g: Vec<f64>,
    /// Pair-averaged frequency of opposite signs on the test set.
    pub disagreement: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

impl TrialRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    fn failed(trial: usize, seed: u64, sizes: usize, err: Error) -> Self {
        TrialRecord {
            trial,
            seed,
            error: Some(err.to_string()),
            m: f64::NAN,
            q0: f64::NAN,
            q1: f64::NAN,
            train_loss: f64::NAN,
            eps_g: vec![f64::NAN; sizes],
            disagreement: f64::NAN,
            grad_norm: f64::NAN,
            iterations: 0,
        }
    }
}

/// Mean and standard error over the finite values of a column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

impl Aggregate {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
        let n = v.len();
        if n == 0 {
            return Aggregate { mean: f64::NAN, std_error: f64::NAN, count: 0 };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let std_error = if n < 2 {
            f64::NAN
        } else {
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Aggregate { mean, std_error, count: n }
    }

    /// `|theory − mean| / std_error`.
    pub fn z_score(&self, theory: f64) -> f64 {
        (theory - self.mean).abs() / self.std_error
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub records: Vec<TrialRecord>,
    pub successes: usize,
    pub failures: usize,
    pub m: Aggregate,
    pub q0: Aggregate,
    pub q1: Aggregate,
    pub train_loss: Aggregate,
    pub eps_g: Vec<Aggregate>,
    pub disagreement: Aggregate,
}

/// Shortest round-trip text for a double.
pub fn csv_float(x: f64) -> String {
    format!("{x:?}")
}

impl ExperimentResult {
    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["trial", "seed", "status", "m", "q0", "q1", "train_loss"].map(String::from).into();
        h.extend(self.config.reported_sizes().iter().map(|k| format!("eps_g_k{k}")));
        h.extend(["disagreement", "grad_norm", "iterations", "error"].map(String::from));
        h
    }

    /// One row per trial.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(self.csv_header()).map_err(io)?;
        for r in &self.records {
            let mut row = vec![
                r.trial.to_string(),
                r.seed.to_string(),
                if r.ok() { "ok" } else { "failed" }.to_string(),
                csv_float(r.m),
                csv_float(r.q0),
                csv_float(r.q1),
                csv_float(r.train_loss),
            ];
            row.extend(r.eps_g.iter().map(|x| csv_float(*x)));
            row.extend([
                csv_float(r.disagreement),
                csv_float(r.grad_norm),
                r.iterations.to_string(),
                r.error.clone().unwrap_or_default(),
            ]);
            w.write_record(row).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aggregates and configuration, without the per-trial rows.
    pub fn summary_json(&self) -> serde_json::Value {
        let sizes = self.config.reported_sizes();
        let eps: serde_json::Map<String, serde_json::Value> = sizes
            .iter()
            .zip(&self.eps_g)
            .map(|(k, a)| (format!("k{k}"), serde_json::to_value(a).expect("plain struct")))
            .collect();
        serde_json::json!({
            "config": self.config,
            "successes": self.successes,
            "failures": self.failures,
            "m": self.m,
            "q0": self.q0,
            "q1": self.q1,
            "train_loss": self.train_loss,
            "eps_g": eps,
            "disagreement": self.disagreement,
        })
    }
}

struct Accumulator {
    err: Vec<f64>,
    disagree: f64,
    pairs: usize,
}

fn test_errors(
    cfg: &ExperimentConfig,
    trained: &TrainedEnsemble,
    test: &SyntheticDataset,
    map: impl Fn(usize) -> FeatureMap,
) -> Result<(Vec<f64>, f64)> {
    let sizes = cfg.reported_sizes();
    let k = trained.ensemble.k();
    let s = scaling::score(cfg.p);
    let nu = test.fields();
    let mut acc = Accumulator { err: vec![0.0; sizes.len()], disagree: 0.0, pairs: 0 };
    let t = test.n();
    for (b, start) in (0..t).step_by(TEST_BLOCK).enumerate() {
        let len = TEST_BLOCK.min(t - start);
        let x: DMatrix<f64> = test.x.rows(start, len).into_owned();
        let u = featurize(&x, &trained.ensemble, map(b))?;
        let h: Vec<DVector<f64>> = u.iter().enumerate().map(|(i, ui)| ui * trained.w.column(i) * s).collect();
        for r in 0..len {
            let (y, field) = (test.y[start + r], nu[start + r]);
            for (j, kk) in sizes.iter().enumerate() {
                let sum: f64 = h[..*kk].iter().map(|hi| hi[r]).sum();
                acc.err[j] += match cfg.loss {
                    Loss::Square => (field - sum / *kk as f64).powi(2),
                    _ => (y != if sum >= 0.0 { 1.0 } else { -1.0 }) as u8 as f64,
                };
            }
            for i in 0..k {
                for l in i + 1..k {
                    acc.disagree += ((h[i][r] >= 0.0) != (h[l][r] >= 0.0)) as u8 as f64;
                    acc.pairs += 1;
                }
            }
        }
    }
    let eps = acc.err.iter().map(|e| e / t as f64).collect();
    let dis = if acc.pairs > 0 { acc.disagree / acc.pairs as f64 } else { f64::NAN };
    Ok((eps, dis))
}

fn run_trial(cfg: &ExperimentConfig, trial: usize, seed: u64) -> Result<TrialRecord> {
    let coeffs = cfg.activation.coeffs();
    let teacher = cfg.teacher();
    let data = generate_dataset(cfg.n, cfg.d, cfg.rho, teacher, derive_seed(seed, 0))?;
    let feature_seeds: Vec<u64> = (0..cfg.learners as u64).map(|k| derive_seed(seed, 2 + k)).collect();
    let features = feature_seeds.iter().map(|s| feature_matrix(cfg.p, cfg.d, *s)).collect();
    let ensemble = FeatureEnsemble::from_parts(features, data.theta.clone(), cfg.rho, coeffs, feature_seeds)?;
    let map = |stream: u64| {
        if cfg.gaussian_equivalent {
            FeatureMap::GaussianEquivalent { seed: derive_seed(seed, stream) }
        } else {
            FeatureMap::Nonlinear { activation: cfg.activation }
        }
    };

    let u = featurize(&data.x, &ensemble, map(1 << 20))?;
    let lambda = cfg.lambda / cfg.n as f64;
    let (w, stats) = train_ensemble(&u, &data.y, cfg.loss, lambda, &cfg.newton)?;
    let train_loss =
        u.iter().enumerate().map(|(k, uk)| mean_loss(cfg.loss, uk, &data.y, &w.column(k).into_owned())).sum::<f64>()
            / cfg.learners as f64;
    drop(u);

    let trained = TrainedEnsemble { w, ensemble, stats };
    let ov = empirical_overlaps(&trained)?;
    let test = SyntheticDataset::with_teacher(cfg.test_samples, &data.theta, cfg.rho, teacher, derive_seed(seed, 1))?;
    let (eps_g, disagreement) = test_errors(cfg, &trained, &test, |b| map((1 << 21) + b as u64))?;
    Ok(TrialRecord {
        trial,
        seed,
        error: None,
        m: ov.m,
        q0: ov.q0,
        q1: ov.q1.unwrap_or(f64::NAN),
        train_loss,
        eps_g,
        disagreement,
        grad_norm: trained.stats.iter().map(|s| s.grad_norm).fold(0.0, f64::max),
        iterations: trained.stats.iter().map(|s| s.iterations).max().unwrap_or(0),
    })
}

/// Runs every trial in parallel. Trial failures are recorded and excluded from
/// the aggregates; only configuration errors abort the run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let seeds = config.trial_seeds();
    let sizes = config.reported_sizes().len();
    let records: Vec<TrialRecord> = seeds
        .par_iter()
        .enumerate()
        .map(|(t, s)| run_trial(config, t, *s).unwrap_or_else(|e| TrialRecord::failed(t, *s, sizes, e)))
        .collect();
    let ok: Vec<&TrialRecord> = records.iter().filter(|r| r.ok()).collect();
    let agg = |f: &dyn Fn(&TrialRecord) -> f64| Aggregate::from_values(ok.iter().map(|r| f(r)));
    Ok(ExperimentResult {
        config: config.clone(),
        successes: ok.len(),
        failures: records.len() - ok.len(),
        m: agg(&|r| r.m),
        q0: agg(&|r| r.q0),
        q1: agg(&|r| r.q1),
        train_loss: agg(&|r| r.train_loss),
        eps_g: (0..sizes).map(|j| agg(&|r| r.eps_g[j])).collect(),
        disagreement: agg(&|r| r.disagreement),
        records,
    })
}
