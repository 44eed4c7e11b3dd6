//! JSON configuration: the model, sweeps over one axis and the optional
//! simulation block.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use rfens_core::channels::{ChannelSpec, Loss, OrderParams, Teacher};
use rfens_core::observables::EnsembleSize;
use rfens_core::solver::{KernelConfig, ModelConfig, SolveOptions};
use rfens_core::spectrum::Activation;
use rfens_core::{Error, Result};
use rfens_erm::NewtonOptions;

/// Reads and deserializes a JSON file; errors name the offending field path.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_json(&text)
}

pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            Error::Config(inner.to_string())
        } else {
            Error::Config(format!("{path}: {inner}"))
        }
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Finite,
    Kernel,
}

/// Ensemble size written as a positive integer or the string `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "KRaw", into = "KRaw")]
pub struct K(pub EnsembleSize);

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum KRaw {
    Int(u64),
    Str(String),
}

impl TryFrom<KRaw> for K {
    type Error = String;

    fn try_from(raw: KRaw) -> std::result::Result<Self, String> {
        match raw {
            KRaw::Int(0) => Err("K must be at least 1".into()),
            KRaw::Int(k) => Ok(K(EnsembleSize::Finite(k as usize))),
            KRaw::Str(s) => s.parse().map(K).map_err(|e: Error| e.to_string()),
        }
    }
}

impl From<K> for KRaw {
    fn from(k: K) -> Self {
        match k.0 {
            EnsembleSize::Finite(k) => KRaw::Int(k as u64),
            EnsembleSize::Infinite => KRaw::Str("inf".into()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub damping: Option<f64>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub init: Option<OrderParams>,
}

impl SolverSettings {
    pub fn options(&self) -> SolveOptions {
        let mut o = SolveOptions::default();
        if let Some(d) = self.damping {
            o.damping = d;
        }
        if let Some(t) = self.tol {
            o.tol = t;
        }
        if let Some(m) = self.max_iters {
            o.max_iters = m;
        }
        if let Some(i) = self.init {
            o.init = i;
        }
        o
    }
}

fn one() -> f64 {
    1.0
}

fn erf() -> Activation {
    Activation::Erf
}

fn k_one() -> Vec<K> {
    vec![K(EnsembleSize::Finite(1))]
}

/// A single point of the theory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub mode: Mode,
    pub loss: Loss,
    #[serde(default)]
    pub teacher: Option<Teacher>,
    #[serde(default = "erf")]
    pub activation: Activation,
    #[serde(default = "one")]
    pub rho: f64,
    pub lambda: f64,
    /// `n/p`
    #[serde(default)]
    pub alpha: Option<f64>,
    /// `d/p`; derived as `alpha / n_over_d` when absent.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub n_over_d: Option<f64>,
    /// `n/d` in the kernel limit.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default = "k_one")]
    pub k: Vec<K>,
    #[serde(default)]
    pub solver: SolverSettings,
}

/// A model ready for the solver.
#[derive(Clone, Debug)]
pub enum Resolved {
    Finite(ModelConfig),
    Kernel(KernelConfig),
}

fn missing(field: &str, mode: &str) -> Error {
    Error::Config(format!("missing field `{field}` (required in {mode} mode)"))
}

impl ModelSpec {
    pub fn channel(&self) -> Result<ChannelSpec> {
        match self.teacher {
            Some(t) => ChannelSpec::new(self.loss, t),
            None => Ok(ChannelSpec::for_loss(self.loss)),
        }
    }

    pub fn ks(&self) -> Vec<EnsembleSize> {
        self.k.iter().map(|k| k.0).collect()
    }

    pub fn gamma_value(&self) -> Result<f64> {
        let alpha = self.alpha.ok_or_else(|| missing("alpha", "finite"))?;
        match (self.gamma, self.n_over_d) {
            (Some(g), _) => Ok(g),
            (None, Some(r)) => Ok(alpha / r),
            (None, None) => Err(missing("gamma", "finite")),
        }
    }

    pub fn resolve(&self) -> Result<Resolved> {
        if self.k.is_empty() {
            return Err(Error::Config("k: list must not be empty".into()));
        }
        let spec = self.channel()?;
        let coeffs = self.activation.coeffs();
        let kmax = self.k.iter().filter_map(|k| k.0.finite().ok()).max().unwrap_or(1);
        match self.mode {
            Mode::Finite => {
                let alpha = self.alpha.ok_or_else(|| missing("alpha", "finite"))?;
                let gamma = self.gamma_value()?;
                Ok(Resolved::Finite(ModelConfig::new(alpha, gamma, self.rho, self.lambda, kmax, spec, coeffs)?))
            }
            Mode::Kernel => {
                let delta = self.delta.ok_or_else(|| missing("delta", "kernel"))?;
                let cfg = KernelConfig { delta, rho: self.rho, lambda: self.lambda, k: kmax, spec, coeffs };
                cfg.validate()?;
                Ok(Resolved::Kernel(cfg))
            }
        }
    }

    /// The model at `value` along `axis`.
    pub fn at(&self, axis: Axis, value: f64) -> Result<ModelSpec> {
        let mut s = self.clone();
        match axis {
            Axis::POverN => {
                let r = self.n_over_d.ok_or_else(|| Error::Config("base.n_over_d: required for the p_over_n axis".into()))?;
                s.alpha = Some(1.0 / value);
                s.gamma = Some(1.0 / (value * r));
            }
            Axis::Alpha => {
                s.alpha = Some(value);
                if self.gamma.is_none() {
                    s.gamma = Some(value / self.n_over_d.ok_or_else(|| missing("gamma", "finite"))?);
                }
            }
            Axis::Lambda => s.lambda = value,
            Axis::K => s.k = vec![K(EnsembleSize::Finite(value as usize))],
            Axis::Delta => s.delta = Some(value),
        }
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    POverN,
    Alpha,
    Lambda,
    #[serde(rename = "K")]
    K,
    Delta,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::POverN => "p_over_n",
            Axis::Alpha => "alpha",
            Axis::Lambda => "lambda",
            Axis::K => "K",
            Axis::Delta => "delta",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range {
        start: f64,
        stop: f64,
        num: usize,
        #[serde(default)]
        log: bool,
    },
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match *self {
            Grid::List(ref v) => v.clone(),
            Grid::Range { start, stop, num, log } => {
                if num == 1 {
                    return vec![start];
                }
                (0..num)
                    .map(|i| {
                        let t = i as f64 / (num - 1) as f64;
                        if log {
                            (start.ln() + t * (stop.ln() - start.ln())).exp()
                        } else {
                            start + t * (stop - start)
                        }
                    })
                    .collect()
            }
        }
    }
}

fn default_test_samples() -> usize {
    10_000
}

/// Finite-size experiments at every grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Per-trial seeds reused at every grid point; overrides `trials`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    /// Input dimension; alternatively `min_dp` fixes `min(d, p)`.
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub min_dp: Option<usize>,
    /// Learners per trial; defaults to the largest finite K, at least 2.
    #[serde(default)]
    pub learners: Option<usize>,
    #[serde(default = "default_test_samples")]
    pub test_samples: usize,
    #[serde(default)]
    pub gaussian_equivalent: bool,
    #[serde(default)]
    pub newton: NewtonOptions,
}

impl SimulateBlock {
    /// Integer `(n, p, d)` for the ratios `α = n/p`, `γ = d/p`.
    pub fn sizes(&self, alpha: f64, gamma: f64) -> Result<(usize, usize, usize)> {
        let round = |x: f64| (x.round() as usize).max(1);
        let (p, d) = match (self.d, self.min_dp) {
            (Some(d), None) => (round(d as f64 / gamma), d),
            (None, Some(m)) if gamma <= 1.0 => (round(m as f64 / gamma), m),
            (None, Some(m)) => (m, round(m as f64 * gamma)),
            _ => return Err(Error::Config("simulate: set exactly one of `d` and `min_dp`".into())),
        };
        Ok((round(alpha * p as f64), p, d))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: ModelSpec,
    pub axis: Axis,
    pub grid: Grid,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub simulate: Option<SimulateBlock>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<Vec<f64>> {
        let grid = self.grid.values();
        if grid.is_empty() {
            return Err(Error::Config("grid: must not be empty".into()));
        }
        if grid.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("grid: values must be finite".into()));
        }
        let up = grid.windows(2).all(|w| w[1] > w[0]);
        let down = grid.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(Error::Config("grid: must be strictly monotone".into()));
        }
        let mode = self.base.mode;
        match self.axis {
            Axis::Delta if mode != Mode::Kernel => {
                return Err(Error::Config("axis: delta requires kernel mode".into()));
            }
            Axis::POverN | Axis::Alpha if mode != Mode::Finite => {
                return Err(Error::Config(format!("axis: {} requires finite mode", self.axis.name())));
            }
            Axis::K if grid.iter().any(|k| *k < 1.0 || k.fract() != 0.0) => {
                return Err(Error::Config("grid: K values must be positive integers".into()));
            }
            _ => {}
        }
        for v in &grid {
            self.base.at(self.axis, *v)?.resolve().map_err(|e| e.context(format!("grid point {v}")))?;
        }
        Ok(grid)
    }
}
