//! Observables of a fixed point: test errors, their decomposition, learner
//! disagreement, confidence densities and Monte Carlo over the Gaussian model.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{norm_cdf, OrderParams};
use crate::quadrature::PanelRule;
use crate::random::stream_rng;
use crate::{Error, Result};

/// Smallest sample count accepted by the Monte Carlo estimators.
pub const MIN_SAMPLES: usize = 10_000;

/// Samples drawn from one generator stream.
pub const MC_CHUNK: usize = 4096;

const ARCCOS_SLACK: f64 = 1e-12;

/// Number of learners; `Infinite` selects the `K → ∞` forms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnsembleSize {
    Finite(usize),
    Infinite,
}

impl EnsembleSize {
    pub fn as_f64(self) -> f64 {
        match self {
            EnsembleSize::Finite(k) => k as f64,
            EnsembleSize::Infinite => f64::INFINITY,
        }
    }

    pub fn finite(self) -> Result<usize> {
        match self {
            EnsembleSize::Finite(k) => Ok(k),
            EnsembleSize::Infinite => Err(Error::Config("Monte Carlo needs a finite K".into())),
        }
    }
}

impl std::fmt::Display for EnsembleSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EnsembleSize::Finite(k) => write!(f, "{k}"),
            EnsembleSize::Infinite => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for EnsembleSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(EnsembleSize::Infinite);
        }
        match t.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(EnsembleSize::Finite(k)),
            _ => Err(Error::Config(format!("K must be a positive integer or \"inf\", got {s:?}"))),
        }
    }
}

/// Covariance of `(ν, µ_1..µ_K)`: `Var ν = ρ`, `Cov(ν, µ_k) = m`,
/// `Q = (q0 − q1) I + q1 11ᵀ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleCovariance {
    pub rho: f64,
    pub m: f64,
    pub q0: f64,
    pub q1: f64,
    pub k: EnsembleSize,
}

impl EnsembleCovariance {
    pub fn new(rho: f64, m: f64, q0: f64, q1: f64, k: EnsembleSize) -> Result<Self> {
        let cov = EnsembleCovariance { rho, m, q0, q1, k };
        cov.validate()?;
        Ok(cov)
    }

    pub fn from_params(params: &OrderParams, rho: f64, k: EnsembleSize) -> Result<Self> {
        EnsembleCovariance::new(rho, params.m, params.q0, params.q1, k)
    }

    /// Positive semidefiniteness, up to a relative slack of `1e-12`.
    pub fn validate(&self) -> Result<()> {
        let EnsembleCovariance { rho, m, q0, q1, k } = *self;
        if ![rho, m, q0, q1].iter().all(|x| x.is_finite()) {
            return Err(Error::Domain(format!("non-finite covariance entries {self:?}")));
        }
        if let EnsembleSize::Finite(0) = k {
            return Err(Error::Config("K must be at least 1".into()));
        }
        let slack = ARCCOS_SLACK * q0.abs().max(rho).max(1.0);
        if !(rho > 0.0) || q0 < -slack {
            return Err(Error::Domain(format!("need ρ > 0 and q0 ≥ 0, got ρ={rho}, q0={q0}")));
        }
        if q0 - q1 < -slack {
            return Err(Error::Domain(format!("q0 − q1 = {} is negative", q0 - q1)));
        }
        let ok = match k {
            EnsembleSize::Finite(k) => {
                let kf = k as f64;
                q0 + (kf - 1.0) * q1 >= kf * m * m / rho - slack
            }
            EnsembleSize::Infinite => q1 >= m * m / rho - slack,
        };
        if !ok {
            return Err(Error::Domain(format!("Σ is not positive semidefinite: {self:?}")));
        }
        Ok(())
    }

    /// Leading eigenvalue `q0 + (K − 1) q1` of `Q`.
    pub fn lambda_one(&self) -> Result<f64> {
        let k = self.k.finite()? as f64;
        Ok(self.q0 + (k - 1.0) * self.q1)
    }

    /// The `(K+1) × (K+1)` matrix itself.
    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        let k = self.k.finite()?;
        Ok(DMatrix::from_fn(k + 1, k + 1, |i, j| match (i, j) {
            (0, 0) => self.rho,
            (0, _) | (_, 0) => self.m,
            (a, b) if a == b => self.q0,
            _ => self.q1,
        }))
    }

    /// `Q^{1/2} = √(q0 − q1) I + (√λ1 − √(q0 − q1))/K · 11ᵀ`.
    pub fn q_sqrt(&self) -> Result<DMatrix<f64>> {
        let k = self.k.finite()?;
        let a = (self.q0 - self.q1).max(0.0).sqrt();
        let b = (self.lambda_one()?.max(0.0).sqrt() - a) / k as f64;
        Ok(DMatrix::from_fn(k, k, |i, j| if i == j { a + b } else { b }))
    }
}

/// `(ε_g, ε̄_g, δε_g)` of the averaged regressor under square error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseErrors {
    pub eps_g: f64,
    pub eps_bar: f64,
    pub delta_eps: f64,
}

pub fn mse_test_error(cov: &EnsembleCovariance) -> MseErrors {
    let EnsembleCovariance { rho, m, q0, q1, k } = *cov;
    let eps_bar = rho + q1 - 2.0 * m;
    let delta_eps = match k {
        EnsembleSize::Finite(k) => (q0 - q1) / k as f64,
        EnsembleSize::Infinite => 0.0,
    };
    MseErrors { eps_g: eps_bar + delta_eps, eps_bar, delta_eps }
}

fn arccos_over_pi(x: f64, what: &str) -> Result<f64> {
    if !x.is_finite() || x.abs() > 1.0 + ARCCOS_SLACK {
        return Err(Error::Domain(format!("{what}: arccos argument {x} outside [−1, 1]")));
    }
    Ok(x.clamp(-1.0, 1.0).acos() / PI)
}

/// Zero-one error of `sign(Σ_k µ_k)` against the sign teacher.
pub fn classification_error_avg(cov: &EnsembleCovariance) -> Result<f64> {
    let EnsembleCovariance { rho, m, q0, q1, k } = *cov;
    let (num, var) = match k {
        EnsembleSize::Finite(k) => {
            let kf = k as f64;
            (kf.sqrt() * m, q0 - q1 + kf * q1)
        }
        EnsembleSize::Infinite => (m, q1),
    };
    if m == 0.0 {
        return Ok(0.5);
    }
    if !(var > 0.0) {
        return Err(Error::Domain(format!("ensemble score variance {var} must be positive")));
    }
    arccos_over_pi(num / (rho * var).sqrt(), "classification error")
}

/// Probability that two learners predict opposite signs.
pub fn disagreement_probability(q0: f64, q1: f64) -> Result<f64> {
    if !(q0 > 0.0) || q1.abs() > q0 * (1.0 + ARCCOS_SLACK) || !q1.is_finite() {
        return Err(Error::Domain(format!("need q0 > 0 and |q1| ≤ q0, got q0={q0}, q1={q1}")));
    }
    arccos_over_pi(q1 / q0, "disagreement")
}

/// `(ε̄_g, δε_g)` of the sign-of-average classifier, from the `K → ∞` and
/// `K = 1` closed forms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDecomposition {
    pub eps_bar: f64,
    pub delta_eps: f64,
}

pub fn classification_decomposition(rho: f64, params: &OrderParams) -> Result<ClassDecomposition> {
    let one = EnsembleCovariance::from_params(params, rho, EnsembleSize::Finite(1))?;
    let inf = EnsembleCovariance::from_params(params, rho, EnsembleSize::Infinite)?;
    let eps_g = classification_error_avg(&one)?;
    let eps_bar = classification_error_avg(&inf)?;
    Ok(ClassDecomposition { eps_bar, delta_eps: eps_g - eps_bar })
}

/// Decomposition at every point of a sweep.
pub fn error_decomposition_classification(rho: f64, sweep: &[OrderParams]) -> Vec<Result<ClassDecomposition>> {
    sweep.iter().map(|p| classification_decomposition(rho, p)).collect()
}

/// Joint density of the logistic confidence scores `(φ1, φ2)` of two learners
/// on the grid `phi1 × phi2`.
pub fn confidence_density(q0: f64, q1: f64, phi1: &[f64], phi2: &[f64]) -> Result<DMatrix<f64>> {
    if !(q0 > 0.0) || !(q1.abs() < q0) {
        return Err(Error::Domain(format!(
            "degenerate score covariance q0={q0}, q1={q1}; at |q1| = q0 the scores live on a line, use the 1D density of µ"
        )));
    }
    let inside = |x: &f64| *x > 0.0 && *x < 1.0;
    if !phi1.iter().all(inside) || !phi2.iter().all(inside) {
        return Err(Error::Domain("confidence grid must lie strictly inside (0, 1)".into()));
    }
    let det = q0 * q0 - q1 * q1;
    let norm = 1.0 / (2.0 * PI * det.sqrt());
    let logit = |p: f64| (p / (1.0 - p)).ln();
    Ok(DMatrix::from_fn(phi1.len(), phi2.len(), |i, j| {
        let (a, b) = (phi1[i], phi2[j]);
        let (x, y) = (logit(a), logit(b));
        let quad = (q0 * x * x - 2.0 * q1 * x * y + q0 * y * y) / det;
        norm * (-0.5 * quad).exp() / (a * (1.0 - a) * b * (1.0 - b))
    }))
}

/// Cell averages of the confidence density on the uniform `cells × cells`
/// partition of the unit square, returned with the cell centers. Each cell
/// holds the exact rectangle probability of the scores, so the grid carries
/// unit mass.
pub fn confidence_cell_density(q0: f64, q1: f64, cells: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if !(q0 > 0.0) || !(q1.abs() < q0) {
        return Err(Error::Domain(format!("degenerate score covariance q0={q0}, q1={q1}")));
    }
    if cells < 2 {
        return Err(Error::Config(format!("need at least 2 cells per axis, got {cells}")));
    }
    let eta = q1 / q0;
    let s = (1.0 - eta * eta).sqrt();
    let n = cells as f64;
    // standardized logit edges
    let edges: Vec<f64> = (0..=cells)
        .map(|i| match i {
            0 => f64::NEG_INFINITY,
            i if i == cells => f64::INFINITY,
            i => {
                let p = i as f64 / n;
                (p / (1.0 - p)).ln() / q0.sqrt()
            }
        })
        .collect();
    let mut mass = DMatrix::zeros(cells, cells);
    let mut cdf = vec![0.0; cells + 1];
    for (x, w) in PanelRule::default().points(&edges[1..cells]) {
        let i = edges.partition_point(|e| *e <= x) - 1;
        for (c, e) in cdf.iter_mut().zip(&edges) {
            *c = norm_cdf((e - eta * x) / s);
        }
        for j in 0..cells {
            mass[(i, j)] += w * (cdf[j + 1] - cdf[j]);
        }
    }
    let sym = (&mass + mass.transpose()) * (0.5 * n * n);
    let centers = (0..cells).map(|i| (i as f64 + 0.5) / n).collect();
    Ok((centers, sym))
}

/// Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// `E[g(ν, µ)]` for `(ν, µ) ~ N(0, Σ)`. Chunk `c` of [`MC_CHUNK`] samples uses
/// stream `c` of `seed`, and chunk sums are combined in order, so the result
/// does not depend on the thread count.
pub fn monte_carlo_expectation<G>(cov: &EnsembleCovariance, samples: usize, seed: u64, g: G) -> Result<McEstimate>
where
    G: Fn(f64, &[f64]) -> f64 + Sync,
{
    cov.validate()?;
    if samples < MIN_SAMPLES {
        return Err(Error::Config(format!("need at least {MIN_SAMPLES} samples, got {samples}")));
    }
    let k = cov.k.finite()?;
    let kf = k as f64;
    let lambda1 = cov.lambda_one()?.max(0.0);
    let a = (cov.q0 - cov.q1).max(0.0).sqrt();
    let b = (lambda1.sqrt() - a) / kf;
    let (coef, resid) = if lambda1 > 0.0 {
        (cov.m / lambda1, (cov.rho - kf * cov.m * cov.m / lambda1).max(0.0).sqrt())
    } else {
        (0.0, cov.rho.sqrt())
    };

    let chunks = samples.div_ceil(MC_CHUNK);
    let partial: Vec<Result<(f64, f64)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let n = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut xi = vec![0.0; k];
            let mut mu = vec![0.0; k];
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let xi0: f64 = StandardNormal.sample(&mut rng);
                let mut total = 0.0;
                for x in xi.iter_mut() {
                    *x = StandardNormal.sample(&mut rng);
                    total += *x;
                }
                let mut sum_mu = 0.0;
                for (u, x) in mu.iter_mut().zip(&xi) {
                    *u = a * x + b * total;
                    sum_mu += *u;
                }
                let nu = coef * sum_mu + resid * xi0;
                let val = g(nu, &mu);
                if !val.is_finite() {
                    return Err(Error::Domain(format!("Monte Carlo integrand is {val}")));
                }
                s += val;
                s2 += val * val;
            }
            Ok((s, s2))
        })
        .collect();
    let (mut s, mut s2) = (0.0, 0.0);
    for p in partial {
        let (a, b) = p?;
        s += a;
        s2 += b;
    }
    let n = samples as f64;
    let mean = s / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McEstimate { estimate: mean, std_error: (var / n).sqrt(), samples })
}

/// Aggregation of the learners' scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// `sign(Σ_k µ_k)`
    AvgSign,
    /// `sign(Σ_k sign µ_k)`
    Majority,
    /// `(1/K) Σ_k µ_k`
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Square error against the linear teacher `ν`.
    Mse,
    /// Zero-one error against the sign teacher `sign ν`.
    ZeroOne,
}

fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Test error of an estimator under a metric, by Monte Carlo.
pub fn generic_gen_error(
    cov: &EnsembleCovariance,
    estimator: Estimator,
    metric: Metric,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    let k = cov.k.finite()? as f64;
    let predict = move |mu: &[f64]| -> f64 {
        match estimator {
            Estimator::AvgSign => sign(mu.iter().sum()),
            Estimator::Majority => sign(mu.iter().map(|u| sign(*u)).sum()),
            Estimator::Mean => mu.iter().sum::<f64>() / k,
        }
    };
    monte_carlo_expectation(cov, samples, seed, move |nu, mu| {
        let y_hat = predict(mu);
        match metric {
            Metric::Mse => (nu - y_hat).powi(2),
            Metric::ZeroOne => (sign(nu) != y_hat) as u8 as f64,
        }
    })
}

/// Zero-one error of the majority vote; `K` must be odd.
pub fn majority_vote_error(cov: &EnsembleCovariance, samples: usize, seed: u64) -> Result<McEstimate> {
    let k = cov.k.finite()?;
    if k % 2 == 0 {
        return Err(Error::Config(format!("majority vote needs an odd K, got {k}")));
    }
    generic_gen_error(cov, Estimator::Majority, Metric::ZeroOne, samples, seed)
}

/// Largest discrete second difference and its ratio to the median one.
/// Returns `(index, ratio)` with `index` the interior point of the spike.
pub fn second_difference_spike(values: &[f64]) -> Option<(usize, f64)> {
    if values.len() < 4 {
        return None;
    }
    let d2: Vec<f64> = values.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]).abs()).collect();
    let mut sorted = d2.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let (i, peak) = d2.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    let ratio = if median > 0.0 { peak / median } else { f64::INFINITY };
    Some((i + 1, ratio))
}
