//! Damped fixed-point iteration of the channel and prior maps.

use serde::{Deserialize, Serialize};

use crate::channels::{channel_update, ChannelRules, ChannelSpec, ConjugateParams, OrderParams};
use crate::priors::{kernel_channel_update, kernel_prior_update, kernel_ridge_closed_form, prior_update_spectral};
use crate::spectrum::{mp_spectral_model, ActivationCoeffs, SpectralModel};
use crate::{Error, Result};

/// Overlap `q0` above which the iteration is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Damping used once oscillations are detected.
pub const OSCILLATION_DAMPING: f64 = 0.1;

/// Problem definition at finite `α = n/p`, `γ = d/p`.
#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub rho: f64,
    pub lambda: f64,
    pub k: usize,
    pub spec: ChannelSpec,
    pub spectrum: SpectralModel,
    pub coeffs: ActivationCoeffs,
}

impl ModelConfig {
    /// Configuration on the closed-form Marchenko-Pastur spectrum.
    pub fn new(
        alpha: f64,
        gamma: f64,
        rho: f64,
        lambda: f64,
        k: usize,
        spec: ChannelSpec,
        coeffs: ActivationCoeffs,
    ) -> Result<Self> {
        let spectrum = mp_spectral_model(alpha, gamma, coeffs)?;
        let cfg = ModelConfig { alpha, gamma, rho, lambda, k, spec, spectrum, coeffs };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("alpha", self.alpha), ("gamma", self.gamma), ("rho", self.rho), ("lambda", self.lambda)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {x}")));
            }
        }
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        Ok(())
    }
}

/// Problem definition in the kernel limit, `δ = n/d`.
#[derive(Clone, Debug)]
pub struct KernelConfig {
    pub delta: f64,
    pub rho: f64,
    pub lambda: f64,
    pub k: usize,
    pub spec: ChannelSpec,
    pub coeffs: ActivationCoeffs,
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("delta", self.delta), ("rho", self.rho), ("lambda", self.lambda)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {x}")));
            }
        }
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub init: OrderParams,
    pub rules: ChannelRules,
    /// Switch to [`OSCILLATION_DAMPING`] when the iterates alternate.
    pub adaptive_damping: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            damping: 0.5,
            tol: 1e-9,
            max_iters: 5000,
            init: OrderParams::new(0.01, 1.0, 0.5, 1.0),
            rules: ChannelRules::default(),
            adaptive_damping: true,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_init(&self, init: OrderParams) -> Self {
        SolveOptions { init, ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    InterpolationDivergence,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max_iterations",
            SolveStatus::InterpolationDivergence => "interpolation_divergence",
        }
    }
}

/// Outcome of a solve. `params` is the last iterate at which the residual was
/// measured and `conj` its channel image.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FixedPoint {
    pub params: OrderParams,
    pub conj: ConjugateParams,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub status: SolveStatus,
    pub projections: usize,
    pub damping: f64,
}

impl FixedPoint {
    /// Errors unless the solve converged.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::Convergence(format!(
                "{} after {} iterations, residual {:.3e}, params {:?}",
                self.status.as_str(),
                self.iterations,
                self.residual,
                self.params
            )))
        }
    }
}

/// Max over components of `|a − b| / max(1, |b|)`.
pub fn scaled_residual(a: &OrderParams, b: &OrderParams) -> f64 {
    a.as_array()
        .iter()
        .zip(b.as_array())
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Moves `x` into `q0 > 0, |q1| ≤ q0, m² < ρ(q0+q1)/2, v > 0`. Returns whether
/// anything changed.
pub fn project(x: &mut OrderParams, rho: f64) -> bool {
    let before = *x;
    const FLOOR: f64 = 1e-12;
    if !(x.q0 > FLOOR) {
        x.q0 = FLOOR;
    }
    x.q1 = x.q1.clamp(-x.q0, x.q0);
    if !(x.v > FLOOR) {
        x.v = FLOOR;
    }
    let bound = rho * 0.5 * (x.q0 + x.q1) * (1.0 - 1e-9);
    if x.m * x.m > bound {
        x.m = x.m.signum() * bound.max(0.0).sqrt();
    }
    *x != before
}

fn mix(new: &OrderParams, old: &OrderParams, damping: f64) -> OrderParams {
    let f = |a: f64, b: f64| damping * a + (1.0 - damping) * b;
    OrderParams::new(f(new.m, old.m), f(new.q0, old.q0), f(new.q1, old.q1), f(new.v, old.v))
}

/// Damped iteration of `x ↦ prior(channel(x))`.
fn iterate<F>(rho: f64, opts: &SolveOptions, mut map: F) -> Result<FixedPoint>
where
    F: FnMut(&OrderParams) -> Result<(ConjugateParams, OrderParams)>,
{
    opts.validate()?;
    let mut x = opts.init;
    let mut projections = 0;
    if project(&mut x, rho) {
        projections += 1;
    }
    let mut damping = opts.damping;
    let mut last_dq0 = 0.0;
    let mut alternations = 0;
    let mut last_residual = f64::INFINITY;
    let outcome = |x: OrderParams, conj, it, residual, status, projections, damping| FixedPoint {
        params: x,
        conj,
        iterations: it,
        residual,
        converged: status == SolveStatus::Converged,
        status,
        projections,
        damping,
    };

    for it in 1..=opts.max_iters {
        let (conj, t) = map(&x).map_err(|e| e.context(format!("iteration {it}")))?;
        if !t.as_array().iter().all(|a| a.is_finite()) {
            return Err(Error::Numerical(format!("iteration {it}: non-finite update {t:?} from {x:?}")));
        }
        let residual = scaled_residual(&t, &x);
        if residual < opts.tol {
            return Ok(outcome(x, conj, it, residual, SolveStatus::Converged, projections, damping));
        }
        if t.q0 > DIVERGENCE_THRESHOLD {
            return Ok(outcome(t, conj, it, residual, SolveStatus::InterpolationDivergence, projections, damping));
        }
        if it == opts.max_iters {
            return Ok(outcome(x, conj, it, residual, SolveStatus::MaxIterations, projections, damping));
        }

        let dq0 = t.q0 - x.q0;
        if opts.adaptive_damping && damping > OSCILLATION_DAMPING {
            if dq0 * last_dq0 < 0.0 && residual > 0.5 * last_residual {
                alternations += 1;
            } else {
                alternations = 0;
            }
            if alternations >= 6 {
                damping = OSCILLATION_DAMPING;
            }
        }
        last_dq0 = dq0;
        last_residual = residual;

        x = mix(&t, &x, damping);
        if project(&mut x, rho) {
            projections += 1;
        }
    }
    unreachable!("the loop returns on its last iteration")
}

/// Fixed point of the finite-`α` equations on the configured spectrum.
pub fn solve_fixed_point(config: &ModelConfig, opts: &SolveOptions) -> Result<FixedPoint> {
    config.validate()?;
    let ModelConfig { alpha, gamma, rho, lambda, ref spec, ref spectrum, ref coeffs, .. } = *config;
    iterate(rho, opts, |x| {
        let conj = channel_update(x, rho, alpha, gamma, spec, &opts.rules)?;
        let next = prior_update_spectral(&conj, lambda, gamma, rho, spectrum, coeffs)?;
        Ok((conj, next))
    })
}

/// Fixed point of the kernel-limit equations. The initial `q1` is set to `q0`
/// and the iteration preserves the equality.
pub fn solve_kernel_limit(config: &KernelConfig, opts: &SolveOptions) -> Result<FixedPoint> {
    config.validate()?;
    let KernelConfig { delta, rho, lambda, ref spec, ref coeffs, .. } = *config;
    let mut tied = opts.clone();
    tied.init.q1 = tied.init.q0;
    iterate(rho, &tied, |x| {
        let conj = kernel_channel_update(x, rho, delta, spec, &opts.rules)?;
        let next = kernel_prior_update(&conj, lambda, delta, rho, coeffs)?;
        Ok((conj, next))
    })
}

/// Kernel-limit square-loss solve together with the scaled gap to the closed form.
pub fn kernel_ridge_cross_check(config: &KernelConfig, opts: &SolveOptions) -> Result<(FixedPoint, f64)> {
    let fp = solve_kernel_limit(config, opts)?;
    let closed = kernel_ridge_closed_form(config.lambda, config.delta, config.rho, &config.coeffs)?;
    let gap = scaled_residual(&fp.params, &closed.order_params());
    Ok((fp, gap))
}

/// Solves a path of configurations in order, warm-starting each solve from the
/// previous converged fixed point.
pub fn solve_path(configs: &[ModelConfig], opts: &SolveOptions) -> Vec<Result<FixedPoint>> {
    let mut init = opts.init;
    configs
        .iter()
        .map(|cfg| {
            let out = solve_fixed_point(cfg, &opts.with_init(init));
            if let Ok(fp) = &out {
                if fp.converged {
                    init = fp.params;
                }
            }
            out
        })
        .collect()
}
