//! Theory at a single point and along a sweep axis.

use rayon::prelude::*;
use serde_json::{json, Value};

use rfens_core::channels::{training_loss, ChannelRules, ChannelSpec, OrderParams};
use rfens_core::observables::{
    classification_decomposition, classification_error_avg, disagreement_probability, mse_test_error, EnsembleCovariance,
    EnsembleSize,
};
use rfens_core::solver::{solve_fixed_point, solve_kernel_limit, FixedPoint, SolveOptions};
use rfens_core::{Error, Result};
use rfens_erm::experiment::csv_float;

use crate::config::{Axis, Mode, ModelSpec, Resolved, SweepConfig};

/// Test errors and related quantities at a fixed point.
#[derive(Clone, Debug, PartialEq)]
pub struct Observables {
    pub eps_g: Vec<(EnsembleSize, f64)>,
    pub eps_bar: f64,
    pub delta_eps: f64,
    pub disagreement: f64,
    pub training_loss: f64,
}

pub fn observables(spec: &ChannelSpec, rho: f64, x: &OrderParams, ks: &[EnsembleSize], rules: &ChannelRules) -> Result<Observables> {
    let cov = |k| EnsembleCovariance::from_params(x, rho, k);
    let mut eps_g = Vec::with_capacity(ks.len());
    for k in ks {
        let e = if spec.is_classification() {
            classification_error_avg(&cov(*k)?)?
        } else {
            mse_test_error(&cov(*k)?).eps_g
        };
        eps_g.push((*k, e));
    }
    let (eps_bar, delta_eps) = if spec.is_classification() {
        let d = classification_decomposition(rho, x)?;
        (d.eps_bar, d.delta_eps)
    } else {
        let d = mse_test_error(&cov(EnsembleSize::Finite(1))?);
        (d.eps_bar, d.delta_eps)
    };
    Ok(Observables {
        eps_g,
        eps_bar,
        delta_eps,
        disagreement: disagreement_probability(x.q0, x.q1)?,
        training_loss: training_loss(x, rho, spec, rules)?,
    })
}

pub fn solve(resolved: &Resolved, opts: &SolveOptions) -> Result<FixedPoint> {
    match resolved {
        Resolved::Finite(c) => solve_fixed_point(c, opts),
        Resolved::Kernel(c) => solve_kernel_limit(c, opts),
    }
}

/// Outcome at one grid point.
#[derive(Clone, Debug)]
pub struct PointResult {
    pub value: f64,
    pub spec: ModelSpec,
    pub fixed_point: std::result::Result<FixedPoint, String>,
    pub observables: Option<Observables>,
}

impl PointResult {
    pub fn status(&self) -> &'static str {
        match &self.fixed_point {
            Ok(fp) => fp.status.as_str(),
            Err(_) => "error",
        }
    }

    pub fn converged(&self) -> bool {
        matches!(&self.fixed_point, Ok(fp) if fp.converged)
    }
}

fn point(spec: ModelSpec, value: f64, opts: &SolveOptions) -> PointResult {
    let run = || -> Result<(FixedPoint, Option<Observables>)> {
        let resolved = spec.resolve()?;
        let fp = solve(&resolved, opts)?;
        let obs = observables(&spec.channel()?, spec.rho, &fp.params, &spec.ks(), &opts.rules).ok();
        Ok((fp, obs))
    };
    match run() {
        Ok((fp, obs)) => PointResult { value, spec, fixed_point: Ok(fp), observables: obs },
        Err(e) => PointResult { value, spec, fixed_point: Err(e.to_string()), observables: None },
    }
}

/// JSON report of one solve.
pub fn solve_report(spec: &ModelSpec, opts: &SolveOptions) -> Result<(FixedPoint, Value)> {
    let fp = solve(&spec.resolve()?, opts)?;
    let obs = observables(&spec.channel()?, spec.rho, &fp.params, &spec.ks(), &opts.rules);
    let observables = match &obs {
        Ok(o) => {
            let eps: serde_json::Map<String, Value> =
                o.eps_g.iter().map(|(k, e)| (format!("k{k}"), json!(e))).collect();
            json!({
                "eps_g": eps,
                "eps_bar": o.eps_bar,
                "delta_eps": o.delta_eps,
                "disagreement": o.disagreement,
                "training_loss": o.training_loss,
            })
        }
        Err(e) => json!({ "error": e.to_string() }),
    };
    let (x, c) = (fp.params, fp.conj);
    let report = json!({
        "m": x.m, "q0": x.q0, "q1": x.q1, "v": x.v,
        "m_hat": c.m_hat, "q0_hat": c.q0_hat, "q1_hat": c.q1_hat, "v_hat": c.v_hat,
        "iterations": fp.iterations,
        "residual": fp.residual,
        "converged": fp.converged,
        "status": fp.status.as_str(),
        "observables": observables,
    });
    Ok((fp, report))
}

/// Splits `0..len` into `parts` contiguous ranges of near-equal length.
pub fn contiguous_chunks(len: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    let parts = parts.clamp(1, len.max(1));
    let base = len / parts;
    let extra = len % parts;
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let size = base + usize::from(i < extra);
            let r = start..start + size;
            start += size;
            r
        })
        .collect()
}

pub fn worker_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Resource(format!("cannot start {jobs} workers: {e}")))
}

/// Solves every grid point. The grid is cut into `jobs` contiguous chunks;
/// within a chunk each point warm-starts from the previous converged one.
pub fn run_sweep(cfg: &SweepConfig, opts: &SolveOptions, jobs: usize) -> Result<Vec<PointResult>> {
    let grid = cfg.validate()?;
    opts.validate()?;
    let specs: Vec<ModelSpec> = grid.iter().map(|v| cfg.base.at(cfg.axis, *v)).collect::<Result<_>>()?;
    let chunks = contiguous_chunks(grid.len(), jobs);
    let solve_chunk = |range: &std::ops::Range<usize>| -> Vec<PointResult> {
        let mut init = opts.init;
        range
            .clone()
            .map(|i| {
                let r = point(specs[i].clone(), grid[i], &opts.with_init(init));
                if let Ok(fp) = &r.fixed_point {
                    if fp.converged {
                        init = fp.params;
                    }
                }
                r
            })
            .collect()
    };
    let parts: Vec<Vec<PointResult>> = worker_pool(jobs)?.install(|| chunks.par_iter().map(solve_chunk).collect());
    Ok(parts.into_iter().flatten().collect())
}

/// Column names of the theory table.
pub fn sweep_header(cfg: &SweepConfig) -> Vec<String> {
    let axis = cfg.axis.name();
    let mut h = vec![axis.to_string()];
    let fixed: &[&str] = match cfg.base.mode {
        Mode::Finite => &["alpha", "gamma", "lambda"],
        Mode::Kernel => &["delta", "lambda"],
    };
    h.extend(fixed.iter().filter(|c| **c != axis).map(|c| c.to_string()));
    h.extend(["m", "q0", "q1", "v", "m_hat", "q0_hat", "q1_hat", "v_hat"].map(String::from));
    if cfg.axis == Axis::K {
        h.push("eps_g".into());
    } else {
        h.extend(cfg.base.ks().iter().map(|k| format!("eps_g_k{k}")));
    }
    h.extend(["eps_bar", "delta_eps", "disagreement", "iterations", "residual", "status"].map(String::from));
    h
}

/// One row per point, aligned with [`sweep_header`].
pub fn sweep_row(cfg: &SweepConfig, r: &PointResult) -> Vec<String> {
    let axis = cfg.axis.name();
    let f = csv_float;
    let nan = f64::NAN;
    let mut row = vec![if cfg.axis == Axis::K { format!("{}", r.value as usize) } else { f(r.value) }];
    let s = &r.spec;
    let gamma = s.gamma_value().unwrap_or(nan);
    let fixed: Vec<(&str, f64)> = match s.mode {
        Mode::Finite => vec![("alpha", s.alpha.unwrap_or(nan)), ("gamma", gamma), ("lambda", s.lambda)],
        Mode::Kernel => vec![("delta", s.delta.unwrap_or(nan)), ("lambda", s.lambda)],
    };
    row.extend(fixed.iter().filter(|(c, _)| *c != axis).map(|(_, v)| f(*v)));
    match &r.fixed_point {
        Ok(fp) => {
            let (x, c) = (fp.params, fp.conj);
            row.extend([x.m, x.q0, x.q1, x.v, c.m_hat, c.q0_hat, c.q1_hat, c.v_hat].map(f));
        }
        Err(_) => row.extend([nan; 8].map(f)),
    }
    let neps = if cfg.axis == Axis::K { 1 } else { cfg.base.k.len() };
    match &r.observables {
        Some(o) => {
            row.extend(o.eps_g.iter().map(|(_, e)| f(*e)));
            row.extend([o.eps_bar, o.delta_eps, o.disagreement].map(f));
        }
        None => row.extend(vec![f(nan); neps + 3]),
    }
    match &r.fixed_point {
        Ok(fp) => row.extend([fp.iterations.to_string(), f(fp.residual)]),
        Err(_) => row.extend(["0".to_string(), f(nan)]),
    }
    row.push(r.status().to_string());
    row
}

pub fn write_table<W: std::io::Write>(out: W, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
