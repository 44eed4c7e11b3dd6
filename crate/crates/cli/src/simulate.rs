//! Theory columns paired with finite-size experiment aggregates.

use rfens_core::observables::EnsembleSize;
use rfens_core::random::derive_seed;
use rfens_core::solver::SolveOptions;
use rfens_core::{Error, Result};
use rfens_erm::experiment::csv_float;
use rfens_erm::{run_experiment, Aggregate, ExperimentConfig, ExperimentResult};

use crate::config::{Axis, Mode, SimulateBlock, SweepConfig};
use crate::sweep::{run_sweep, sweep_header, sweep_row, worker_pool, PointResult};

/// Theory and experiment at one grid point.
#[derive(Clone, Debug)]
pub struct SimPoint {
    pub theory: PointResult,
    pub sizes: Option<(usize, usize, usize)>,
    pub experiment: std::result::Result<ExperimentResult, String>,
}

impl SimPoint {
    pub fn failures(&self) -> usize {
        match &self.experiment {
            Ok(r) => r.failures,
            Err(_) => 1,
        }
    }
}

/// Finite ensemble sizes of the model that the experiment reports.
fn reported_sizes(cfg: &SweepConfig, value: f64) -> Vec<usize> {
    if cfg.axis == Axis::K {
        return vec![value as usize];
    }
    cfg.base.ks().iter().filter_map(|k| k.finite().ok()).collect()
}

fn experiment_config(cfg: &SweepConfig, block: &SimulateBlock, r: &PointResult, index: usize) -> Result<(ExperimentConfig, (usize, usize, usize))> {
    let s = &r.spec;
    let alpha = s.alpha.ok_or_else(|| Error::Config("simulate: alpha undefined".into()))?;
    let (n, p, d) = block.sizes(alpha, s.gamma_value()?)?;
    let sizes = reported_sizes(cfg, r.value);
    let kmax = sizes.iter().copied().max().unwrap_or(1);
    let learners = block.learners.unwrap_or(kmax.max(2));
    let mut e = ExperimentConfig::new(s.loss, s.lambda, n, p, d, learners, block.trials, derive_seed(block.seed, index as u64));
    e.activation = s.activation;
    e.rho = s.rho;
    e.ensemble_sizes = sizes;
    e.seeds = block.seeds.clone();
    e.test_samples = block.test_samples;
    e.gaussian_equivalent = block.gaussian_equivalent;
    e.newton = block.newton;
    e.validate()?;
    Ok((e, (n, p, d)))
}

fn check(cfg: &SweepConfig) -> Result<&SimulateBlock> {
    let block = cfg.simulate.as_ref().ok_or_else(|| Error::Config("simulate: block missing".into()))?;
    if cfg.base.mode != Mode::Finite {
        return Err(Error::Config("simulate: experiments need finite mode".into()));
    }
    if block.d.is_some() == block.min_dp.is_some() {
        return Err(Error::Config("simulate: set exactly one of `d` and `min_dp`".into()));
    }
    Ok(block)
}

/// `None` when the block asks for no trials: the output is then the theory
/// table alone.
pub fn run_simulate(cfg: &SweepConfig, opts: &SolveOptions, jobs: usize) -> Result<(Vec<PointResult>, Option<Vec<SimPoint>>)> {
    let block = check(cfg)?;
    let theory = run_sweep(cfg, opts, jobs)?;
    let trials = block.seeds.as_ref().map_or(block.trials, |s| s.len());
    if trials == 0 {
        return Ok((theory, None));
    }
    let pool = worker_pool(jobs)?;
    let mut points = Vec::with_capacity(theory.len());
    for (i, r) in theory.iter().enumerate() {
        let (experiment, sizes) = match experiment_config(cfg, block, r, i) {
            Ok((e, sizes)) => (pool.install(|| run_experiment(&e)).map_err(|e| e.to_string()), Some(sizes)),
            Err(e) => (Err(e.to_string()), None),
        };
        points.push(SimPoint { theory: r.clone(), sizes, experiment });
    }
    Ok((theory, Some(points)))
}

pub fn simulate_header(cfg: &SweepConfig) -> Vec<String> {
    let mut h = sweep_header(cfg);
    h.extend(["n", "p", "d", "trials_ok", "trials_failed"].map(String::from));
    let mut names: Vec<String> = ["m", "q0", "q1"].map(String::from).into();
    if cfg.axis == Axis::K {
        names.push("eps_g".into());
    } else {
        names.extend(cfg.base.ks().iter().filter(|k| k.finite().is_ok()).map(|k| format!("eps_g_k{k}")));
    }
    names.push("disagreement".into());
    for n in names {
        h.extend([format!("{n}_emp"), format!("{n}_se"), format!("{n}_z")]);
    }
    h.push("sim_status".into());
    h
}

pub fn simulate_row(cfg: &SweepConfig, p: &SimPoint) -> Vec<String> {
    let f = csv_float;
    let nan = f64::NAN;
    let mut row = sweep_row(cfg, &p.theory);
    let (n, pp, d) = p.sizes.unwrap_or((0, 0, 0));
    row.extend([n, pp, d].map(|x| x.to_string()));
    let x = p.theory.fixed_point.as_ref().ok().map(|fp| fp.params);
    let theory_eps: Vec<f64> = match &p.theory.observables {
        Some(o) => o
            .eps_g
            .iter()
            .filter(|(k, _)| matches!(k, EnsembleSize::Finite(_)))
            .map(|(_, e)| *e)
            .collect(),
        None => vec![nan; reported_sizes(cfg, p.theory.value).len()],
    };
    let theory_dis = p.theory.observables.as_ref().map_or(nan, |o| o.disagreement);
    let triple = |a: &Aggregate, t: f64| [f(a.mean), f(a.std_error), f(a.z_score(t))];
    match &p.experiment {
        Ok(r) => {
            row.extend([r.successes.to_string(), r.failures.to_string()]);
            row.extend(triple(&r.m, x.map_or(nan, |x| x.m)));
            row.extend(triple(&r.q0, x.map_or(nan, |x| x.q0)));
            row.extend(triple(&r.q1, x.map_or(nan, |x| x.q1)));
            for (a, t) in r.eps_g.iter().zip(&theory_eps) {
                row.extend(triple(a, *t));
            }
            row.extend(triple(&r.disagreement, theory_dis));
            row.push(if r.failures == 0 { "ok" } else if r.successes > 0 { "partial" } else { "failed" }.into());
        }
        Err(_) => {
            let trials = cfg.simulate.as_ref().map_or(0, |b| b.seeds.as_ref().map_or(b.trials, |s| s.len()));
            row.extend(["0".to_string(), trials.to_string()]);
            let cols = 3 * (4 + theory_eps.len());
            row.extend(vec![f(nan); cols]);
            row.push("failed".into());
        }
    }
    row
}
