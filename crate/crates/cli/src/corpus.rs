//! Golden records: pinned configurations with stored values, tolerances and
//! the origin of each value.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use rfens_core::observables::{generic_gen_error, EnsembleCovariance, EnsembleSize, Estimator, Metric};
use rfens_core::observables::second_difference_spike;
use rfens_core::{Error, Result};

use crate::config::{load_json, ModelSpec, SweepConfig};
use crate::sweep::{run_sweep, solve_report, sweep_header, sweep_row};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProvenanceKind {
    /// Value from an independent closed form or integral.
    Oracle,
    /// Qualitative property of a published curve.
    PublishedCurve,
    /// Value pinned from an earlier run of this code.
    Regression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub kind: ProvenanceKind,
    pub source: String,
}

/// Pass when `|new − stored| ≤ abs + rel·|stored|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerance {
    #[serde(default)]
    pub abs: f64,
    #[serde(default)]
    pub rel: f64,
}

impl Tolerance {
    pub fn accepts(&self, stored: f64, new: f64) -> bool {
        (new - stored).abs() <= self.abs + self.rel * stored.abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Property {
    /// The column is largest at the grid value `at`.
    MaximumAt { column: String, at: f64 },
    /// `column / over` (or `column`) increases along the grid.
    Increasing { column: String, over: Option<String> },
    /// The largest discrete second difference of `column` sits within `window`
    /// of `near` and exceeds `min_ratio` times the median one.
    Kink { column: String, near: f64, window: f64, min_ratio: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Check {
    FixedPoint {
        model: ModelSpec,
        values: BTreeMap<String, f64>,
    },
    MonteCarlo {
        rho: f64,
        m: f64,
        q0: f64,
        q1: f64,
        k: usize,
        estimator: Estimator,
        metric: Metric,
        samples: usize,
        seed: u64,
        value: f64,
    },
    SweepProperty {
        sweep: SweepConfig,
        property: Property,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldenRecord {
    pub name: String,
    pub config_hash: String,
    pub provenance: Provenance,
    pub tolerance: Tolerance,
    pub check: Check,
}

/// SHA-256 of the record's configuration with stored values removed.
pub fn config_hash(check: &Check) -> String {
    let mut v = serde_json::to_value(check).expect("plain data");
    if let Value::Object(map) = &mut v {
        map.remove("values");
        map.remove("value");
    }
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecordReport {
    pub name: String,
    pub passed: bool,
    /// Largest `|new − stored|` over the record's values.
    pub max_deviation: f64,
    pub message: String,
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Result<Vec<f64>> {
    let j = header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Config(format!("no column `{name}` in the sweep output")))?;
    rows.iter()
        .map(|r| r[j].parse::<f64>().map_err(|e| Error::Numerical(format!("column {name}: {e}"))))
        .collect()
}

fn check_property(sweep: &SweepConfig, property: &Property) -> Result<(bool, String)> {
    let points = run_sweep(sweep, &sweep.base.solver.options(), 1)?;
    if let Some(bad) = points.iter().find(|p| !p.converged()) {
        return Ok((false, format!("grid point {} did not converge ({})", bad.value, bad.status())));
    }
    let header = sweep_header(sweep);
    let rows: Vec<Vec<String>> = points.iter().map(|p| sweep_row(sweep, p)).collect();
    let grid: Vec<f64> = points.iter().map(|p| p.value).collect();
    Ok(match property {
        Property::MaximumAt { column: c, at } => {
            let v = column(&header, &rows, c)?;
            let i = (0..v.len()).max_by(|a, b| v[*a].total_cmp(&v[*b])).unwrap_or(0);
            ((grid[i] - at).abs() < 1e-12, format!("{c} peaks at {}", grid[i]))
        }
        Property::Increasing { column: c, over } => {
            let mut v = column(&header, &rows, c)?;
            if let Some(o) = over {
                let d = column(&header, &rows, o)?;
                v.iter_mut().zip(&d).for_each(|(a, b)| *a /= b);
            }
            let min_step = v.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
            (min_step > 0.0, format!("smallest increment {min_step:.3e}"))
        }
        Property::Kink { column: c, near, window, min_ratio } => {
            let v = column(&header, &rows, c)?;
            match second_difference_spike(&v) {
                Some((i, ratio)) => (
                    (grid[i] - near).abs() <= *window && ratio >= *min_ratio,
                    format!("spike at {} with ratio {ratio:.2}", grid[i]),
                ),
                None => (false, "grid too short".into()),
            }
        }
    })
}

/// Re-runs one record. Returns the report and, for fixed-point records, the
/// regenerated values. A stale hash fails the record unless `allow_stale`.
pub fn check_record(rec: &GoldenRecord, allow_stale: bool) -> (RecordReport, Option<BTreeMap<String, f64>>) {
    let report = |passed, max_deviation, message: String| RecordReport { name: rec.name.clone(), passed, max_deviation, message };
    let hash = config_hash(&rec.check);
    if hash != rec.config_hash && !allow_stale {
        return (report(false, f64::NAN, format!("config hash mismatch: stored {}, computed {hash}", rec.config_hash)), None);
    }
    let run = || -> Result<(RecordReport, Option<BTreeMap<String, f64>>)> {
        match &rec.check {
            Check::FixedPoint { model, values } => {
                let (fp, json) = solve_report(model, &model.solver.options())?;
                if !fp.converged {
                    return Ok((report(false, f64::NAN, format!("solver: {}", fp.status.as_str())), None));
                }
                let mut fresh = BTreeMap::new();
                let mut worst = 0.0_f64;
                let mut bad = Vec::new();
                for (key, stored) in values {
                    let new = lookup(&json, key)
                        .ok_or_else(|| Error::Config(format!("record {}: unknown value `{key}`", rec.name)))?;
                    worst = worst.max((new - stored).abs());
                    if !rec.tolerance.accepts(*stored, new) {
                        bad.push(format!("{key}: stored {stored}, got {new}"));
                    }
                    fresh.insert(key.clone(), new);
                }
                let msg = if bad.is_empty() { "ok".to_string() } else { bad.join("; ") };
                Ok((report(bad.is_empty(), worst, msg), Some(fresh)))
            }
            Check::MonteCarlo { rho, m, q0, q1, k, estimator, metric, samples, seed, value } => {
                let cov = EnsembleCovariance::new(*rho, *m, *q0, *q1, EnsembleSize::Finite(*k))?;
                let est = generic_gen_error(&cov, *estimator, *metric, *samples, *seed)?;
                let dev = (est.estimate - value).abs();
                let ok = rec.tolerance.accepts(*value, est.estimate);
                Ok((report(ok, dev, format!("estimate {} ± {:.2e}", est.estimate, est.std_error)), None))
            }
            Check::SweepProperty { sweep, property } => {
                let (ok, msg) = check_property(sweep, property)?;
                Ok((report(ok, 0.0, msg), None))
            }
        }
    };
    run().unwrap_or_else(|e| (report(false, f64::NAN, e.to_string()), None))
}

/// Value at a dotted path of the solve report, e.g. `observables.eps_g.k1`.
fn lookup(json: &Value, key: &str) -> Option<f64> {
    key.split('.').try_fold(json, |v, part| v.get(part))?.as_f64()
}

pub fn load_corpus(dir: &Path) -> Result<Vec<(PathBuf, GoldenRecord)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Config(format!("cannot read corpus {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.into_iter().map(|p| load_json(&p).map(|r| (p.clone(), r)).map_err(|e| e.context(p.display()))).collect()
}

/// Re-runs every record in `dir`. Records are only rewritten when `write` is
/// set; fixed-point values are replaced by the regenerated ones and every hash
/// is refreshed.
pub fn regenerate_goldens(dir: &Path, write: bool, jobs: usize) -> Result<Vec<RecordReport>> {
    let corpus = load_corpus(dir)?;
    let results: Vec<(RecordReport, Option<BTreeMap<String, f64>>)> =
        crate::sweep::worker_pool(jobs)?.install(|| corpus.par_iter().map(|(_, r)| check_record(r, write)).collect());
    if write {
        for ((path, rec), (_, fresh)) in corpus.iter().zip(&results) {
            let mut rec = rec.clone();
            if let (Check::FixedPoint { values, .. }, Some(fresh)) = (&mut rec.check, fresh) {
                *values = fresh.clone();
            }
            rec.config_hash = config_hash(&rec.check);
            std::fs::write(path, serde_json::to_string_pretty(&rec)? + "\n")?;
        }
    }
    Ok(results.into_iter().map(|(r, _)| r).collect())
}
