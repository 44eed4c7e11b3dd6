use rfens_core::channels::Loss;
use rfens_core::observables::confidence_cell_density;
use rfens_core::solver::{FixedPoint, SolveOptions};
use rfens_core::{Error, Result};
use rfens_erm::experiment::csv_float;

use crate::config::ModelSpec;
use crate::sweep::solve;

/// Solves the logistic model and renders the cell-averaged joint density of
/// two learners' confidence scores. Metadata lines start with `#`.
pub fn confidence_density_csv(spec: &ModelSpec, opts: &SolveOptions, cells: usize) -> Result<(FixedPoint, String)> {
    if spec.loss != Loss::Logistic {
        return Err(Error::Config("loss: confidence scores need the logistic loss".into()));
    }
    let fp = solve(&spec.resolve()?, opts)?.require_converged()?;
    let x = fp.params;
    let (centers, dens) = confidence_cell_density(x.q0, x.q1, cells)?;
    let f = csv_float;
    let mut out = String::new();
    out.push_str(&format!("# q0={}\n# q1={}\n", f(x.q0), f(x.q1)));
    if let Some(a) = spec.alpha {
        out.push_str(&format!("# p_over_n={}\n", f(1.0 / a)));
    }
    out.push_str(&format!("# m={}\n# cells={cells}\n", f(x.m)));
    out.push_str("phi1");
    for c in &centers {
        out.push(',');
        out.push_str(&f(*c));
    }
    out.push('\n');
    for (i, c) in centers.iter().enumerate() {
        out.push_str(&f(*c));
        for j in 0..cells {
            out.push(',');
            out.push_str(&f(dens[(i, j)]));
        }
        out.push('\n');
    }
    Ok((fp, out))
}
