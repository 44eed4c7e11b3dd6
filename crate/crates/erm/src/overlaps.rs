use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use rfens_core::priors::FeatureEnsemble;
use rfens_core::{Error, Result};

use crate::train::TrainStats;

/// Weights `W` (`p × K`) of `K` learners with their features and diagnostics.
#[derive(Clone, Debug)]
pub struct TrainedEnsemble {
    pub w: DMatrix<f64>,
    pub ensemble: FeatureEnsemble,
    pub stats: Vec<TrainStats>,
}

/// Learner-averaged `m`, `q0` and pair-averaged `q1` (absent for `K = 1`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overlaps {
    pub m: f64,
    pub q0: f64,
    pub q1: Option<f64>,
}

/// Overlaps under the Gaussian-equivalent covariances: `m_k = κ1 w_kᵀF_kθ/(d√p)`
/// and `q_kl = w_kᵀ Ω_kl w_l/p` with `Ω_kl = κ1² F_k F_lᵀ/d + [F_k = F_l] κ*² I`.
pub fn empirical_overlaps(trained: &TrainedEnsemble) -> Result<Overlaps> {
    let e = &trained.ensemble;
    let (p, k) = trained.w.shape();
    if p != e.p() || k != e.k() {
        return Err(Error::Config(format!(
            "weights of shape {p}×{k} do not match {} learners with p = {}",
            e.k(),
            e.p()
        )));
    }
    let c = e.coeffs();
    let (pf, df) = (p as f64, e.d() as f64);
    // a_k = F_kᵀ w_k
    let a: Vec<DVector<f64>> = (0..k).map(|i| e.features(i).tr_mul(&trained.w.column(i))).collect();
    let m = a.iter().map(|ai| c.kappa1 * ai.dot(e.theta()) / (df * pf.sqrt())).sum::<f64>() / k as f64;
    let q = |i: usize, j: usize| {
        let mut v = c.kappa1 * c.kappa1 * a[i].dot(&a[j]) / df;
        if i == j || e.features(i) == e.features(j) {
            v += c.kappa_star_sq() * trained.w.column(i).norm_squared();
        }
        v / pf
    };
    let q0 = (0..k).map(|i| q(i, i)).sum::<f64>() / k as f64;
    let q1 = (k >= 2).then(|| {
        let mut s = 0.0;
        for i in 0..k {
            for j in i + 1..k {
                s += q(i, j);
            }
        }
        s / (k * (k - 1) / 2) as f64
    });
    Ok(Overlaps { m, q0, q1 })
}
