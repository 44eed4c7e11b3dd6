//! Minimizers of `(1/n) Σ_µ ℓ(y_µ, wᵀu_µ/√p) + λ/2 ‖w‖²`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use rfens_core::channels::{loss_value, Loss};
use rfens_core::{Error, Result};

use crate::scaling;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub grad_norm: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub w: DVector<f64>,
    pub stats: TrainStats,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonOptions {
    pub max_iters: usize,
    /// Stop once `‖∇‖ ≤ grad_tol · √p`.
    pub grad_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { max_iters: 200, grad_tol: 1e-8 }
    }
}

fn check(u: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<()> {
    if u.nrows() != y.len() {
        return Err(Error::Config(format!("{} feature rows but {} labels", u.nrows(), y.len())));
    }
    if u.nrows() == 0 || u.ncols() == 0 {
        return Err(Error::Config("empty feature matrix".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be positive and finite, got {lambda}")));
    }
    Ok(())
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `∂ℓ(y, h)/∂h`, with the zero subgradient at the hinge kink.
pub fn loss_derivative(loss: Loss, y: f64, h: f64) -> f64 {
    match loss {
        Loss::Square => h - y,
        Loss::Logistic => -y * sigmoid(-y * h),
        Loss::Hinge => {
            if y * h < 1.0 {
                -y
            } else {
                0.0
            }
        }
    }
}

pub fn scores(u: &DMatrix<f64>, w: &DVector<f64>) -> DVector<f64> {
    u * w * scaling::score(u.ncols())
}

/// `(1/n) Σ_µ ℓ(y_µ, wᵀu_µ/√p)`.
pub fn mean_loss(loss: Loss, u: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> f64 {
    let h = scores(u, w);
    h.iter().zip(y.iter()).map(|(h, y)| loss_value(loss, *y, *h)).sum::<f64>() / y.len() as f64
}

pub fn objective(loss: Loss, u: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>, lambda: f64) -> f64 {
    mean_loss(loss, u, y, w) + 0.5 * lambda * w.norm_squared()
}

pub fn gradient(loss: Loss, u: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>, lambda: f64) -> DVector<f64> {
    gradient_at(loss, u, y, w, &scores(u, w), lambda)
}

fn gradient_at(loss: Loss, u: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>, h: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let n = y.len() as f64;
    let r = h.zip_map(y, |h, y| loss_derivative(loss, y, h));
    u.tr_mul(&r) * (scaling::score(u.ncols()) / n) + w * lambda
}

fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    let e = SymmetricEigen::new(a.clone()).eigenvalues;
    let max = e.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let min = e.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
    max / min
}

fn cholesky(a: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let chol = Cholesky::new(a.clone()).ok_or_else(|| {
        Error::Numerical(format!("{what}: not positive definite (condition estimate {:.3e})", condition_estimate(a)))
    })?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), x| (lo.min(*x), hi.max(*x)));
    if (hi / lo).powi(2) * f64::EPSILON > 1.0 {
        return Err(Error::Numerical(format!(
            "{what}: ill-conditioned (condition estimate {:.3e})",
            condition_estimate(a)
        )));
    }
    Ok(chol)
}

/// Cholesky solve with one step of iterative refinement.
fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let chol = cholesky(a, what)?;
    let mut x = chol.solve(b);
    let r = b - a * &x;
    x += chol.solve(&r);
    if !x.iter().all(|t| t.is_finite()) {
        return Err(Error::Numerical(format!("{what}: non-finite solution")));
    }
    Ok(x)
}

fn add_diagonal(a: &mut DMatrix<f64>, c: f64) {
    for i in 0..a.nrows() {
        a[(i, i)] += c;
    }
}

/// Square loss `(y − h)²/2`, solved in the primal for `p ≤ n` and through the
/// `n × n` Gram matrix otherwise.
pub fn train_ridge(u: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<Trained> {
    check(u, y, lambda)?;
    let (n, p) = u.shape();
    let s = scaling::score(p);
    let nf = n as f64;
    let w = if p <= n {
        let mut a = u.tr_mul(u) * (s * s / nf);
        add_diagonal(&mut a, lambda);
        solve_spd(&a, &(u.tr_mul(y) * (s / nf)), "ridge normal equations")?
    } else {
        let mut g = u * u.transpose() * (s * s);
        add_diagonal(&mut g, nf * lambda);
        u.tr_mul(&solve_spd(&g, y, "ridge dual equations")?) * s
    };
    let grad_norm = gradient(Loss::Square, u, y, &w, lambda).norm();
    Ok(Trained { w, stats: TrainStats { grad_norm, iterations: 1 } })
}

/// Damped Newton on the logistic objective. For `p > n` the Newton system is
/// solved through the Woodbury identity on the `n × n` Gram matrix.
pub fn train_logistic(u: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, opts: &NewtonOptions) -> Result<Trained> {
    check(u, y, lambda)?;
    if y.iter().any(|t| *t != 1.0 && *t != -1.0) {
        return Err(Error::Config("logistic labels must be ±1".into()));
    }
    let (n, p) = u.shape();
    let s = scaling::score(p);
    let nf = n as f64;
    let gram = (p > n).then(|| u * u.transpose());
    let tol = opts.grad_tol * (p as f64).sqrt();
    let loss = Loss::Logistic;

    let mut w = DVector::zeros(p);
    let mut h = DVector::zeros(n);
    let mut f = objective(loss, u, y, &w, lambda);
    let mut grad_norm = f64::INFINITY;
    for it in 0..=opts.max_iters {
        let g = gradient_at(loss, u, y, &w, &h, lambda);
        grad_norm = g.norm();
        if grad_norm <= tol {
            return Ok(Trained { w, stats: TrainStats { grad_norm, iterations: it } });
        }
        if it == opts.max_iters {
            break;
        }
        // Hessian (1/n) Uᵀ diag(σ(h)σ(−h)) U s² + λ I
        let c = h.map(|t| (sigmoid(t) * sigmoid(-t) * s * s / nf).sqrt());
        let step = match &gram {
            None => {
                let mut b = u.clone();
                for (i, ci) in c.iter().enumerate() {
                    b.row_mut(i).scale_mut(*ci);
                }
                let mut hess = b.tr_mul(&b);
                add_diagonal(&mut hess, lambda);
                -cholesky(&hess, "logistic Newton system")?.solve(&g)
            }
            Some(gram) => {
                let mut m = gram.clone();
                for i in 0..n {
                    for j in 0..n {
                        m[(i, j)] *= c[i] * c[j];
                    }
                }
                add_diagonal(&mut m, lambda);
                let bg = (u * &g).component_mul(&c);
                let inner = cholesky(&m, "logistic Woodbury system")?.solve(&bg);
                -(&g - u.tr_mul(&inner.component_mul(&c))) / lambda
            }
        };
        let slope = g.dot(&step);
        let mut t = 1.0;
        loop {
            let w_new = &w + &step * t;
            let f_new = objective(loss, u, y, &w_new, lambda);
            if f_new <= f + 1e-4 * t * slope + 4.0 * f64::EPSILON * f.abs() {
                w = w_new;
                f = f_new;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                return Err(Error::Numerical(format!(
                    "logistic line search stalled at iteration {it}, gradient norm {grad_norm:.3e}"
                )));
            }
        }
        h = scores(u, &w);
    }
    Err(Error::Convergence(format!(
        "logistic Newton hit the cap of {} iterations, gradient norm {grad_norm:.3e} > {tol:.3e}",
        opts.max_iters
    )))
}

/// Trains one learner per feature block on shared labels; returns `W` (`p × K`).
pub fn train_ensemble(
    features: &[DMatrix<f64>],
    y: &DVector<f64>,
    loss: Loss,
    lambda: f64,
    opts: &NewtonOptions,
) -> Result<(DMatrix<f64>, Vec<TrainStats>)> {
    let p = features.first().ok_or_else(|| Error::Config("no feature blocks".into()))?.ncols();
    let mut w = DMatrix::zeros(p, features.len());
    let mut stats = Vec::with_capacity(features.len());
    for (k, u) in features.iter().enumerate() {
        let t = match loss {
            Loss::Square => train_ridge(u, y, lambda),
            Loss::Logistic => train_logistic(u, y, lambda, opts),
            Loss::Hinge => Err(Error::Config("hinge training is not supported by the ERM lab".into())),
        }
        .map_err(|e| e.context(format!("learner {k}")))?;
        w.set_column(k, &t.w);
        stats.push(t.stats);
    }
    Ok((w, stats))
}
