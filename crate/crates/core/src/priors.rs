//! Prior updates: conjugate parameters to overlaps, from a spectral density,
//! from sampled feature matrices, and in the kernel limit.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

use crate::channels::{channel_with_prefactors, ChannelRules, ChannelSpec, ConjugateParams, OrderParams};
use crate::random::{derive_seed, feature_matrix, stream_rng};
use crate::spectrum::{ActivationCoeffs, SpectralModel, MAX_FEATURE_ENTRIES};
use crate::{Error, Result};

/// `K` independent feature matrices together with a teacher vector.
#[derive(Clone, Debug)]
pub struct FeatureEnsemble {
    features: Vec<DMatrix<f64>>,
    coeffs: ActivationCoeffs,
    theta: DVector<f64>,
    seeds: Vec<u64>,
    rho: f64,
}

impl FeatureEnsemble {
    /// Samples `k` matrices of shape `p × d` and `θ ~ N(0, ρ I_d)`.
    pub fn sample(k: usize, p: usize, d: usize, rho: f64, coeffs: ActivationCoeffs, seed: u64) -> Result<Self> {
        if k == 0 || p == 0 || d == 0 {
            return Err(Error::Config(format!("need K, p, d ≥ 1, got K={k}, p={p}, d={d}")));
        }
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::Config(format!("teacher variance must be positive, got {rho}")));
        }
        if p.saturating_mul(d).saturating_mul(k) > MAX_FEATURE_ENTRIES {
            return Err(Error::Resource(format!(
                "{k} feature matrices of shape {p}×{d} exceed the cap of {MAX_FEATURE_ENTRIES} entries"
            )));
        }
        let seeds: Vec<u64> = (0..k as u64).map(|i| derive_seed(seed, i)).collect();
        let features = seeds.iter().map(|s| feature_matrix(p, d, *s)).collect();
        let normal = Normal::new(0.0, rho.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = stream_rng(seed, 1);
        let theta = DVector::from_iterator(d, (0..d).map(|_| normal.sample(&mut rng)));
        Ok(FeatureEnsemble { features, coeffs, theta, seeds, rho })
    }

    pub fn from_parts(
        features: Vec<DMatrix<f64>>,
        theta: DVector<f64>,
        rho: f64,
        coeffs: ActivationCoeffs,
        seeds: Vec<u64>,
    ) -> Result<Self> {
        let first = features.first().ok_or_else(|| Error::Config("empty feature ensemble".into()))?;
        let shape = first.shape();
        if features.iter().any(|f| f.shape() != shape) {
            return Err(Error::Config("feature matrices must share their shape".into()));
        }
        if theta.len() != shape.1 || seeds.len() != features.len() {
            return Err(Error::Config("teacher dimension or seed count does not match the features".into()));
        }
        Ok(FeatureEnsemble { features, coeffs, theta, seeds, rho })
    }

    pub fn k(&self) -> usize {
        self.features.len()
    }

    pub fn p(&self) -> usize {
        self.features[0].nrows()
    }

    pub fn d(&self) -> usize {
        self.features[0].ncols()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn features(&self, k: usize) -> &DMatrix<f64> {
        &self.features[k]
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn coeffs(&self) -> ActivationCoeffs {
        self.coeffs
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    /// Covariance block `κ1² F_k F_lᵀ/d + [k = l] κ*² I` of the equivalent
    /// Gaussian model.
    pub fn omega_block(&self, k: usize, l: usize) -> DMatrix<f64> {
        let c = self.coeffs;
        let d = self.d() as f64;
        let mut out = &self.features[k] * self.features[l].transpose() * (c.kappa1 * c.kappa1 / d);
        if k == l {
            for i in 0..out.nrows() {
                out[(i, i)] += c.kappa_star_sq();
            }
        }
        out
    }
}

fn check_conj(conj: &ConjugateParams) -> Result<()> {
    let ConjugateParams { m_hat, q0_hat, q1_hat, v_hat } = *conj;
    if ![m_hat, q0_hat, q1_hat, v_hat].iter().all(|x| x.is_finite()) {
        return Err(Error::Domain(format!("non-finite conjugate parameters {conj:?}")));
    }
    if v_hat < 0.0 {
        return Err(Error::Domain(format!("v̂ must be non-negative, got {v_hat}")));
    }
    Ok(())
}

/// Overlaps from the spectral density of `Ω`, for teacher variance `rho`.
pub fn prior_update_spectral(
    conj: &ConjugateParams,
    lambda: f64,
    gamma: f64,
    rho: f64,
    model: &SpectralModel,
    coeffs: &ActivationCoeffs,
) -> Result<OrderParams> {
    check_conj(conj)?;
    if !(lambda >= 0.0) || !(gamma > 0.0) {
        return Err(Error::Config(format!("need λ ≥ 0 and γ > 0, got λ={lambda}, γ={gamma}")));
    }
    let ConjugateParams { m_hat, q0_hat, q1_hat, v_hat } = *conj;
    let ks2 = coeffs.kappa_star_sq();
    let signal = rho * m_hat * m_hat;
    let (mut v, mut i, mut q0) = (0.0, 0.0, 0.0);
    let mut add = |s: f64, w: f64| -> Result<()> {
        let den = lambda + v_hat * s;
        if !(den > 0.0) || !den.is_finite() {
            return Err(Error::Domain(format!("λ + v̂s = {den} vanishes at s = {s}")));
        }
        v += w * s / den;
        i += w * (s - ks2) / den;
        q0 += w * ((q0_hat + signal) * s * s - signal * ks2 * s) / (den * den);
        Ok(())
    };
    for &(s, w) in model.points() {
        add(s, w)?;
    }
    if model.atom_mass() > 0.0 {
        add(model.atom_location(), model.atom_mass())?;
    }
    Ok(OrderParams {
        m: rho * m_hat * i / gamma.sqrt(),
        q0,
        q1: (signal + q1_hat) * i * i / gamma,
        v,
    })
}

/// Matrix with its Cholesky-based inverse `Z = N⁻¹` and `Y = N⁻¹ H` for
/// `N = cI + bH`.
struct Resolvent {
    z: DMatrix<f64>,
    y: DMatrix<f64>,
}

impl Resolvent {
    fn new(h: &DMatrix<f64>, c: f64, b: f64) -> Result<Self> {
        let mut n = h * b;
        for i in 0..n.nrows() {
            n[(i, i)] += c;
        }
        let chol = n
            .cholesky()
            .ok_or_else(|| Error::Numerical("λI + v̂Ω is not positive definite".into()))?;
        Ok(Resolvent { z: chol.inverse(), y: chol.solve(h) })
    }
}

/// `tr(A B)` without forming the product.
fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.transpose().iter()).map(|(x, y)| x * y).sum()
}

/// Overlaps from the trace formulas over the covariance blocks of two sampled
/// feature matrices. Every trace is taken on the smaller of the `p`- and
/// `d`-dimensional Gram matrices.
pub fn prior_update_matrix_oracle(conj: &ConjugateParams, lambda: f64, ensemble: &FeatureEnsemble) -> Result<OrderParams> {
    check_conj(conj)?;
    if ensemble.k() < 2 {
        return Err(Error::Config("the matrix oracle needs two independent feature matrices".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("λ must be non-negative, got {lambda}")));
    }
    let ConjugateParams { m_hat, q0_hat, q1_hat, v_hat } = *conj;
    let (p, d) = (ensemble.p(), ensemble.d());
    let coeffs = ensemble.coeffs();
    let rho = ensemble.rho();
    let (k2, ks2) = (coeffs.kappa1 * coeffs.kappa1, coeffs.kappa_star_sq());
    let c = lambda + v_hat * ks2;
    let b = v_hat * k2;
    if !(c > 0.0) {
        return Err(Error::Domain(format!("λ + v̂κ*² = {c} must be positive")));
    }

    let (f1, f2) = (ensemble.features(0), ensemble.features(1));
    let inv_d = 1.0 / d as f64;
    let (h1, h2, cross) = if p <= d {
        let cross = f1 * f2.transpose() * inv_d;
        (f1 * f1.transpose() * inv_d, f2 * f2.transpose() * inv_d, Some(cross))
    } else {
        (f1.transpose() * f1 * inv_d, f2.transpose() * f2 * inv_d, None)
    };
    let r1 = Resolvent::new(&h1, c, b)?;
    let r2 = Resolvent::new(&h2, c, b)?;
    let extra = p as f64 - h1.nrows() as f64;
    let pf = p as f64;

    let v = (ks2 * r1.z.trace() + k2 * r1.y.trace() + extra * ks2 / c) / pf;
    let i = k2 * r1.y.trace() / pf;

    let signal = rho * m_hat * m_hat;
    let n0 = q0_hat * ks2 * ks2;
    let n1 = (signal + 2.0 * q0_hat) * k2 * ks2;
    let n2 = (signal + q0_hat) * k2 * k2;
    let q0 = (n0 * trace_product(&r1.z, &r1.z)
        + n1 * trace_product(&r1.z, &r1.y)
        + n2 * trace_product(&r1.y, &r1.y)
        + extra * n0 / (c * c))
        / pf;

    let t = match cross {
        Some(a12) => {
            let left = &r1.z * &a12;
            let right = &r2.z * a12.transpose();
            trace_product(&left, &right)
        }
        None => {
            let left = &r1.z * &h2;
            let right = &r2.z * &h1;
            trace_product(&left, &right)
        }
    };
    let q1 = (signal + q1_hat) * k2 * k2 * t / pf;
    let gamma = d as f64 / p as f64;
    let out = OrderParams { m: rho * m_hat * i / gamma.sqrt(), q0, q1, v };
    if !out.as_array().iter().all(|x| x.is_finite()) {
        return Err(Error::Numerical(format!("non-finite matrix-oracle overlaps {out:?}")));
    }
    Ok(out)
}

/// Rescaled hat parameters in the kernel limit, `δ = n/d`.
pub fn kernel_channel_update(
    params: &OrderParams,
    rho: f64,
    delta: f64,
    spec: &ChannelSpec,
    rules: &ChannelRules,
) -> Result<ConjugateParams> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::Config(format!("δ must be non-negative, got {delta}")));
    }
    channel_with_prefactors(params, rho, 1.0, delta.sqrt(), spec, rules)
}

/// Overlaps from rescaled hat parameters in the kernel limit.
pub fn kernel_prior_update(
    conj: &ConjugateParams,
    lambda: f64,
    delta: f64,
    rho: f64,
    coeffs: &ActivationCoeffs,
) -> Result<OrderParams> {
    check_conj(conj)?;
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("the kernel limit needs λ > 0, got {lambda}")));
    }
    if !(delta >= 0.0) {
        return Err(Error::Config(format!("δ must be non-negative, got {delta}")));
    }
    let ConjugateParams { m_hat, q0_hat, q1_hat, v_hat } = *conj;
    let (k2, ks2) = (coeffs.kappa1 * coeffs.kappa1, coeffs.kappa_star_sq());
    let den = lambda + delta * k2 * v_hat;
    let signal = rho * m_hat * m_hat;
    Ok(OrderParams {
        v: (lambda * (k2 + ks2) + delta * k2 * ks2 * v_hat) / (lambda * den),
        m: rho * delta.sqrt() * k2 * m_hat / den,
        q0: delta * k2 * k2 * (q0_hat + signal) / (den * den),
        q1: delta * k2 * k2 * (q1_hat + signal) / (den * den),
    })
}

/// `(v, m, q)` of kernel ridge regression, `q0 = q1 = q`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelRidge {
    pub v: f64,
    pub m: f64,
    pub q: f64,
}

impl KernelRidge {
    pub fn order_params(&self) -> OrderParams {
        OrderParams::new(self.m, self.q, self.q, self.v)
    }
}

fn kernel_ridge_v(lambda: f64, delta: f64, coeffs: &ActivationCoeffs) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("the kernel limit needs λ > 0, got {lambda}")));
    }
    if !(delta > 0.0) {
        return Err(Error::Config(format!("δ must be positive, got {delta}")));
    }
    let (k2, ks2) = (coeffs.kappa1 * coeffs.kappa1, coeffs.kappa_star_sq());
    let a = ks2 + lambda;
    let root = ((1.0 - delta).powi(2) * k2 * k2 + 2.0 * a * (1.0 + delta) * k2 + a * a).sqrt();
    Ok(((1.0 - delta) * k2 + root + ks2 - lambda) / (2.0 * lambda))
}

/// Closed-form kernel ridge fixed point.
pub fn kernel_ridge_closed_form(lambda: f64, delta: f64, rho: f64, coeffs: &ActivationCoeffs) -> Result<KernelRidge> {
    let v = kernel_ridge_v(lambda, delta, coeffs)?;
    let c = lambda * (v + 1.0) / (delta * coeffs.kappa1 * coeffs.kappa1);
    let m = rho / (1.0 + c);
    let q = (rho * (1.0 + delta) - 2.0 * m) / (delta * (1.0 + c).powi(2) - 1.0);
    Ok(KernelRidge { v, m, q })
}

/// The `q` expression `(δ − 2m + ρ)/((1 + 2c)² − 1)` with the unit-variance
/// `m`; kept to measure its gap to the fixed point.
pub fn kernel_ridge_printed_form(lambda: f64, delta: f64, rho: f64, coeffs: &ActivationCoeffs) -> Result<KernelRidge> {
    let v = kernel_ridge_v(lambda, delta, coeffs)?;
    let c = lambda * (v + 1.0) / (delta * coeffs.kappa1 * coeffs.kappa1);
    let m = 1.0 / (1.0 + c);
    let q = (delta - 2.0 * m + rho) / ((1.0 + 2.0 * c).powi(2) - 1.0);
    Ok(KernelRidge { v, m, q })
}
