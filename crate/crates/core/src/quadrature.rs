//! Gaussian expectation rules.
//!
//! Everything here integrates against the standard normal density. Callers
//! with a variance `q` scale the abscissae by `sqrt(q)` themselves.

use crate::error::{Error, Result};
use std::f64::consts::PI;

/// Largest Gauss-Hermite order accepted. Beyond roughly this order the outer
/// weights underflow in double precision.
pub const MAX_ORDER: usize = 300;
pub const DEFAULT_ORDER_1D: usize = 101;
pub const DEFAULT_ORDER_2D: usize = 61;

/// Nodes and weights approximating `E[g(Z)]`, `Z ~ N(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Probabilists' Gauss-Hermite rule, exact for polynomials of degree `2*order - 1`.
pub fn gauss_hermite_rule(order: usize) -> Result<QuadratureRule> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::Config(format!(
            "Gauss-Hermite order must lie in 1..={MAX_ORDER}, got {order}"
        )));
    }
    let n = order;
    let half = (n + 1) / 2;
    // Initial roots from the Jacobi matrix of the physicists' polynomials,
    // then polished by Newton on the normalized recurrence.
    let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut guess: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    guess.sort_by(|a, b| b.total_cmp(a));
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let pim4 = PI.powf(-0.25);
    let nf = n as f64;
    for i in 0..half {
        let mut z = guess[i];
        let mut pp = 0.0;
        for it in 0..=3 {
            // Hermite functions carry the Gaussian factor, which keeps the
            // recurrence in range for large orders.
            let mut p1 = pim4 * (-0.5 * z * z).exp();
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            if it < 3 {
                z -= p1 / pp;
            }
        }
        if !(pp.is_finite() && pp != 0.0) {
            return Err(Error::Numerical(format!(
                "Gauss-Hermite root {i} of order {n} did not converge"
            )));
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        // Physicists' weight, written for the function-normalized derivative.
        w[i] = 2.0 * (-z * z).exp() / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[half - 1] = 0.0;
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    let sqrt_pi = PI.sqrt();
    let mut nodes: Vec<f64> = x.iter().map(|&t| -t * sqrt2).collect();
    let mut weights: Vec<f64> = w.iter().map(|&t| t / sqrt_pi).collect();
    // Roots were produced from the largest down.
    if nodes.first() > nodes.last() {
        nodes.reverse();
        weights.reverse();
    }
    let total: f64 = weights.iter().sum();
    for wi in &mut weights {
        *wi /= total;
    }
    Ok(QuadratureRule { nodes, weights })
}

/// `Σ w_i g(x_i)`; a non-finite evaluation is reported with its node.
pub fn expect_1d(g: impl Fn(f64) -> f64, rule: &QuadratureRule) -> Result<f64> {
    let mut acc = 0.0;
    for (x, w) in rule.iter() {
        let gx = g(x);
        if !gx.is_finite() {
            return Err(Error::Domain(format!("integrand is {gx} at node {x}")));
        }
        acc += w * gx;
    }
    Ok(acc)
}

/// `E[g(ω, ω')]` with `Var ω = Var ω' = q0`, `Cov(ω, ω') = q1`.
pub fn expect_2d_correlated(
    g: impl Fn(f64, f64) -> f64,
    q0: f64,
    q1: f64,
    rule: &QuadratureRule,
) -> Result<f64> {
    if !(q0 > 0.0) || !q1.is_finite() {
        return Err(Error::Domain(format!("invalid covariance q0={q0}, q1={q1}")));
    }
    if q1.abs() > q0 {
        return Err(Error::Domain(format!(
            "covariance [[{q0}, {q1}], [{q1}, {q0}]] is not positive semidefinite"
        )));
    }
    let sd = q0.sqrt();
    let pts = standard_pairs(q1 / q0, rule, rule)?;
    let mut acc = 0.0;
    for [z, zp, w] in pts {
        let gx = g(sd * z, sd * zp);
        if !gx.is_finite() {
            return Err(Error::Domain(format!(
                "integrand is {gx} at ({}, {})",
                sd * z,
                sd * zp
            )));
        }
        acc += w * gx;
    }
    Ok(acc)
}

/// Tensor points `(ζ, ζ', w)` for standard normals with correlation `eta`.
/// Perfect (anti)correlation collapses to the outer rule.
fn standard_pairs(eta: f64, outer: &QuadratureRule, inner: &QuadratureRule) -> Result<Vec<[f64; 3]>> {
    if !(eta.abs() <= 1.0) {
        return Err(Error::Domain(format!("correlation {eta} outside [-1, 1]")));
    }
    let s = (1.0 - eta * eta).max(0.0).sqrt();
    if s == 0.0 {
        return Ok(outer.iter().map(|(z, w)| [z, eta * z, w]).collect());
    }
    let mut pts = Vec::with_capacity(outer.order() * inner.order());
    for (z, w) in outer.iter() {
        for (t, wt) in inner.iter() {
            pts.push([z, eta * z + s * t, w * wt]);
        }
    }
    Ok(pts)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 || order > 1024 {
        return Err(Error::Config(format!("Gauss-Legendre order {order} out of range")));
    }
    let n = order;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..(n + 1) / 2 {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    Ok((x, w))
}

/// Composite Gauss-Legendre integration against the standard normal density,
/// for integrands with known kinks.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelRule {
    gl_nodes: Vec<f64>,
    gl_weights: Vec<f64>,
    max_width: f64,
    cutoff: f64,
}

impl Default for PanelRule {
    fn default() -> Self {
        PanelRule::new(12, 1.0, 9.0).expect("default panel rule")
    }
}

impl PanelRule {
    pub fn new(nodes_per_panel: usize, max_width: f64, cutoff: f64) -> Result<Self> {
        if !(max_width > 0.0) || !(cutoff > 0.0) {
            return Err(Error::Config(format!(
                "panel width {max_width} and cutoff {cutoff} must be positive"
            )));
        }
        let (gl_nodes, gl_weights) = gauss_legendre(nodes_per_panel)?;
        Ok(PanelRule { gl_nodes, gl_weights, max_width, cutoff })
    }

    pub fn nodes_per_panel(&self) -> usize {
        self.gl_nodes.len()
    }

    /// Same panel layout with `factor` times the nodes per panel.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        PanelRule::new(self.nodes_per_panel() * factor.max(1), self.max_width, self.cutoff)
    }

    /// Points `(z, w)` with `Σ w g(z) ≈ E[g(Z)]`, panels split at `breaks`.
    pub fn points(&self, breaks: &[f64]) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        self.push_points(0.0, 1.0, breaks, 1.0, &mut out);
        out
    }

    /// Points for `Z ~ N(mean, sd^2)` in the original variable, breaks given in
    /// that variable too; each weight is multiplied by `scale`.
    fn push_points(&self, mean: f64, sd: f64, breaks: &[f64], scale: f64, out: &mut Vec<(f64, f64)>) {
        let lo = -self.cutoff;
        let hi = self.cutoff;
        let mut cuts: Vec<f64> = breaks
            .iter()
            .map(|&b| (b - mean) / sd)
            .filter(|t| t.is_finite() && *t > lo && *t < hi)
            .collect();
        cuts.push(lo);
        cuts.push(hi);
        cuts.sort_by(|a, b| a.total_cmp(b));
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        let norm = 1.0 / (2.0 * PI).sqrt();
        for seg in cuts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let panels = ((b - a) / self.max_width).ceil().max(1.0) as usize;
            let width = (b - a) / panels as f64;
            for k in 0..panels {
                let left = a + width * k as f64;
                let half = 0.5 * width;
                let mid = left + half;
                for (t, wt) in self.gl_nodes.iter().zip(&self.gl_weights) {
                    let z = mid + half * t;
                    let dens = norm * (-0.5 * z * z).exp();
                    out.push((mean + sd * z, scale * half * wt * dens));
                }
            }
        }
    }

    /// `E[g(Z)]` over panels split at `breaks`.
    pub fn expect(&self, g: impl Fn(f64) -> f64, breaks: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (z, w) in self.points(breaks) {
            let gz = g(z);
            if !gz.is_finite() {
                return Err(Error::Domain(format!("integrand is {gz} at node {z}")));
            }
            acc += w * gz;
        }
        Ok(acc)
    }

    /// Points `(ζ, ζ', w)` for standard normals with correlation `eta`; the
    /// outer variable is split at `breaks_first`, the conditional inner one at
    /// `breaks_second` (both in the ζ scale).
    pub fn pairs(&self, eta: f64, breaks_first: &[f64], breaks_second: &[f64]) -> Result<Vec<[f64; 3]>> {
        if !(eta.abs() <= 1.0) {
            return Err(Error::Domain(format!("correlation {eta} outside [-1, 1]")));
        }
        let s = (1.0 - eta * eta).max(0.0).sqrt();
        let mut outer_breaks: Vec<f64> = breaks_first.to_vec();
        if eta != 0.0 {
            outer_breaks.extend(breaks_second.iter().map(|b| b / eta));
        }
        let outer = self.points(&outer_breaks);
        if s == 0.0 {
            return Ok(outer.into_iter().map(|(z, w)| [z, eta * z, w]).collect());
        }
        let mut inner = Vec::new();
        let mut pts = Vec::new();
        for (z, w) in outer {
            inner.clear();
            self.push_points(eta * z, s, breaks_second, w, &mut inner);
            pts.extend(inner.iter().map(|&(zp, wp)| [z, zp, wp]));
        }
        Ok(pts)
    }
}

/// Largest `|η|` handled by [`PanelRule::product_nodes`].
pub const PRODUCT_ETA_MAX: f64 = 0.995;

impl PanelRule {
    /// 1D points whose tensor product, reweighted by
    /// [`correlation_weight`], integrates a standard normal pair with
    /// correlation `eta`. Panels shrink with the conditional spread
    /// `√(1 − η²)`; `None` above [`PRODUCT_ETA_MAX`].
    pub fn product_nodes(&self, eta: f64, breaks: &[f64]) -> Option<Vec<(f64, f64)>> {
        if !(eta.abs() <= PRODUCT_ETA_MAX) {
            return None;
        }
        let width = self.max_width * ((1.0 - eta * eta).sqrt() / 0.45).min(1.0);
        let rule = PanelRule { max_width: width, ..self.clone() };
        Some(rule.points(breaks))
    }

    /// Tensor-product pairs `(ζ, ζ', w)` from [`PanelRule::product_nodes`].
    pub fn product_pairs(&self, eta: f64, breaks: &[f64]) -> Option<Vec<[f64; 3]>> {
        let nodes = self.product_nodes(eta, breaks)?;
        let mut out = Vec::with_capacity(nodes.len() * nodes.len());
        for &(z, w) in &nodes {
            for &(zp, wp) in &nodes {
                out.push([z, zp, w * wp * correlation_weight(eta, z, zp)]);
            }
        }
        Some(out)
    }
}

/// Ratio `φ₂(z, z'; η) / (φ(z) φ(z'))` of the correlated to the product density.
#[inline]
pub fn correlation_weight(eta: f64, z: f64, zp: f64) -> f64 {
    let s2 = 1.0 - eta * eta;
    (-eta * (eta * (z * z + zp * zp) - 2.0 * z * zp) / (2.0 * s2)).exp() / s2.sqrt()
}

/// A source of standard-normal integration points, with optional kink hints.
pub trait GaussianPoints {
    fn points_1d(&self, breaks: &[f64]) -> Vec<(f64, f64)>;
    fn points_2d(&self, eta: f64, breaks_first: &[f64], breaks_second: &[f64]) -> Result<Vec<[f64; 3]>>;
    /// Nodes for a tensor-product 2D rule, when the source provides one.
    fn product_nodes(&self, _eta: f64, _breaks: &[f64]) -> Option<Vec<(f64, f64)>> {
        None
    }
}

impl GaussianPoints for PanelRule {
    fn points_1d(&self, breaks: &[f64]) -> Vec<(f64, f64)> {
        self.points(breaks)
    }

    fn points_2d(&self, eta: f64, breaks_first: &[f64], breaks_second: &[f64]) -> Result<Vec<[f64; 3]>> {
        self.pairs(eta, breaks_first, breaks_second)
    }

    fn product_nodes(&self, eta: f64, breaks: &[f64]) -> Option<Vec<(f64, f64)>> {
        PanelRule::product_nodes(self, eta, breaks)
    }
}

/// Gauss-Hermite pair: one rule for 1D expectations, another tensorized for 2D.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitePair {
    pub one: QuadratureRule,
    pub two: QuadratureRule,
}

impl HermitePair {
    pub fn new(order_1d: usize, order_2d: usize) -> Result<Self> {
        Ok(HermitePair { one: gauss_hermite_rule(order_1d)?, two: gauss_hermite_rule(order_2d)? })
    }
}

impl GaussianPoints for HermitePair {
    fn points_1d(&self, _breaks: &[f64]) -> Vec<(f64, f64)> {
        self.one.iter().collect()
    }

    fn points_2d(&self, eta: f64, _breaks_first: &[f64], _breaks_second: &[f64]) -> Result<Vec<[f64; 3]>> {
        standard_pairs(eta, &self.two, &self.two)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_small_orders() {
        let r1 = gauss_hermite_rule(1).unwrap();
        assert_eq!(r1.nodes(), &[0.0]);
        assert!((r1.weights()[0] - 1.0).abs() < 1e-15);
        let r2 = gauss_hermite_rule(2).unwrap();
        assert!((expect_1d(|x| x * x, &r2).unwrap() - 1.0).abs() < 1e-14);
        let r3 = gauss_hermite_rule(3).unwrap();
        assert!((expect_1d(|x| x.powi(4), &r3).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_orders() {
        assert!(matches!(gauss_hermite_rule(0), Err(Error::Config(_))));
        assert!(matches!(gauss_hermite_rule(MAX_ORDER + 1), Err(Error::Config(_))));
    }

    #[test]
    fn lognormal_moment() {
        let r = gauss_hermite_rule(64).unwrap();
        let v = expect_1d(f64::exp, &r).unwrap();
        assert!((v - 0.5f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn constant_and_odd() {
        let r = gauss_hermite_rule(DEFAULT_ORDER_1D).unwrap();
        assert!((expect_1d(|_| 1.0, &r).unwrap() - 1.0).abs() < 1e-12);
        assert!(expect_1d(|x| x, &r).unwrap().abs() < 1e-14);
    }

    #[test]
    fn non_finite_names_node() {
        let r = gauss_hermite_rule(3).unwrap();
        let err = expect_1d(|x| if x > 0.0 { f64::NAN } else { 0.0 }, &r).unwrap_err();
        assert!(err.to_string().contains("node"));
    }

    #[test]
    fn correlated_moments() {
        let r = gauss_hermite_rule(DEFAULT_ORDER_2D).unwrap();
        let (q0, q1) = (1.7, 0.6);
        assert!((expect_2d_correlated(|a, b| a * b, q0, q1, &r).unwrap() - q1).abs() < 1e-10);
        assert!((expect_2d_correlated(|a, _| a * a, q0, q1, &r).unwrap() - q0).abs() < 1e-10);
        assert!((expect_2d_correlated(|_, b| b * b, q0, q1, &r).unwrap() - q0).abs() < 1e-10);
        let d = expect_2d_correlated(|a, b| (a - b).powi(2), 2.0, 2.0, &r).unwrap();
        assert_eq!(d, 0.0);
        assert!(matches!(expect_2d_correlated(|a, _| a, 1.0, 1.5, &r), Err(Error::Domain(_))));
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10).unwrap();
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((s - 2.0 / 19.0).abs() < 1e-14);
    }

    #[test]
    fn panels_handle_kinks() {
        let p = PanelRule::default();
        // E[max(Z - 0.3, 0)] = φ(0.3) - 0.3 (1 - Φ(0.3))
        let a = 0.3f64;
        let phi = (-0.5 * a * a).exp() / (2.0 * PI).sqrt();
        let tail = 0.5 * libm::erfc(a / std::f64::consts::SQRT_2);
        let exact = phi - a * tail;
        let v = p.expect(|z| (z - a).max(0.0), &[a]).unwrap();
        assert!((v - exact).abs() < 1e-14, "{v} vs {exact}");
        let mass: f64 = p.points(&[]).iter().map(|p| p.1).sum();
        assert!((mass - 1.0).abs() < 1e-14);
    }

    #[test]
    fn panel_pairs_covariance() {
        let p = PanelRule::default();
        let eta = 0.35;
        let pts = p.pairs(eta, &[0.2], &[-0.4]).unwrap();
        let c: f64 = pts.iter().map(|[a, b, w]| w * a * b).sum();
        let v: f64 = pts.iter().map(|[_, b, w]| w * b * b).sum();
        assert!((c - eta).abs() < 1e-13);
        assert!((v - 1.0).abs() < 1e-13);
    }
}
