//! Teacher measure, proximal operators and the channel (hat-parameter) updates.

use crate::error::{Error, Result};
use crate::quadrature::{GaussianPoints, HermitePair, PanelRule, DEFAULT_ORDER_1D, DEFAULT_ORDER_2D, MAX_ORDER};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Square,
    Logistic,
    Hinge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Teacher {
    /// `f0(x) = x`
    Linear,
    /// `f0(x) = sign x`
    Sign,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSpace {
    Real,
    PlusMinusOne,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub loss: Loss,
    pub teacher: Teacher,
}

impl ChannelSpec {
    pub fn new(loss: Loss, teacher: Teacher) -> Result<Self> {
        let ok = matches!(
            (loss, teacher),
            (Loss::Square, Teacher::Linear) | (Loss::Logistic, Teacher::Sign) | (Loss::Hinge, Teacher::Sign)
        );
        if !ok {
            return Err(Error::Config(format!("unsupported pairing of {loss:?} loss with {teacher:?} teacher")));
        }
        Ok(ChannelSpec { loss, teacher })
    }

    /// Square loss with a linear teacher.
    pub fn ridge() -> Self {
        ChannelSpec { loss: Loss::Square, teacher: Teacher::Linear }
    }

    pub fn logistic() -> Self {
        ChannelSpec { loss: Loss::Logistic, teacher: Teacher::Sign }
    }

    pub fn hinge() -> Self {
        ChannelSpec { loss: Loss::Hinge, teacher: Teacher::Sign }
    }

    /// The loss matching `teacher`'s label space by default.
    pub fn for_loss(loss: Loss) -> Self {
        match loss {
            Loss::Square => Self::ridge(),
            Loss::Logistic => Self::logistic(),
            Loss::Hinge => Self::hinge(),
        }
    }

    pub fn label_space(&self) -> LabelSpace {
        match self.teacher {
            Teacher::Linear => LabelSpace::Real,
            Teacher::Sign => LabelSpace::PlusMinusOne,
        }
    }

    pub fn is_classification(&self) -> bool {
        self.teacher == Teacher::Sign
    }
}

/// Overlaps `(m, q0, q1, v)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderParams {
    pub m: f64,
    pub q0: f64,
    pub q1: f64,
    pub v: f64,
}

impl OrderParams {
    pub fn new(m: f64, q0: f64, q1: f64, v: f64) -> Self {
        OrderParams { m, q0, q1, v }
    }

    pub fn validate(&self, rho: f64) -> Result<()> {
        let OrderParams { m, q0, q1, v } = *self;
        if ![m, q0, q1, v].iter().all(|x| x.is_finite()) {
            return Err(Error::Domain(format!("non-finite order parameters {self:?}")));
        }
        if !(q0 > 0.0) || q1.abs() > q0 || !(v > 0.0) {
            return Err(Error::Domain(format!("order parameters {self:?} violate q0 > 0, |q1| ≤ q0, v > 0")));
        }
        if m * m > rho * q0 * (1.0 + 1e-12) {
            return Err(Error::Domain(format!("m² = {} exceeds ρ·q0 = {}", m * m, rho * q0)));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.m, self.q0, self.q1, self.v]
    }
}

/// Conjugate parameters `(m̂, q̂0, q̂1, v̂)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjugateParams {
    pub m_hat: f64,
    pub q0_hat: f64,
    pub q1_hat: f64,
    pub v_hat: f64,
}

impl ConjugateParams {
    pub fn new(m_hat: f64, q0_hat: f64, q1_hat: f64, v_hat: f64) -> Self {
        ConjugateParams { m_hat, q0_hat, q1_hat, v_hat }
    }

    pub fn zero() -> Self {
        ConjugateParams::new(0.0, 0.0, 0.0, 0.0)
    }
}

#[inline]
pub(crate) fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

#[inline]
pub(crate) fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `Z⁰(y, ω0, σ0)` for the sign teacher.
pub fn teacher_z0(y: f64, omega0: f64, sigma0: f64, teacher: Teacher) -> Result<f64> {
    if teacher != Teacher::Sign {
        return Err(Error::Domain("Z⁰ is only evaluated for the sign teacher".into()));
    }
    if !(sigma0 > 0.0) {
        return Err(Error::Domain(format!("teacher variance σ0 = {sigma0} must be positive")));
    }
    Ok(z0(y, omega0, sigma0))
}

/// `∂_µ Z⁰(y, ω0, σ0)` for the sign teacher.
pub fn teacher_dz0(y: f64, omega0: f64, sigma0: f64) -> Result<f64> {
    if !(sigma0 > 0.0) {
        return Err(Error::Domain(format!("teacher variance σ0 = {sigma0} must be positive")));
    }
    Ok(dz0(y, omega0, sigma0))
}

#[inline]
fn z0(y: f64, omega0: f64, sigma0: f64) -> f64 {
    0.5 * libm::erfc(-y * omega0 / (2.0 * sigma0).sqrt())
}

#[inline]
fn dz0(y: f64, omega0: f64, sigma0: f64) -> f64 {
    y * (-omega0 * omega0 / (2.0 * sigma0)).exp() / (2.0 * PI * sigma0).sqrt()
}

/// Proximal point `h`, the scaled step `f = (h − ω)/v` and `∂f/∂ω`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prox {
    pub h: f64,
    pub f: f64,
    pub df: f64,
}

/// `argmin_x (x − ω)²/(2v) + (y − x)²/2`.
pub fn prox_square(y: f64, omega: f64, v: f64) -> f64 {
    (omega + v * y) / (1.0 + v)
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

const PROX_MAX_ITERS: usize = 200;

/// Logistic proximal: the root of `h = ω + y v /(1 + e^{y h})`.
pub fn prox_logistic(y: f64, omega: f64, v: f64) -> Result<Prox> {
    if !(v > 0.0) || !omega.is_finite() {
        return Err(Error::Domain(format!("logistic proximal needs v > 0 and finite ω, got v={v}, ω={omega}")));
    }
    // With t = y h and a = y ω the equation reads t = a + v σ(−t), whose
    // residual is increasing and changes sign on [a, a + v].
    let a = y * omega;
    let resid = |t: f64| t - a - v * sigmoid(-t);
    let (mut lo, mut hi) = (a, a + v);
    let mut t = (a + v * sigmoid(-a)).clamp(lo, hi);
    let mut converged = false;
    let mut last_step = hi - lo;
    for _ in 0..PROX_MAX_ITERS {
        let r = resid(t);
        if r.abs() <= 4.0 * f64::EPSILON * t.abs().max(a.abs()).max(v).max(1.0) {
            converged = true;
            break;
        }
        if r > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let s = sigmoid(t) * sigmoid(-t);
        let newton = r / (1.0 + v * s);
        let mut next = t - newton;
        // Bisect when Newton leaves the bracket or fails to halve the step.
        if !(next > lo && next < hi) || 2.0 * newton.abs() > last_step {
            next = 0.5 * (lo + hi);
        }
        last_step = (next - t).abs();
        t = next;
        if last_step <= 1e-15 * t.abs().max(1.0) || hi - lo <= 1e-15 * t.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence(format!("logistic proximal at y={y}, ω={omega}, v={v} did not converge")));
    }
    let s = sigmoid(t) * sigmoid(-t);
    Ok(Prox { h: y * t, f: y * sigmoid(-t), df: -s / (1.0 + v * s) })
}

/// Hinge proximal; the kink boundaries belong to the middle branch.
pub fn prox_hinge(y: f64, omega: f64, v: f64) -> Prox {
    let yw = y * omega;
    let (f, df) = if yw < 1.0 - v {
        (y, 0.0)
    } else if yw <= 1.0 {
        ((y - omega) / v, -1.0 / v)
    } else {
        (0.0, 0.0)
    };
    Prox { h: omega + v * f, f, df }
}

/// Proximal of `loss` for a ±1 or real label.
pub fn prox(loss: Loss, y: f64, omega: f64, v: f64) -> Result<Prox> {
    match loss {
        Loss::Square => {
            let h = prox_square(y, omega, v);
            Ok(Prox { h, f: (y - omega) / (1.0 + v), df: -1.0 / (1.0 + v) })
        }
        Loss::Logistic => prox_logistic(y, omega, v),
        Loss::Hinge => Ok(prox_hinge(y, omega, v)),
    }
}

pub fn loss_value(loss: Loss, y: f64, h: f64) -> f64 {
    match loss {
        Loss::Square => 0.5 * (y - h).powi(2),
        Loss::Logistic => {
            let z = -y * h;
            if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            }
        }
        Loss::Hinge => (1.0 - y * h).max(0.0),
    }
}

/// Distance from zero of `h − ω + v ∂ℓ(y, h)`, minimized over the
/// subdifferential at a hinge kink.
pub fn stationarity_residual(loss: Loss, y: f64, omega: f64, v: f64, h: f64) -> f64 {
    let base = h - omega;
    match loss {
        Loss::Square => (base - v * (y - h)).abs(),
        Loss::Logistic => (base - v * y * sigmoid(-y * h)).abs(),
        Loss::Hinge => {
            let m = y * h;
            if (m - 1.0).abs() <= 1e-12 {
                // subgradient −y·t for t ∈ [0, 1]
                let t = (base / (v * y)).clamp(0.0, 1.0);
                (base - v * y * t).abs()
            } else if m < 1.0 {
                (base - v * y).abs()
            } else {
                base.abs()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Gauss-Hermite, tensorized for 2D.
    Hermite,
    /// Composite Gauss-Legendre panels split at the loss kinks.
    Panels,
}

/// Integration rules for the channel expectations.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRules {
    pub hermite: HermitePair,
    pub panels: PanelRule,
    pub logistic: Integrator,
    pub hinge: Integrator,
}

impl Default for ChannelRules {
    fn default() -> Self {
        ChannelRules::with_orders(DEFAULT_ORDER_1D, DEFAULT_ORDER_2D).expect("default orders are valid")
    }
}

impl ChannelRules {
    pub fn with_orders(order_1d: usize, order_2d: usize) -> Result<Self> {
        Ok(ChannelRules {
            hermite: HermitePair::new(order_1d, order_2d)?,
            panels: PanelRule::default(),
            logistic: Integrator::Panels,
            hinge: Integrator::Panels,
        })
    }

    /// Every rule with twice the nodes.
    pub fn refined(&self) -> Result<Self> {
        Ok(ChannelRules {
            hermite: HermitePair::new(
                (2 * self.hermite.one.order()).min(MAX_ORDER),
                (2 * self.hermite.two.order()).min(MAX_ORDER),
            )?,
            panels: self.panels.refined(2)?,
            logistic: self.logistic,
            hinge: self.hinge,
        })
    }

    fn points_for(&self, loss: Loss) -> &dyn GaussianPoints {
        let which = match loss {
            Loss::Hinge => self.hinge,
            _ => self.logistic,
        };
        match which {
            Integrator::Hermite => &self.hermite,
            Integrator::Panels => &self.panels,
        }
    }
}

/// Kinks of `ω ↦ f(y, ω)` in standardized units `ζ = ω/√q0`. The logistic
/// step is smooth but turns on a unit scale in `ω` near `yω = 0` and
/// `yω = −v`; those points get geometrically graded breaks.
fn kinks(loss: Loss, v: f64, q0: f64) -> Vec<f64> {
    let s = q0.sqrt();
    let mut out = vec![0.0];
    match loss {
        Loss::Hinge => {
            for y in [-1.0, 1.0] {
                out.push(y * (1.0 - v) / s);
                out.push(y / s);
            }
        }
        Loss::Logistic => {
            let centers = [0.0, v / s, -v / s];
            let w = 1.0 / s;
            for c in centers {
                out.push(c);
                let mut off = w;
                while off < 1.0 {
                    out.push(c - off);
                    out.push(c + off);
                    off *= 2.0;
                }
            }
        }
        Loss::Square => {}
    }
    out
}

/// Hat parameters with explicit prefactors: `v̂, q̂0, q̂1` carry `a_pref` and
/// `m̂` carries `m_pref`.
pub(crate) fn channel_with_prefactors(
    params: &OrderParams,
    rho: f64,
    a_pref: f64,
    m_pref: f64,
    spec: &ChannelSpec,
    rules: &ChannelRules,
) -> Result<ConjugateParams> {
    let OrderParams { m, q0, q1, v } = *params;
    if spec.loss == Loss::Square {
        if ![m, q0, q1, v].iter().all(|x| x.is_finite()) || !(v >= 0.0) {
            return Err(Error::Domain(format!("invalid order parameters {params:?}")));
        }
        let d = 1.0 + v;
        return Ok(ConjugateParams {
            v_hat: a_pref / d,
            m_hat: m_pref / d,
            q0_hat: a_pref * (rho - 2.0 * m + q0) / (d * d),
            q1_hat: a_pref * (rho - 2.0 * m + q1) / (d * d),
        });
    }
    params.validate(rho)?;
    if a_pref == 0.0 && m_pref == 0.0 {
        return Ok(ConjugateParams::zero());
    }
    let sigma0 = rho - m * m / q0;
    let sigma_pair = rho - 2.0 * m * m / (q0 + q1);
    if !(sigma0 > 0.0) || (q1 != q0 && !(sigma_pair > 0.0)) {
        return Err(Error::Domain(format!(
            "teacher conditional variances must be positive: ρ − m²/q0 = {sigma0}, ρ − 2m²/(q0+q1) = {sigma_pair}"
        )));
    }
    let sq0 = q0.sqrt();
    let rule = rules.points_for(spec.loss);
    let breaks = kinks(spec.loss, v, q0);
    let labels = [-1.0, 1.0];

    let (mut vh, mut mh, mut q0h) = (0.0, 0.0, 0.0);
    for (z, w) in rule.points_1d(&breaks) {
        let omega = sq0 * z;
        let omega0 = m * z / sq0;
        for y in labels {
            let p = prox(spec.loss, y, omega, v)?;
            let t = z0(y, omega0, sigma0);
            vh -= w * t * p.df;
            mh += w * dz0(y, omega0, sigma0) * p.f;
            q0h += w * t * p.f * p.f;
        }
    }

    let q1h = if q1 == q0 {
        q0h
    } else if let Some(nodes) = rule.product_nodes(q1 / q0, &breaks) {
        let eta = q1 / q0;
        let scale = m / (sq0 * (1.0 + eta)) / sigma_pair.sqrt();
        let mut fs = Vec::with_capacity(nodes.len());
        for &(z, _) in &nodes {
            fs.push([prox(spec.loss, -1.0, sq0 * z, v)?.f, prox(spec.loss, 1.0, sq0 * z, v)?.f]);
        }
        let s2 = 1.0 - eta * eta;
        let (c, norm) = (eta / (2.0 * s2), 1.0 / s2.sqrt());
        let mut acc = 0.0;
        for (i, &(z, w)) in nodes.iter().enumerate() {
            for (j, &(zp, wp)) in nodes.iter().enumerate().skip(i) {
                let e = c * (eta * (z * z + zp * zp) - 2.0 * z * zp);
                if e > 45.0 {
                    continue;
                }
                let pair = if i == j { 1.0 } else { 2.0 } * w * wp * norm * (-e).exp();
                let up = norm_cdf(scale * (z + zp));
                acc += pair * (up * fs[i][1] * fs[j][1] + (1.0 - up) * fs[i][0] * fs[j][0]);
            }
        }
        acc
    } else {
        let eta = q1 / q0;
        let pts = rule.points_2d(eta, &breaks, &breaks)?;
        let scale = m / (sq0 * (1.0 + eta));
        let mut acc = 0.0;
        let mut last_z = f64::NAN;
        let mut f_outer = [0.0; 2];
        for [z, zp, w] in pts {
            if z != last_z {
                for (k, y) in labels.iter().enumerate() {
                    f_outer[k] = prox(spec.loss, *y, sq0 * z, v)?.f;
                }
                last_z = z;
            }
            let mu = scale * (z + zp);
            for (k, y) in labels.iter().enumerate() {
                if f_outer[k] == 0.0 {
                    continue;
                }
                let fp = prox(spec.loss, *y, sq0 * zp, v)?.f;
                acc += w * z0(*y, mu, sigma_pair) * f_outer[k] * fp;
            }
        }
        acc
    };

    let out = ConjugateParams {
        v_hat: a_pref * vh,
        m_hat: m_pref * mh,
        q0_hat: a_pref * q0h,
        q1_hat: a_pref * q1h,
    };
    if ![out.v_hat, out.m_hat, out.q0_hat, out.q1_hat].iter().all(|x| x.is_finite()) {
        return Err(Error::Numerical(format!("non-finite channel update {out:?} at {params:?}")));
    }
    Ok(out)
}

/// Hat-parameter update at finite `α = n/p`, `γ = d/p`.
pub fn channel_update(
    params: &OrderParams,
    rho: f64,
    alpha: f64,
    gamma: f64,
    spec: &ChannelSpec,
    rules: &ChannelRules,
) -> Result<ConjugateParams> {
    if !(alpha >= 0.0) || !(gamma > 0.0) {
        return Err(Error::Config(format!("need α ≥ 0 and γ > 0, got α={alpha}, γ={gamma}")));
    }
    channel_with_prefactors(params, rho, alpha, alpha / gamma.sqrt(), spec, rules)
}

/// Hinge channel from its explicit Gaussian-integral form: error functions for
/// `v̂, m̂, q̂0` and an analytic inner integral for `q̂1`.
pub fn channel_update_hinge_closed_form(params: &OrderParams, rho: f64, alpha: f64, gamma: f64) -> Result<ConjugateParams> {
    params.validate(rho)?;
    let OrderParams { m, q0, q1, v } = *params;
    if alpha == 0.0 {
        return Ok(ConjugateParams::zero());
    }
    let sigma0 = rho - m * m / q0;
    let sigma_pair = rho - 2.0 * m * m / (q0 + q1);
    if !(sigma0 > 0.0) || (q1 != q0 && !(sigma_pair > 0.0)) {
        return Err(Error::Domain(format!(
            "teacher conditional variances must be positive: {sigma0}, {sigma_pair}"
        )));
    }
    let sq0 = q0.sqrt();
    // y = +1 branch in ζ = ω/√q0; the y = −1 branch mirrors it.
    let b = 1.0 / sq0;
    let c = (1.0 - v) / sq0;
    let k = m / (q0 * sigma0).sqrt();
    let ramp = |z: f64| ((b - z) / (b - c)).clamp(0.0, 1.0);

    let panels = PanelRule::new(20, 0.5, 10.0)?;
    let (mut vh, mut q0h) = (0.0, 0.0);
    for (z, w) in panels.points(&[c, b, 0.0]) {
        let t = norm_cdf(k * z);
        if z >= c && z <= b {
            vh += w * t;
        }
        q0h += w * t * ramp(z).powi(2);
    }
    vh *= 2.0 * alpha / v;
    q0h *= 2.0 * alpha;

    // ∂µZ⁰ times the Gaussian measure is a Gaussian of variance σ0/ρ in ζ.
    let tau = (sigma0 / rho).sqrt();
    let (bt, ct) = (b / tau, c / tau);
    let mean_ramp =
        norm_cdf(ct) + (b * (norm_cdf(bt) - norm_cdf(ct)) - tau * (norm_pdf(ct) - norm_pdf(bt))) / (b - c);
    let mh = 2.0 * alpha / gamma.sqrt() * mean_ramp / (2.0 * PI * rho).sqrt();

    let q1h = if q1 == q0 {
        q0h
    } else {
        let eta = q1 / q0;
        let a = ((1.0 + eta) / 2.0).sqrt();
        let bb = ((1.0 - eta) / 2.0).sqrt();
        let kappa = 2.0 * m * a / (sq0 * (1.0 + eta) * sigma_pair.sqrt());
        let mut breaks = vec![0.0];
        if a > 0.0 {
            breaks.extend([c / a, 0.5 * (b + c) / a, b / a]);
        }
        let mut acc = 0.0;
        for (z, w) in panels.points(&breaks) {
            acc += w * norm_cdf(kappa * z) * ramp_pair_expectation(a * z, bb, b, c);
        }
        2.0 * alpha * acc
    };
    Ok(ConjugateParams { v_hat: vh, m_hat: mh, q0_hat: q0h, q1_hat: q1h })
}

/// `E_t[F(u + s t) F(u − s t)]`, `t ~ N(0, 1)`, for the hinge ramp `F`
/// falling from 1 at `c` to 0 at `b`. Exact: the product is piecewise
/// quadratic in `t`.
fn ramp_pair_expectation(u: f64, s: f64, b: f64, c: f64) -> f64 {
    let ramp = |x: f64| ((b - x) / (b - c)).clamp(0.0, 1.0);
    if s == 0.0 {
        return ramp(u).powi(2);
    }
    let mut cuts = [(c - u) / s, (b - u) / s, (u - b) / s, (u - c) / s];
    cuts.sort_by(|x, y| x.total_cmp(y));
    let width = b - c;
    // Linear piece `(α0, α1)` of F(u + σ t) on the interval containing t.
    let piece = |sign: f64, t: f64| -> (f64, f64) {
        let x = u + sign * s * t;
        if x < c {
            (1.0, 0.0)
        } else if x > b {
            (0.0, 0.0)
        } else {
            ((b - u) / width, -sign * s / width)
        }
    };
    let mut total = 0.0;
    let mut lo = f64::NEG_INFINITY;
    for i in 0..=cuts.len() {
        let hi = if i < cuts.len() { cuts[i] } else { f64::INFINITY };
        if hi > lo {
            let probe = if lo.is_infinite() {
                hi - 1.0
            } else if hi.is_infinite() {
                lo + 1.0
            } else {
                0.5 * (lo + hi)
            };
            let (a0, a1) = piece(1.0, probe);
            let (b0, b1) = piece(-1.0, probe);
            let (p0, p1, p2) = (a0 * b0, a0 * b1 + a1 * b0, a1 * b1);
            if p0 != 0.0 || p1 != 0.0 || p2 != 0.0 {
                let (cl, ch) = (norm_cdf(lo), norm_cdf(hi));
                let (dl, dh) = (norm_pdf(lo), norm_pdf(hi));
                let (tl, th) = (
                    if lo.is_finite() { lo * dl } else { 0.0 },
                    if hi.is_finite() { hi * dh } else { 0.0 },
                );
                let m0 = ch - cl;
                let m1 = dl - dh;
                let m2 = m0 + tl - th;
                total += p0 * m0 + p1 * m1 + p2 * m2;
            }
        }
        lo = hi;
    }
    total
}

/// Asymptotic per-sample training loss of one learner at a fixed point.
pub fn training_loss(params: &OrderParams, rho: f64, spec: &ChannelSpec, rules: &ChannelRules) -> Result<f64> {
    let OrderParams { m, q0, v, .. } = *params;
    if spec.loss == Loss::Square {
        return Ok((rho - 2.0 * m + q0) / (2.0 * (1.0 + v).powi(2)));
    }
    params.validate(rho)?;
    let sigma0 = rho - m * m / q0;
    if !(sigma0 > 0.0) {
        return Err(Error::Domain(format!("teacher conditional variance {sigma0} must be positive")));
    }
    let sq0 = q0.sqrt();
    let rule = rules.points_for(spec.loss);
    let mut acc = 0.0;
    for (z, w) in rule.points_1d(&kinks(spec.loss, v, q0)) {
        for y in [-1.0, 1.0] {
            let p = prox(spec.loss, y, sq0 * z, v)?;
            acc += w * z0(y, m * z / sq0, sigma0) * loss_value(spec.loss, y, p.h);
        }
    }
    Ok(acc)
}
