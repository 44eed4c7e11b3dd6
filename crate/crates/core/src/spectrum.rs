//! Activation coefficients and the spectrum of the feature covariance
//! `Ω = κ1² F Fᵀ/d + κ*² I_p`.

use crate::error::{Error, Result};
use crate::quadrature::{expect_1d, gauss_hermite_rule, gauss_legendre, QuadratureRule};
use crate::random::feature_matrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

/// Largest `p·d` for which a feature matrix is materialized.
pub const MAX_FEATURE_ENTRIES: usize = 50_000_000;

/// Pointwise nonlinearities supported by the feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Erf,
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Erf => libm::erf(x),
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Coefficients from a high-order Gauss-Hermite rule.
    pub fn coeffs(self) -> ActivationCoeffs {
        let rule = gauss_hermite_rule(200).expect("fixed order is valid");
        activation_coeffs(|x| self.apply(x), &rule).expect("built-in activations are finite")
    }
}

/// `κ0 = E φ(ζ)`, `κ1 = E ζφ(ζ)`, `κ*² = E φ² − κ0² − κ1²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationCoeffs {
    pub kappa0: f64,
    pub kappa1: f64,
    pub kappa_star: f64,
}

impl ActivationCoeffs {
    pub fn new(kappa0: f64, kappa1: f64, kappa_star: f64) -> Result<Self> {
        if !(kappa0.is_finite() && kappa1.is_finite() && kappa_star.is_finite()) || kappa_star < 0.0 {
            return Err(Error::Config(format!(
                "invalid activation coefficients ({kappa0}, {kappa1}, {kappa_star})"
            )));
        }
        Ok(ActivationCoeffs { kappa0, kappa1, kappa_star })
    }

    pub fn kappa_star_sq(&self) -> f64 {
        self.kappa_star * self.kappa_star
    }
}

pub fn activation_coeffs(activation: impl Fn(f64) -> f64, rule: &QuadratureRule) -> Result<ActivationCoeffs> {
    let k0 = expect_1d(&activation, rule)?;
    let k1 = expect_1d(|x| x * activation(x), rule)?;
    let second = expect_1d(|x| activation(x).powi(2), rule)?;
    let resid = second - k0 * k0 - k1 * k1;
    if resid < -1e-8 {
        return Err(Error::Domain(format!(
            "E[φ²] − κ0² − κ1² = {resid} is negative; quadrature is inconsistent"
        )));
    }
    ActivationCoeffs::new(k0, k1, resid.max(0.0).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    ClosedFormMp,
    Empirical,
}

/// Spectral measure `ρ(s)` of `Ω`, stored as weighted support points plus an
/// optional atom.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralModel {
    kind: SpectrumKind,
    points: Vec<(f64, f64)>,
    atom_mass: f64,
    atom_location: f64,
    aspect: f64,
    scale: f64,
    shift: f64,
    edges: (f64, f64),
}

impl SpectralModel {
    pub fn kind(&self) -> SpectrumKind {
        self.kind
    }

    /// `(s, weight)` pairs of the continuous part, or the empirical atoms.
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn atom_mass(&self) -> f64 {
        self.atom_mass
    }

    pub fn atom_location(&self) -> f64 {
        self.atom_location
    }

    /// `γ = d/p`.
    pub fn aspect(&self) -> f64 {
        self.aspect
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Smallest and largest support point of the continuous part (or atoms).
    pub fn support(&self) -> (f64, f64) {
        self.edges
    }

    pub fn total_mass(&self) -> f64 {
        self.points.iter().map(|p| p.1).sum::<f64>() + self.atom_mass
    }

    /// Density of the continuous part at `s`; zero for empirical spectra.
    pub fn bulk_density(&self, s: f64) -> f64 {
        if self.kind == SpectrumKind::Empirical {
            return 0.0;
        }
        let k2 = self.scale * self.scale;
        let x = (s - self.shift) / k2;
        mp_density(x, 1.0 / self.aspect) / k2
    }

    /// Eigenvalues of an empirical spectrum (sorted ascending); empty otherwise.
    pub fn eigenvalues(&self) -> Vec<f64> {
        match self.kind {
            SpectrumKind::Empirical => self.points.iter().map(|p| p.0).collect(),
            SpectrumKind::ClosedFormMp => Vec::new(),
        }
    }

    /// Empirical spectrum from explicit eigenvalues of `Ω`.
    pub fn from_eigenvalues(mut eigenvalues: Vec<f64>, gamma: f64, coeffs: ActivationCoeffs) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::Config("empirical spectrum needs at least one eigenvalue".into()));
        }
        if let Some(bad) = eigenvalues.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return Err(Error::Domain(format!("eigenvalue {bad} is not a valid point of a PSD spectrum")));
        }
        eigenvalues.sort_by(|a, b| a.total_cmp(b));
        let w = 1.0 / eigenvalues.len() as f64;
        let edges = (eigenvalues[0], *eigenvalues.last().unwrap());
        Ok(SpectralModel {
            kind: SpectrumKind::Empirical,
            points: eigenvalues.into_iter().map(|s| (s, w)).collect(),
            atom_mass: 0.0,
            atom_location: coeffs.kappa_star_sq(),
            aspect: gamma,
            scale: coeffs.kappa1,
            shift: coeffs.kappa_star_sq(),
            edges,
        })
    }
}

/// Marchenko-Pastur density (bulk part) of `F Fᵀ/d` with `c = p/d`; for
/// `c > 1` it integrates to `1/c`.
fn mp_density(x: f64, c: f64) -> f64 {
    let (a, b) = mp_edges(c);
    if x <= a || x >= b {
        return 0.0;
    }
    ((b - x) * (x - a)).sqrt() / (2.0 * PI * c * x)
}

fn mp_edges(c: f64) -> (f64, f64) {
    let r = c.sqrt();
    ((1.0 - r).powi(2), (1.0 + r).powi(2))
}

const MP_NODES_PER_PANEL: usize = 16;

/// Quadrature points `(x, w)` for the bulk of the MP law with ratio `c`.
///
/// Uses `x = a + (b − a)(1 − cos θ)/2`, which removes the square-root edges;
/// panels are graded towards θ = 0 when the lower edge approaches the origin.
fn mp_bulk_points(c: f64) -> Vec<(f64, f64)> {
    let (a, b) = mp_edges(c);
    let (gx, gw) = gauss_legendre(MP_NODES_PER_PANEL).expect("fixed order is valid");
    let r = a / (b - a);
    let mut cuts = vec![0.0];
    let theta_scale = 2.0 * r.sqrt();
    if r > 0.0 && theta_scale < 0.25 {
        let mut t = 0.05 * theta_scale;
        while t < 0.5 {
            cuts.push(t);
            t *= 2.0;
        }
    }
    let start = *cuts.last().unwrap();
    let panels = ((PI - start) / 0.4).ceil() as usize;
    for k in 1..=panels {
        cuts.push(start + (PI - start) * k as f64 / panels as f64);
    }
    let mut out = Vec::with_capacity(cuts.len() * MP_NODES_PER_PANEL);
    let quarter = 0.25 * (b - a) * (b - a);
    for seg in cuts.windows(2) {
        let half = 0.5 * (seg[1] - seg[0]);
        let mid = 0.5 * (seg[1] + seg[0]);
        for (t, w) in gx.iter().zip(&gw) {
            let th = mid + half * t;
            let x = a + 0.5 * (b - a) * (1.0 - th.cos());
            let sin = th.sin();
            let weight = half * w * quarter * sin * sin / (2.0 * PI * c * x);
            out.push((x, weight));
        }
    }
    out
}

/// Closed-form shifted Marchenko-Pastur model with shape `γ = d/p`.
pub fn mp_spectral_model(alpha: f64, gamma: f64, coeffs: ActivationCoeffs) -> Result<SpectralModel> {
    if !(alpha > 0.0 && alpha.is_finite()) || !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("ratios must be positive, got α={alpha}, γ={gamma}")));
    }
    if coeffs.kappa0.abs() > 1e-12 {
        return Err(Error::Config(format!(
            "κ0 = {} ≠ 0: the closed-form spectrum assumes a centered activation; use empirical_spectral_model",
            coeffs.kappa0
        )));
    }
    let c = 1.0 / gamma;
    let k2 = coeffs.kappa1 * coeffs.kappa1;
    let shift = coeffs.kappa_star_sq();
    let points: Vec<(f64, f64)> = mp_bulk_points(c).into_iter().map(|(x, w)| (shift + k2 * x, w)).collect();
    let (a, b) = mp_edges(c);
    Ok(SpectralModel {
        kind: SpectrumKind::ClosedFormMp,
        points,
        atom_mass: (1.0 - gamma).max(0.0),
        atom_location: shift,
        aspect: gamma,
        scale: coeffs.kappa1,
        shift,
        edges: (shift + k2 * a, shift + k2 * b),
    })
}

/// Exact eigenvalues of `Ω` for the feature matrix sampled from `seed`.
pub fn empirical_spectral_model(seed: u64, p: usize, d: usize, coeffs: ActivationCoeffs) -> Result<SpectralModel> {
    let eig = gram_eigenvalues(seed, p, d)?;
    let k2 = coeffs.kappa1 * coeffs.kappa1;
    let shift = coeffs.kappa_star_sq();
    SpectralModel::from_eigenvalues(eig.into_iter().map(|x| shift + k2 * x).collect(), d as f64 / p as f64, coeffs)
}

/// The `p` eigenvalues of `F Fᵀ/d`, computed on the smaller Gram matrix.
fn gram_eigenvalues(seed: u64, p: usize, d: usize) -> Result<Vec<f64>> {
    if p == 0 || d == 0 {
        return Err(Error::Config(format!("p and d must be positive, got p={p}, d={d}")));
    }
    if p.saturating_mul(d) > MAX_FEATURE_ENTRIES {
        return Err(Error::Resource(format!(
            "feature matrix {p}×{d} exceeds the cap of {MAX_FEATURE_ENTRIES} entries"
        )));
    }
    let f = feature_matrix(p, d, seed);
    let gram = if p <= d { &f * f.transpose() } else { f.transpose() * &f } / d as f64;
    let mut eig: Vec<f64> = gram.symmetric_eigenvalues().iter().map(|x| x.max(0.0)).collect();
    eig.resize(p, 0.0);
    Ok(eig)
}

/// `∫ g(s) ρ(s) ds` including the atom.
pub fn spectral_integral(model: &SpectralModel, g: impl Fn(f64) -> f64) -> Result<f64> {
    let mut acc = 0.0;
    for &(s, w) in model.points() {
        let v = g(s);
        if !v.is_finite() {
            return Err(Error::Domain(format!("spectral integrand is {v} at s = {s}")));
        }
        acc += w * v;
    }
    if model.atom_mass() > 0.0 {
        let s = model.atom_location();
        let v = g(s);
        if !v.is_finite() {
            return Err(Error::Domain(format!("spectral integrand is {v} at the atom s = {s}")));
        }
        acc += model.atom_mass() * v;
    }
    Ok(acc)
}

/// On-disk cache of empirical spectra: an eigenvalue CSV plus a JSON sidecar,
/// both named by a content hash of the inputs.
#[derive(Clone, Debug)]
pub struct SpectrumCache {
    dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSidecar {
    pub p: usize,
    pub d: usize,
    pub seed: u64,
    pub kappa1: f64,
    pub kappa_star: f64,
}

impl SpectrumCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        SpectrumCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(seed: u64, p: usize, d: usize, coeffs: &ActivationCoeffs) -> String {
        let mut h = Sha256::new();
        h.update(format!(
            "rfens-spectrum-v1|{p}|{d}|{seed}|{:?}|{:?}",
            coeffs.kappa1, coeffs.kappa_star
        ));
        hex::encode(h.finalize())
    }

    pub fn load_or_compute(&self, seed: u64, p: usize, d: usize, coeffs: ActivationCoeffs) -> Result<SpectralModel> {
        let key = Self::key(seed, p, d, &coeffs);
        let csv = self.dir.join(format!("{key}.csv"));
        let meta = self.dir.join(format!("{key}.json"));
        let gamma = d as f64 / p as f64;
        if csv.exists() && meta.exists() {
            let sidecar: SpectrumSidecar = serde_json::from_str(&std::fs::read_to_string(&meta)?)?;
            let expected = SpectrumSidecar { p, d, seed, kappa1: coeffs.kappa1, kappa_star: coeffs.kappa_star };
            if sidecar == expected {
                let eig = std::fs::read_to_string(&csv)?
                    .lines()
                    .skip(1)
                    .map(|l| l.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Config(format!("corrupt spectrum cache {}: {e}", csv.display())))?;
                if eig.len() == p {
                    return SpectralModel::from_eigenvalues(eig, gamma, coeffs);
                }
            }
        }
        let model = empirical_spectral_model(seed, p, d, coeffs)?;
        std::fs::create_dir_all(&self.dir)?;
        let mut body = String::from("eigenvalue\n");
        for s in model.eigenvalues() {
            body.push_str(&format!("{s:?}\n"));
        }
        std::fs::write(&csv, body)?;
        let sidecar = SpectrumSidecar { p, d, seed, kappa1: coeffs.kappa1, kappa_star: coeffs.kappa_star };
        std::fs::write(&meta, serde_json::to_string_pretty(&sidecar)?)?;
        Ok(model)
    }
}
