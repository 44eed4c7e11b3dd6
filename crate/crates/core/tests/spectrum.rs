use proptest::prelude::*;
use rfens_core::quadrature::gauss_hermite_rule;
use rfens_core::spectrum::*;

fn erf() -> ActivationCoeffs {
    Activation::Erf.coeffs()
}

/// Resolvent `∫ dμ(x)/(x + t)` of the full Marchenko-Pastur law (atom
/// included) with ratio `c = p/d`, from the quadratic Stieltjes equation.
fn mp_resolvent(c: f64, t: f64) -> f64 {
    let b = 1.0 - c + t;
    (-b + (b * b + 4.0 * c * t).sqrt()) / (2.0 * c * t)
}

#[test]
fn mass_is_conserved() {
    for gamma in [0.1, 0.5, 1.0, 2.0, 10.0] {
        let m = mp_spectral_model(1.0, gamma, erf()).unwrap();
        assert!((m.total_mass() - 1.0).abs() < 1e-8, "γ={gamma}: {}", m.total_mass());
        let unit = spectral_integral(&m, |_| 1.0).unwrap();
        assert!((unit - 1.0).abs() < 1e-8);
        assert!(m.points().iter().all(|p| p.0 >= 0.0));
    }
}

#[test]
fn resolvent_matches_stieltjes_oracle() {
    let c = erf();
    let k2 = c.kappa1 * c.kappa1;
    for gamma in [0.05, 0.3, 0.5, 0.99, 1.0, 1.01, 2.0, 10.0] {
        let m = mp_spectral_model(1.0, gamma, c).unwrap();
        for (lambda, vhat) in [(1e-6, 1.0), (0.1, 2.0), (1.0, 0.5), (10.0, 3.0)] {
            let got = spectral_integral(&m, |s| 1.0 / (lambda + vhat * s)).unwrap();
            let t = (lambda + vhat * c.kappa_star_sq()) / (vhat * k2);
            let want = mp_resolvent(1.0 / gamma, t) / (vhat * k2);
            assert!(((got - want) / want).abs() < 1e-10, "γ={gamma} λ={lambda}: {got} vs {want}");
        }
    }
}

#[test]
fn low_moments() {
    let c = erf();
    let k2 = c.kappa1 * c.kappa1;
    let ks2 = c.kappa_star_sq();
    for gamma in [0.25, 1.0, 4.0] {
        let ratio = 1.0 / gamma;
        let m = mp_spectral_model(1.0, gamma, c).unwrap();
        let m1 = spectral_integral(&m, |s| s).unwrap();
        assert!((m1 - (k2 + ks2)).abs() < 1e-10);
        // E x² = 1 + c for the MP law with ratio c.
        let m2 = spectral_integral(&m, |s| s * s).unwrap();
        let want = ks2 * ks2 + 2.0 * ks2 * k2 + k2 * k2 * (1.0 + ratio);
        assert!((m2 - want).abs() < 1e-10);
    }
}

#[test]
fn thin_features_concentrate() {
    let c = erf();
    let m = mp_spectral_model(1.0, 1e4, c).unwrap();
    let mean = spectral_integral(&m, |s| s).unwrap();
    let var = spectral_integral(&m, |s| (s - mean).powi(2)).unwrap();
    assert!((mean - c.kappa1.powi(2) - c.kappa_star_sq()).abs() < 1e-10);
    assert!(var.sqrt() < 0.01 * mean);
}

#[test]
fn empirical_rank_and_trace() {
    let c = erf();
    let (p, d) = (2000, 1000);
    let emp = empirical_spectral_model(11, p, d, c).unwrap();
    let eig = emp.eigenvalues();
    let at_shift = eig.iter().filter(|s| (**s - c.kappa_star_sq()).abs() < 1e-8).count();
    assert!(at_shift >= p - d && at_shift <= p - d + 2, "{at_shift}");
    let mean = spectral_integral(&emp, |s| s).unwrap();
    let want = c.kappa1.powi(2) + c.kappa_star_sq();
    assert!((mean - want).abs() < 3.0 * want / (p as f64).sqrt());

    let f = rfens_core::random::feature_matrix(p, d, 11);
    let trace = c.kappa1.powi(2) * f.norm_squared() / d as f64 / p as f64 + c.kappa_star_sq();
    assert!((mean - trace).abs() < 1e-10);

    let closed = mp_spectral_model(1.0, d as f64 / p as f64, c).unwrap();
    for g in [
        (|s: f64| 1.0 / (1.0 + s)) as fn(f64) -> f64,
        |s| s / (0.1 + s),
        |s| (-s).exp(),
        |s| (1.0 + s).ln(),
    ] {
        let a = spectral_integral(&closed, g).unwrap();
        let b = spectral_integral(&emp, g).unwrap();
        assert!(((a - b) / a).abs() < 0.02, "{a} vs {b}");
    }
}

#[test]
fn empirical_is_deterministic_and_capped() {
    let c = erf();
    assert_eq!(empirical_spectral_model(4, 40, 30, c).unwrap(), empirical_spectral_model(4, 40, 30, c).unwrap());
    assert!(matches!(
        empirical_spectral_model(1, 100_000, 100_000, c),
        Err(rfens_core::Error::Resource(_))
    ));
}

#[test]
fn mp_shape_convention_matches_sampled_features() {
    // The closed form uses shape γ = d/p; a sampled F of shape p×d must agree.
    let c = erf();
    for (p, d) in [(1500, 500), (500, 1500)] {
        let emp = empirical_spectral_model(2, p, d, c).unwrap();
        let closed = mp_spectral_model(1.0, d as f64 / p as f64, c).unwrap();
        let g = |s: f64| 1.0 / (0.05 + s);
        let a = spectral_integral(&closed, g).unwrap();
        let b = spectral_integral(&emp, g).unwrap();
        assert!(((a - b) / a).abs() < 0.02, "p={p} d={d}: {a} vs {b}");
        let swapped = mp_spectral_model(1.0, p as f64 / d as f64, c).unwrap();
        let s = spectral_integral(&swapped, g).unwrap();
        assert!(((s - b) / b).abs() > 0.1);
    }
}

proptest! {
    #[test]
    fn coefficients_scale_linearly(scale in -3.0f64..3.0) {
        let rule = gauss_hermite_rule(120).unwrap();
        let base = activation_coeffs(f64::tanh, &rule).unwrap();
        let scaled = activation_coeffs(|x| scale * x.tanh(), &rule).unwrap();
        prop_assert!((scaled.kappa0 - scale * base.kappa0).abs() < 1e-12);
        prop_assert!((scaled.kappa1 - scale * base.kappa1).abs() < 1e-12);
        prop_assert!((scaled.kappa_star - scale.abs() * base.kappa_star).abs() < 1e-9);
    }

    #[test]
    fn mass_for_any_shape(gamma in 0.01f64..50.0) {
        let m = mp_spectral_model(1.0, gamma, erf()).unwrap();
        prop_assert!((m.total_mass() - 1.0).abs() < 1e-8);
    }
}
