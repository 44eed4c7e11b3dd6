use proptest::prelude::*;
use rfens_core::quadrature::*;

fn double_factorial(k: u32) -> f64 {
    (1..=k).rev().step_by(2).map(|v| v as f64).product()
}

/// `E Z^k` for a standard normal.
fn gaussian_moment(k: u32) -> f64 {
    if k % 2 == 1 {
        0.0
    } else if k == 0 {
        1.0
    } else {
        double_factorial(k - 1)
    }
}

#[test]
fn weights_normalized_and_nodes_symmetric() {
    for order in [1, 2, 5, 61, 101, 200, MAX_ORDER] {
        let r = gauss_hermite_rule(order).unwrap();
        let sum: f64 = r.weights().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(r.weights().iter().all(|w| *w > 0.0));
        assert!(r.nodes().windows(2).all(|w| w[0] < w[1]));
        for (a, b) in r.nodes().iter().zip(r.nodes().iter().rev()) {
            assert!((a + b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }
}

proptest! {
    #[test]
    fn exact_on_polynomials(order in 1usize..80, frac in 0.0f64..1.0) {
        let r = gauss_hermite_rule(order).unwrap();
        let max_degree = (2 * order - 1).min(60) as u32;
        let k = (frac * max_degree as f64).round() as u32;
        let got = expect_1d(|x| x.powi(k as i32), &r).unwrap();
        let scale = gaussian_moment(k + (k % 2)).max(1.0);
        prop_assert!((got - gaussian_moment(k)).abs() <= 1e-10 * scale, "k={} got={}", k, got);
    }

    #[test]
    fn correlated_rule_symmetric(q0 in 0.1f64..5.0, ratio in -1.0f64..1.0, a in -2.0f64..2.0) {
        let r = gauss_hermite_rule(DEFAULT_ORDER_2D).unwrap();
        let q1 = ratio * q0;
        let g = |x: f64, y: f64| (a * x).tanh() * (a * y).tanh() + (x + y).cos();
        let g_sw = |x: f64, y: f64| g(y, x);
        let u = expect_2d_correlated(g, q0, q1, &r).unwrap();
        let v = expect_2d_correlated(g_sw, q0, q1, &r).unwrap();
        prop_assert!((u - v).abs() < 1e-10);
    }

    #[test]
    fn correlated_rule_polynomial_moments(q0 in 0.1f64..5.0, ratio in -1.0f64..1.0) {
        let r = gauss_hermite_rule(DEFAULT_ORDER_2D).unwrap();
        let q1 = ratio * q0;
        // E[ω² ω'²] = q0² + 2 q1²
        let got = expect_2d_correlated(|x, y| x * x * y * y, q0, q1, &r).unwrap();
        prop_assert!((got - (q0 * q0 + 2.0 * q1 * q1)).abs() < 1e-10 * q0 * q0);
    }
}

#[test]
fn degenerate_covariance_uses_single_variable() {
    let r = gauss_hermite_rule(DEFAULT_ORDER_2D).unwrap();
    let g = |x: f64, y: f64| (x - 0.3).abs() * (y + 0.2).abs();
    let two = expect_2d_correlated(g, 1.3, 1.3, &r).unwrap();
    let one = expect_1d(|z| g(1.3f64.sqrt() * z, 1.3f64.sqrt() * z), &r).unwrap();
    assert_eq!(two, one);
}

#[test]
fn panel_rule_matches_hermite_on_smooth_integrands() {
    let h = gauss_hermite_rule(DEFAULT_ORDER_1D).unwrap();
    let p = PanelRule::default();
    let g = |z: f64| (1.0 + libm::erf(0.7 * z)) * (0.3 * z).cos();
    let a = expect_1d(g, &h).unwrap();
    let b = p.expect(g, &[]).unwrap();
    assert!((a - b).abs() < 1e-13);
    let two = p.pairs(0.999, &[0.5], &[-0.5]).unwrap();
    let mass: f64 = two.iter().map(|t| t[2]).sum();
    assert!((mass - 1.0).abs() < 1e-13);
}

#[test]
fn product_pairs_reproduce_correlated_moments() {
    let p = PanelRule::default();
    for eta in [-0.9, 0.0, 0.5, 0.99] {
        let pts = p.product_pairs(eta, &[0.3, -1.2]).unwrap();
        let sum = |g: &dyn Fn(f64, f64) -> f64| pts.iter().map(|t| t[2] * g(t[0], t[1])).sum::<f64>();
        assert!((sum(&|_, _| 1.0) - 1.0).abs() < 1e-12, "η={eta}");
        assert!((sum(&|x, y| x * y) - eta).abs() < 1e-12, "η={eta}");
        assert!((sum(&|x, y| x * x * y * y) - (1.0 + 2.0 * eta * eta)).abs() < 1e-11, "η={eta}");
    }
    assert!(p.product_pairs(0.999, &[]).is_none());
}
