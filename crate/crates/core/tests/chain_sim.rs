use dhlab_core::chain_sim::*;
use dhlab_core::dist_models::DistributionModel;
use dhlab_core::Error;
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn map_examples() {
    for eps in [0.3, 0.1, 0.01] {
        assert!(rel(g_map(eps, 1.0 / eps), 1.0 / eps) < 1e-14);
        assert_eq!(h_map(eps, 0.0), eps * eps);
        assert!(rel(g_inv(eps, 1.0 / eps).unwrap(), 1.0 / eps) < 1e-12);
        assert_eq!(h_inv(eps, eps * eps).unwrap(), 0.0);
    }
    assert_eq!(g_map(0.0, 3.5), 4.5);
    assert_eq!(g_inv(0.0, 2.0).unwrap(), 1.0);
    let p = MapParams::new(0.2).unwrap();
    assert_eq!(p.g(2.0), g_map(0.2, 2.0));
    assert_eq!(p.h(2.0), h_map(0.2, 2.0));
    assert!(MapParams::new(1.0).is_err());
}

#[test]
fn inverses_reject_points_outside_the_image() {
    assert!(matches!(g_inv(0.1, 0.5), Err(Error::OutOfRange { .. })));
    assert!(matches!(g_inv(0.1, 100.0), Err(Error::OutOfRange { .. })));
    assert!(matches!(h_inv(0.1, 1e-3), Err(Error::OutOfRange { .. })));
    assert!(matches!(h_inv(0.1, 1.0), Err(Error::OutOfRange { .. })));
}

#[test]
fn step_examples() {
    assert!(rel(step_sigma(0.0, 2.0, 0.1), 0.02) < 1e-15);
    assert_eq!(step_sigma(1.0, 1.0, 0.0), 0.5);
    assert!((step_sigma(1e12, 2.0, 0.1) - 2.0).abs() < 1e-10);
    assert_eq!(step_s(0.0, 1.7, 0.3), 1.7);
    assert_eq!(step_s(2.0, 1.5, 0.0), 4.5);
}

#[test]
fn config_validation() {
    let ok = ChainConfig::with_samples(0.1, 100, 3200, 1);
    assert!(ok.validate().is_ok());
    assert!(ChainConfig { n_batches: 4, ..ok }.validate().is_err());
    assert!(ChainConfig { n_steps: 3301, ..ok }.validate().is_err());
    assert!(ChainConfig { burn_in: 3300, ..ok }.validate().is_err());
    assert!(ChainConfig { epsilon: 1.0, ..ok }.validate().is_err());
}

#[test]
fn zero_epsilon_limit() {
    let m = DistributionModel::ref1();
    let cfg = ChainConfig::with_samples(0.0, default_burn_in(&m), 10_000_000, 3);
    let s = lyapunov_mc(&m, &cfg).unwrap();
    assert!(s.mean.abs() <= 4.0 * s.std_error, "{s:?}");
    let x = lyapunov_matrix(&m, &cfg).unwrap();
    assert!(x.mean.abs() <= 4.0 * x.std_error.max(1e-12), "{x:?}");
    assert!(matches!(lyapunov_s_chain(&m, &cfg), Err(Error::InvalidParameter { .. })));
}

#[test]
fn estimates_are_deterministic() {
    let m = DistributionModel::ref1();
    let cfg = ChainConfig::with_samples(0.1, 1000, 64_000, 99);
    for method in [Method::SigmaChain, Method::SChain, Method::MatrixProduct] {
        let a = lyapunov(&m, method, &cfg).unwrap();
        let b = lyapunov(&m, method, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.method, method);
        assert!(a.std_error >= 0.0);
    }
    let other = lyapunov_mc(&m, &ChainConfig { seed: 100, ..cfg }).unwrap();
    assert_ne!(other.mean, lyapunov_mc(&m, &cfg).unwrap().mean);
}

#[test]
fn sign_of_epsilon_does_not_matter() {
    let m = DistributionModel::ref1();
    let cfg = ChainConfig::with_samples(0.05, 0, 1_000_000, 17);
    let plus = lyapunov_matrix(&m, &cfg).unwrap();
    let minus = lyapunov_matrix(&m, &ChainConfig { epsilon: -0.05, ..cfg }).unwrap();
    assert!((plus.mean - minus.mean).abs() <= 1e-12);
}

#[test]
fn charts_give_the_same_average() {
    let m = DistributionModel::ref1();
    let cfg = ChainConfig::with_samples(0.05, 1000, 320_000, 8);
    let a = lyapunov_mc(&m, &cfg).unwrap();
    let b = lyapunov_s_chain(&m, &cfg).unwrap();
    assert!(rel(a.mean, b.mean) < 1e-10);
}

#[test]
fn methods_agree_across_epsilon() {
    let m = DistributionModel::ref1();
    for eps in [0.2, 0.1, 0.05] {
        let cfg = ChainConfig::with_samples(eps, default_burn_in(&m), 1_600_000, 21);
        let est: Vec<LyapunovEstimate> = [Method::SigmaChain, Method::SChain, Method::MatrixProduct]
            .iter()
            .map(|&k| lyapunov(&m, k, &cfg).unwrap())
            .collect();
        for i in 0..3 {
            for j in i + 1..3 {
                let se = (est[i].std_error.powi(2) + est[j].std_error.powi(2)).sqrt();
                assert!(
                    (est[i].mean - est[j].mean).abs() <= 4.0 * se,
                    "eps = {eps}: {:?} vs {:?}",
                    est[i],
                    est[j]
                );
            }
        }
    }
}

#[test]
fn independent_seeds_agree() {
    let m = DistributionModel::ref1();
    let a = lyapunov_mc(&m, &ChainConfig::with_samples(0.1, 10_000, 1_600_000, 1)).unwrap();
    let b = lyapunov_mc(&m, &ChainConfig::with_samples(0.1, 10_000, 1_600_000, 2)).unwrap();
    let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    assert!((a.mean - b.mean).abs() <= 4.0 * se);
    assert!(a.n_effective > 0 && a.lag1_autocorrelation.abs() < 1.0);
}

proptest! {
    #[test]
    fn chart_consistency(s in 0.0f64..1e6, z in 0.2f64..3.0, eps in 1e-3f64..0.9) {
        let e2 = eps * eps;
        let lhs = step_s(s, z, eps);
        let rhs = step_sigma(e2 * s, z, eps) / e2;
        prop_assert!(rel(lhs, rhs) < 1e-12);
    }

    #[test]
    fn inverses_round_trip(u in 0.0f64..1.0, eps in 1e-3f64..0.9) {
        let e2 = eps * eps;
        let y = 1.0 + u * (1.0 / e2 - 1.0) * 0.999;
        prop_assert!(rel(g_map(eps, g_inv(eps, y).unwrap()), y) < 1e-12);
        let y = e2 + u * (1.0 - e2) * 0.999;
        prop_assert!(rel(h_map(eps, h_inv(eps, y).unwrap()), y) < 1e-12);
    }

    #[test]
    fn maps_land_in_their_images(x in 0.0f64..1e9, eps in 1e-3f64..0.9) {
        let e2 = eps * eps;
        let g = g_map(eps, x);
        prop_assert!(g >= 1.0 && g <= 1.0 / e2);
        let h = h_map(eps, x);
        prop_assert!(h >= e2 && h <= 1.0);
    }

    #[test]
    fn absorbing_range(sigma0 in 0.0f64..1e9, z1 in 0.2f64..3.0, z2 in 0.2f64..3.0, eps in 0.0f64..0.9) {
        let s = step_sigma(step_sigma(sigma0, z1, eps), z2, eps);
        prop_assert!(s >= 0.2 * eps * eps * (1.0 - 1e-12) && s <= 3.0);
    }
}
