use proptest::prelude::*;

use slowmf::grid::TimeGrid;
use slowmf::noise::{
    NoiseBundle, Z0Mode, integrated_ou, ou_path, required_burn_in, sample_brownian,
};
use slowmf::{DriverKind, WienerShift, stationary_driver, stats};

fn grid() -> TimeGrid {
    TimeGrid::new(-0.5, 0.5, 1e-3).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampling_is_deterministic(seed in any::<u64>(), mu in 0.01f64..1.0) {
        let a = NoiseBundle::sample(grid(), seed, Some(mu)).unwrap();
        let b = NoiseBundle::sample(grid(), seed, Some(mu)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.integrated().unwrap().values(), b.integrated().unwrap().values());
    }

    #[test]
    fn integrated_ou_equals_brownian_minus_ou_drift(seed in any::<u64>(), mu in 0.01f64..1.0) {
        let n = NoiseBundle::sample(grid(), seed, Some(mu)).unwrap();
        let (b, z, phi) = (n.brownian().values(), n.ou().unwrap().values(), n.integrated().unwrap().values());
        let z0 = z[grid().zero_node().unwrap()];
        for i in 0..grid().n_nodes() {
            let r = phi[i] - b[i] + mu * (z[i] - z0);
            prop_assert!(r.abs() <= 1e-12, "node {i}: {r:e}");
        }
    }

    #[test]
    fn shifts_compose(seed in any::<u64>(), i in 0usize..400, j in 0usize..400) {
        let b = sample_brownian(grid(), seed).unwrap();
        let (t, s) = (i as f64 * 1e-3 - 0.2, j as f64 * 1e-3 - 0.2);
        let id = b.wiener_shift(0.0).unwrap();
        prop_assert_eq!(id.values(), b.values());
        let two = b.wiener_shift(t).unwrap().wiener_shift(s).unwrap();
        let one = b.wiener_shift(t + s).unwrap();
        prop_assert_eq!(two.grid(), one.grid());
        prop_assert_eq!(two.values(), one.values());
    }

    #[test]
    fn ou_restarted_at_a_node_continues_the_path(seed in any::<u64>(), k in 1usize..900) {
        let b = sample_brownian(grid(), seed).unwrap();
        let z = ou_path(&b, 0.05, Z0Mode::StationarySample).unwrap();
        let t = grid().time(k);
        let tail = b.wiener_shift(t).unwrap().window(k, grid().n_steps()).unwrap();
        let restarted = ou_path(&tail, 0.05, Z0Mode::Explicit(z.values()[k])).unwrap();
        prop_assert_eq!(restarted.values(), &z.values()[k..]);
    }
}

#[test]
fn integrated_ou_shift_matches_increment() {
    let n = NoiseBundle::sample(grid(), 11, Some(0.02)).unwrap();
    let phi = integrated_ou(n.ou().unwrap()).unwrap();
    let shifted = phi.wiener_shift(0.25).unwrap();
    let k = grid().node(0.25).unwrap();
    for (i, v) in shifted.values().iter().enumerate() {
        assert_eq!(*v, phi.values()[i] - phi.values()[k]);
    }
}

#[test]
fn brownian_increment_variance() {
    let dt = 1e-3;
    let g = TimeGrid::new(0.0, 1000.0, dt).unwrap();
    let b = sample_brownian(g, 4242).unwrap();
    let v = stats::variance(b.increments());
    assert!((v / dt - 1.0).abs() < 0.01, "variance ratio {}", v / dt);
}

#[test]
fn colored_driver_approaches_white_driver() {
    // sup over [0, 1] of the difference between drivers on one Brownian path
    let (eps, sigma) = (0.1, [0.1]);
    let a = nalgebra::DMatrix::from_element(1, 1, -1.0);
    let g = TimeGrid::new(-1.1, 1.0, 1e-4).unwrap();
    let start = g.zero_node().unwrap();
    let mus = [0.1, 0.01, 0.001];
    let mut means = Vec::new();
    for &mu in &mus {
        let sups: Vec<f64> = (0..8)
            .map(|seed| {
                let white = NoiseBundle::sample(g, seed, None).unwrap();
                let colored = white.with_mu(mu).unwrap();
                let burn = required_burn_in(&a, eps, Some(0.1)).unwrap();
                let dw =
                    stationary_driver(&white, &a, &sigma, eps, DriverKind::White, burn).unwrap();
                let dc = stationary_driver(&colored, &a, &sigma, eps, DriverKind::Colored, burn)
                    .unwrap();
                dw.values()[start..]
                    .iter()
                    .zip(&dc.values()[start..])
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        means.push(stats::mean(&sups));
    }
    let slope = stats::log_log_slope(&mus, &means).unwrap();
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
    assert!(slope >= 0.35, "slope {slope}, means {means:?}");
}
