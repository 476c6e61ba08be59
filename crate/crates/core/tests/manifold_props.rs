use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;

use slowmf::integrate::Scheme;
use slowmf::manifold::{
    LpOptions, LpSolver, history_grid, invariance_check, manifold_graph, n2_variance,
    nonuniformity_diagnostic, nonuniformity_terms,
};
use slowmf::model::{DeclaredConstants, ZeroNonlinearity};
use slowmf::noise::required_burn_in;
use slowmf::{DriverKind, NoiseBundle, SlowFastModel, example_model, stationary_driver, stats};

fn linear_model(sigma: f64) -> SlowFastModel {
    SlowFastModel::new(
        DMatrix::from_element(1, 1, -1.0),
        DMatrix::from_element(1, 1, 0.001),
        Arc::new(ZeroNonlinearity),
        vec![sigma],
        0.1,
        0.1,
        DeclaredConstants {
            gamma1: 1.0,
            gamma2: 0.001,
            lipschitz: 0.0,
            rho: 0.5,
        },
    )
    .unwrap()
}

fn white_driver(model: &SlowFastModel, noise: &NoiseBundle) -> slowmf::noise::StationaryDriver {
    let burn = required_burn_in(model.a_matrix(), model.eps(), None).unwrap();
    stationary_driver(
        noise,
        model.a_matrix(),
        model.sigma(),
        model.eps(),
        DriverKind::White,
        burn,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn without_fast_nonlinearity_the_graph_is_the_driver(seed in any::<u64>(), xi in -5.0f64..5.0) {
        let m = linear_model(0.1);
        let opts = LpOptions::default();
        let noise = NoiseBundle::sample(history_grid(&m, 1e-3, None, &opts, 0.0).unwrap(), seed, None).unwrap();
        let d = white_driver(&m, &noise);
        let sol = LpSolver::new(&m, &d, opts).unwrap().solve(&[xi]).unwrap();
        prop_assert_eq!(sol.iterations, 1);
        prop_assert_eq!(sol.offset[0], 0.0);
        prop_assert_eq!(sol.h[0], d.value(d.grid().zero_node().unwrap())[0]);
    }
}

#[test]
fn linear_graph_is_invariant() {
    let m = linear_model(0.1);
    let opts = LpOptions::default();
    let grid = history_grid(&m, 1e-3, None, &opts, 0.5).unwrap();
    let xis: Vec<Vec<f64>> = (-3..=3).map(|i| vec![i as f64]).collect();
    for seed in 0..3 {
        let noise = NoiseBundle::sample(grid, seed, None).unwrap();
        let r = invariance_check(
            &m,
            &noise,
            DriverKind::White,
            &xis,
            0.5,
            &opts,
            Scheme::default(),
        )
        .unwrap();
        assert!(r.max_distance <= 1e-8, "seed {seed}: {:e}", r.max_distance);
    }
}

#[test]
fn graph_slope_respects_bound() {
    let m = example_model(0.1, 6.0).unwrap();
    let opts = LpOptions::default();
    let grid = history_grid(&m, 1e-3, Some(0.01), &opts, 0.0).unwrap();
    let xis: Vec<Vec<f64>> = (0..21).map(|i| vec![-5.0 + 0.5 * i as f64]).collect();
    for seed in 0..2 {
        let noise = NoiseBundle::sample(grid, seed, Some(0.01)).unwrap();
        for kind in [DriverKind::White, DriverKind::Colored] {
            let mu = (kind == DriverKind::Colored).then_some(0.01);
            let burn = required_burn_in(m.a_matrix(), m.eps(), mu).unwrap();
            let d =
                stationary_driver(&noise, m.a_matrix(), m.sigma(), m.eps(), kind, burn).unwrap();
            let s = manifold_graph(&m, &d, &xis, &opts).unwrap();
            assert!(
                s.lipschitz_est <= 1.1 * s.lipschitz_bound,
                "{} > {}",
                s.lipschitz_est,
                s.lipschitz_bound
            );
        }
    }
}

#[test]
fn slow_term_variance_at_long_correlation() {
    let (eps, mu) = (0.1, 1.0);
    let samples: Vec<f64> = (0..20_000)
        .map(|s| nonuniformity_terms(eps, mu, s, 1.0).unwrap().1)
        .collect();
    let ratio = stats::variance(&samples) / n2_variance(eps, mu);
    assert!((ratio - 1.0).abs() <= 0.03, "variance ratio {ratio}");
}

#[test]
fn noiseless_diagnostic_vanishes() {
    let t = nonuniformity_diagnostic(1e-3, &[0.1, 0.05, 0.02], &[1, 2, 3], 0.0).unwrap();
    assert!(
        t.rows
            .iter()
            .all(|r| r.mean_abs_n == 0.0 && r.stderr == 0.0)
    );
    assert_eq!(t.slope, None);
}

#[test]
fn equal_scales_use_the_limit_kernel() {
    let t = nonuniformity_diagnostic(0.05, &[0.1, 0.05, 0.02], &[1, 2, 3, 4], 1.0).unwrap();
    assert!(
        t.rows
            .iter()
            .all(|r| r.mean_abs_n.is_finite() && r.mean_abs_n > 0.0)
    );
    assert!(t.slope.is_some());
}
