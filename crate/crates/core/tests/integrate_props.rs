use slowmf::TimeGrid;
use slowmf::integrate::{Scheme, solve_rde, solve_sde};
use slowmf::{NoiseBundle, SlowFastModel, example_model, stats};

fn example(eps: f64) -> SlowFastModel {
    example_model(0.1, 6.0).unwrap().with_eps(eps).unwrap()
}

fn endpoint_gap(a: &slowmf::integrate::Trajectory, b: &slowmf::integrate::Trajectory) -> f64 {
    let (i, j) = (a.len() - 1, b.len() - 1);
    (a.fast(i)[0] - b.fast(j)[0]).abs() + (a.slow(i)[0] - b.slow(j)[0]).abs()
}

#[test]
fn runs_replay_bitwise() {
    let m = example(0.1);
    let g = TimeGrid::new(0.0, 2.0, 1e-3).unwrap();
    let noise = NoiseBundle::sample(g, 99, Some(0.05)).unwrap();
    for scheme in [
        Scheme::ExponentialTrapezoid,
        Scheme::ExponentialEuler,
        Scheme::EulerMaruyama,
    ] {
        let a = solve_sde(&m, &noise, (&[1.0], &[2.0]), &g, scheme).unwrap();
        let b = solve_sde(&m, &noise, (&[1.0], &[2.0]), &g, scheme).unwrap();
        assert_eq!(a, b);
        let a = solve_rde(&m, &noise, (&[1.0], &[2.0]), &g, scheme).unwrap();
        let b = solve_rde(&m, &noise, (&[1.0], &[2.0]), &g, scheme).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn white_noise_solver_converges_strongly() {
    let m = example(0.1);
    let fine = 0.1 / 20.0 / 16.0;
    let g = TimeGrid::new(0.0, 1.0, fine).unwrap();
    let factors = [16usize, 8, 4];
    let mut errors = vec![Vec::new(); factors.len()];
    for seed in 0..10 {
        let noise = NoiseBundle::sample(g, seed, None).unwrap();
        let reference = solve_sde(&m, &noise, (&[0.5], &[3.0]), &g, Scheme::default()).unwrap();
        for (k, &f) in factors.iter().enumerate() {
            let coarse = noise.coarsen(f).unwrap();
            let tr = solve_sde(
                &m,
                &coarse,
                (&[0.5], &[3.0]),
                coarse.grid(),
                Scheme::default(),
            )
            .unwrap();
            errors[k].push(endpoint_gap(&tr, &reference));
        }
    }
    let dts: Vec<f64> = factors.iter().map(|&f| f as f64 * fine).collect();
    let means: Vec<f64> = errors.iter().map(|e| stats::mean(e)).collect();
    let order = stats::log_log_slope(&dts, &means).unwrap();
    assert!(order >= 0.5, "order {order}, errors {means:?}");
}

#[test]
fn noiseless_wong_zakai_slow_block_is_second_order() {
    let m = example(0.1).with_sigma(vec![0.0]).unwrap();
    let fine = 0.1 / 20.0 / 16.0;
    let g = TimeGrid::new(0.0, 1.0, fine).unwrap();
    let noise = NoiseBundle::sample(g, 0, Some(0.05)).unwrap();
    let slow_end = |n: &NoiseBundle| {
        let tr = solve_rde(&m, n, (&[4.0], &[5.0]), n.grid(), Scheme::default()).unwrap();
        tr.slow(tr.len() - 1)[0]
    };
    let reference = slow_end(&noise);
    let factors = [16usize, 8, 4];
    let dts: Vec<f64> = factors.iter().map(|&f| f as f64 * fine).collect();
    let errs: Vec<f64> = factors
        .iter()
        .map(|&f| (slow_end(&noise.coarsen(f).unwrap()) - reference).abs())
        .collect();
    let order = stats::log_log_slope(&dts, &errs).unwrap();
    assert!(order >= 1.7, "order {order}, errors {errs:?}");
}

#[test]
fn small_scale_run_stays_finite() {
    let m = example(0.01);
    let g = TimeGrid::new(0.0, 20.0, 0.01 / 20.0).unwrap();
    let noise = NoiseBundle::sample(g, 5, Some(0.01)).unwrap();
    let tr = solve_sde(&m, &noise, (&[0.0], &[5.0]), &g, Scheme::default()).unwrap();
    assert!(
        tr.fast_values()
            .iter()
            .chain(tr.slow_values())
            .all(|x| x.is_finite())
    );
}

#[test]
fn wong_zakai_path_approaches_white_path() {
    let m = example(0.1);
    let g = TimeGrid::new(0.0, 1.0, 1e-4).unwrap();
    let mus = [0.1, 0.01, 0.001];
    let mut means = Vec::new();
    for &mu in &mus {
        let gaps: Vec<f64> = (0..5)
            .map(|seed| {
                let white = NoiseBundle::sample(g, seed, None).unwrap();
                let colored = white.with_mu(mu).unwrap();
                let a = solve_sde(&m, &white, (&[0.0], &[3.0]), &g, Scheme::default()).unwrap();
                let b = solve_rde(&m, &colored, (&[0.0], &[3.0]), &g, Scheme::default()).unwrap();
                (0..a.len())
                    .map(|i| (a.slow(i)[0] - b.slow(i)[0]).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        means.push(stats::mean(&gaps));
    }
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
}
