use std::f64::consts::PI;

use serde_json::json;

use slowmf::estimate::{
    Observation, estimate_from_observation, estimation_noise, synthetic_observation,
};
use slowmf::manifold::{
    GapStudy, LpSolver, history_grid, invariance_check, manifold_graph_at, n_variance,
    nonuniformity_diagnostic, wz_manifold_gap,
};
use slowmf::noise::{Z0Mode, required_burn_in, sample_brownian};
use slowmf::tracking::{manifold_point, tracking_gap};
use slowmf::{
    DriverKind, Error, NoiseBundle, Result, SlowFastModel, TimeGrid, check_assumptions,
    io::grid_json, stationary_driver, stats,
};

use crate::config::RunConfig;
use crate::output::Sink;

const DEFAULT_SEED: u64 = 2024;

fn seeds(base: Option<u64>, n: usize) -> Result<Vec<u64>> {
    if n == 0 {
        return Err(Error::Config("n_seeds must be at least 1".into()));
    }
    let base = base.unwrap_or(DEFAULT_SEED);
    Ok((0..n as u64).map(|k| base.wrapping_add(k)).collect())
}

fn nonempty(name: &str, list: &[f64]) -> Result<()> {
    if list.is_empty() {
        return Err(Error::Config(format!("{name} must not be empty")));
    }
    Ok(())
}

/// The model at scale `eps`, refused when its assumption report is not clean.
fn checked_model(cfg: &RunConfig, eps: Option<f64>) -> Result<SlowFastModel> {
    let mut model = cfg.model.build()?;
    if let Some(eps) = eps {
        model = model.with_eps(eps)?;
    }
    let report = check_assumptions(&model)?;
    if !report.ok {
        return Err(Error::Assumption(report.violations));
    }
    Ok(model)
}

pub fn paths(cfg: &RunConfig, seed: Option<u64>, sink: &mut Sink) -> Result<()> {
    let p = &cfg.paths;
    nonempty("paths.mu_list", &p.mu_list)?;
    let grid = TimeGrid::new(p.t_start, p.t_end, p.dt)?;
    for s in seeds(seed, p.n_seeds)? {
        let b = sample_brownian(grid, s)?;
        let meta = json!({ "kind": "brownian", "seed": s, "grid": grid_json(&grid) });
        let rows = |v: &[f64]| -> Vec<Vec<f64>> {
            v.iter()
                .enumerate()
                .map(|(i, x)| vec![grid.time(i), *x])
                .collect()
        };
        sink.table(
            &format!("brownian_s{s}"),
            &["t", "value"],
            rows(b.values()),
            meta,
        )?;
        for &mu in &p.mu_list {
            let noise = NoiseBundle::colored(b.clone(), mu, Z0Mode::StationarySample)?;
            let z = noise.ou()?;
            let phi = noise.integrated()?.values();
            let err: Vec<f64> = phi
                .iter()
                .zip(b.values())
                .map(|(x, y)| (x - y).abs())
                .collect();
            let sup = err.iter().copied().fold(0.0, f64::max);
            let tag = format!("mu{mu}_s{s}");
            let meta = |kind: &str| json!({ "kind": kind, "seed": s, "mu": mu, "z0": z.z0(), "grid": grid_json(&grid) });
            sink.table(
                &format!("ou_{tag}"),
                &["t", "value"],
                rows(z.values()),
                meta("ou"),
            )?;
            sink.table(
                &format!("integrated_{tag}"),
                &["t", "value"],
                rows(phi),
                meta("integrated_ou"),
            )?;
            let mut m = meta("abs_error");
            m["sup"] = json!(sup);
            sink.table(&format!("error_{tag}"), &["t", "value"], rows(&err), m)?;
        }
    }
    Ok(())
}

pub fn manifold(cfg: &RunConfig, seed: Option<u64>, sink: &mut Sink) -> Result<()> {
    let m = &cfg.manifold;
    nonempty("manifold.eps_list", &m.eps_list)?;
    if m.xi_list.is_empty() {
        return Err(Error::Config("manifold.xi_list must not be empty".into()));
    }
    if m.mu_list.is_empty() && !m.white {
        return Err(Error::Config(
            "nothing to compute: empty mu_list and white = false".into(),
        ));
    }
    let extra = f64::max(
        m.evolution.as_ref().map_or(0.0, |e| e.t_end),
        m.invariance.as_ref().map_or(0.0, |i| i.t_check),
    );
    let mu_max = m.mu_list.iter().copied().reduce(f64::max);
    for &eps in &m.eps_list {
        let model = checked_model(cfg, Some(eps))?;
        let grid = history_grid(&model, m.dt, mu_max, &m.lp, extra)?;
        let zero = grid.require_zero_node()?;
        for s in seeds(seed, m.n_seeds)? {
            let white = NoiseBundle::sample(grid, s, None)?;
            let mut runs = Vec::new();
            if m.white {
                runs.push((
                    format!("eps{eps}_white_s{s}"),
                    white.clone(),
                    DriverKind::White,
                ));
            }
            for &mu in &m.mu_list {
                runs.push((
                    format!("eps{eps}_mu{mu}_s{s}"),
                    white.with_mu(mu)?,
                    DriverKind::Colored,
                ));
            }
            for (tag, noise, kind) in runs {
                let mu = if kind == DriverKind::Colored {
                    noise.mu()
                } else {
                    None
                };
                let burn = required_burn_in(model.a_matrix(), eps, mu)?;
                let driver =
                    stationary_driver(&noise, model.a_matrix(), model.sigma(), eps, kind, burn)?;
                let solver = LpSolver::new(&model, &driver, m.lp)?;
                let sample = manifold_graph_at(&solver, zero, &m.xi_list)?;
                let (n1, n2) = (model.n1(), model.n2());
                let header = columns(&[("xi", n2), ("h", n1)]);
                let rows = sample
                    .xi_grid
                    .iter()
                    .zip(&sample.h_values)
                    .map(|(x, h)| [&x[..], h].concat());
                let meta = json!({
                    "eps": eps, "mu": mu, "seed": s, "base_time": sample.base_time,
                    "lipschitz_est": sample.lipschitz_est, "lipschitz_bound": sample.lipschitz_bound,
                    "iterations": sample.iterations, "residual": sample.residual,
                    "max_ratio": sample.max_ratio, "t_cut": solver.t_cut(),
                });
                sink.table(&format!("graph_{tag}"), &refs(&header), rows, meta)?;

                if let Some(ev) = &m.evolution {
                    if ev.every == 0 {
                        return Err(Error::Config("evolution.every must be positive".into()));
                    }
                    let last = grid.node(ev.t_end)?;
                    let mut rows = Vec::new();
                    for node in (zero..=last).step_by(ev.every) {
                        for xi in &m.xi_list {
                            let h = solver.solve_at(node, xi)?.h;
                            rows.push([&[grid.time(node)][..], xi, &h].concat());
                        }
                    }
                    let header = columns(&[("t", 1), ("xi", n2), ("h", n1)]);
                    let meta = json!({ "eps": eps, "mu": mu, "seed": s, "every": ev.every });
                    sink.table(&format!("surface_{tag}"), &refs(&header), rows, meta)?;
                }

                if let Some(inv) = &m.invariance {
                    let r = invariance_check(
                        &model,
                        &noise,
                        kind,
                        &m.xi_list,
                        inv.t_check,
                        &m.lp,
                        inv.scheme,
                    )?;
                    let rows = m
                        .xi_list
                        .iter()
                        .zip(&r.distances)
                        .map(|(x, d)| [&x[..], &[*d]].concat());
                    let header = columns(&[("xi", n2), ("distance", 1)]);
                    let meta = json!({
                        "eps": eps, "mu": mu, "seed": s, "t_check": r.t_check,
                        "max_distance": r.max_distance, "scale": r.scale, "relative": r.relative(),
                    });
                    sink.table(&format!("invariance_{tag}"), &refs(&header), rows, meta)?;
                }
            }
        }
    }
    Ok(())
}

pub fn converge(cfg: &RunConfig, seed: Option<u64>, sink: &mut Sink) -> Result<()> {
    let c = &cfg.converge;
    if c.mu_list.len() < 3 {
        return Err(Error::Fit(format!(
            "a rate fit needs at least 3 values of mu, got {}",
            c.mu_list.len()
        )));
    }
    nonempty("converge.eps_list", &c.eps_list)?;
    let seed_list = seeds(seed, c.n_seeds)?;

    let grid = TimeGrid::new(0.0, c.noise_horizon, c.dt)?;
    let mut rows = Vec::new();
    for &mu in &c.mu_list {
        let sups = seed_list
            .iter()
            .map(|&s| {
                let n = NoiseBundle::sample(grid, s, Some(mu))?;
                let phi = n.integrated()?.values();
                Ok(phi
                    .iter()
                    .zip(n.brownian().values())
                    .map(|(p, b)| (p - b).abs())
                    .fold(0.0, f64::max))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(vec![mu, stats::mean(&sups), stats::stderr(&sups)]);
    }
    let mus: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let means: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    let noise_slope = stats::log_log_slope(&mus, &means)?;
    let meta = json!({ "horizon": c.noise_horizon, "dt": c.dt, "seeds": seed_list.len(), "slope": noise_slope });
    sink.table("noise_rate", &["mu", "mean_sup", "stderr"], rows, meta)?;

    let mut summary = Vec::new();
    for &eps in &c.eps_list {
        let model = checked_model(cfg, Some(eps))?;
        let study = GapStudy {
            mu_list: c.mu_list.clone(),
            xi_list: c.xi_list.clone(),
            seeds: seed_list.clone(),
            dt: c.dt,
            source: c.source,
            lp: c.lp,
        };
        let table = wz_manifold_gap(&model, &study)?;
        let rows = table.rows.iter().map(|r| vec![r.mu, r.mean_gap, r.stderr]);
        let decreasing = table.strictly_decreasing_in_mu();
        let meta = json!({ "eps": eps, "slope": table.slope, "strictly_decreasing": decreasing });
        sink.table(
            &format!("gap_eps{eps}"),
            &["mu", "mean_gap", "stderr"],
            rows,
            meta,
        )?;
        summary.push(
            json!({ "eps": eps, "slope": table.slope, "strictly_decreasing": decreasing,
                             "rows": table.rows }),
        );
    }
    sink.json(
        "converge_summary",
        &json!({ "noise_slope": noise_slope, "manifold": summary }),
    )?;
    Ok(())
}

pub fn track(cfg: &RunConfig, seed: Option<u64>, sink: &mut Sink) -> Result<()> {
    let t = &cfg.track;
    let model = checked_model(cfg, Some(t.eps))?;
    if t.xi.len() != model.n2() || t.fast_offset.len() != model.n1() {
        return Err(Error::Config(
            "track.xi and track.fast_offset must match the model dimensions".into(),
        ));
    }
    let noise_grid = history_grid(&model, t.dt, Some(t.mu), &t.lp, t.t_end)?;
    let grid = TimeGrid::new(0.0, t.t_end, t.dt)?;
    let threshold = 0.5 * model.constants().rho / t.eps;
    for s in seeds(seed, t.n_seeds)? {
        let noise = NoiseBundle::sample(noise_grid, s, Some(t.mu))?;
        let h = manifold_point(&model, &noise, &t.xi, &grid, t.source, &t.lp)?;
        let eta: Vec<f64> = h.iter().zip(&t.fast_offset).map(|(a, b)| a + b).collect();
        let r = tracking_gap(
            &model,
            &noise,
            (&eta, &t.xi),
            &grid,
            t.source,
            &t.lp,
            t.scheme,
        )?;
        let meta = json!({
            "eps": t.eps, "mu": t.mu, "seed": s, "fitted_rate": r.fitted_rate,
            "fit_points": r.fit_points, "rate_threshold": threshold,
            "rate_ok": r.fitted_rate.is_some_and(|x| x >= threshold),
            "floor": r.floor, "initial_gap": r.initial_gap, "max_gap": r.max_gap(),
            "c1_bound": r.c1_bound, "c2_bound": r.c2_bound, "kappa_star": r.kappa_star,
        });
        let rows = r.gap_series.iter().map(|(t, g)| vec![*t, *g]);
        sink.table(&format!("track_s{s}"), &["t", "gap"], rows, meta)?;
    }
    Ok(())
}

/// Returns the wall time of the estimation proper.
pub fn estimate(cfg: &RunConfig, seed: Option<u64>, sink: &mut Sink) -> Result<f64> {
    let mut est = cfg.estimate.clone();
    if let Some(s) = seed {
        est.seed = s;
    }
    est.validate()?;
    let model = checked_model(cfg, None)?;
    let noises = (0..est.n_mc)
        .map(|k| estimation_noise(&model, &est, k))
        .collect::<Result<Vec<_>>>()?;
    let obs = match &cfg.observation {
        Some(path) => Observation::from_csv(path)?,
        None => {
            let obs = synthetic_observation(&model, &est, &noises[0])?;
            let header = columns(&[("t", 1), ("v", obs.n2)]);
            let rows =
                (0..obs.grid.n_nodes()).map(|i| [&[obs.grid.time(i)][..], obs.slow(i)].concat());
            let meta =
                json!({ "a_true": est.a_true, "seed": est.seed, "eta0": est.eta0, "xi0": est.xi0 });
            sink.table("observation", &refs(&header), rows, meta)?;
            obs
        }
    };
    let result = estimate_from_observation(&model, &est, &obs, &noises)?;
    sink.json("estimate", &json!({ "config": est, "result": result }))?;
    Ok(result.wall_seconds)
}

pub fn diagnose(cfg: &RunConfig, seed: Option<u64>, sink: &mut Sink) -> Result<()> {
    let d = &cfg.diagnose;
    nonempty("diagnose.eps_list", &d.eps_list)?;
    let model = cfg.model.build()?;
    if model.n1() != 1 || model.a_matrix()[(0, 0)] != -1.0 {
        return Err(Error::Config(
            "the non-uniformity diagnostic needs a scalar fast part with A = -1".into(),
        ));
    }
    let sigma = d.sigma.unwrap_or(model.sigma()[0]);
    let table = nonuniformity_diagnostic(d.mu, &d.eps_list, &seeds(seed, d.n_seeds)?, sigma)?;
    // E|n| of the stationary Gaussian
    let rows = table.rows.iter().map(|r| {
        let expected = sigma.abs() * (2.0 * n_variance(r.eps, d.mu) / PI).sqrt();
        vec![r.eps, r.mean_abs_n, r.stderr, expected]
    });
    let meta = json!({ "mu": d.mu, "sigma": sigma, "seeds": d.n_seeds, "slope": table.slope });
    sink.table(
        "nonuniformity",
        &["eps", "mean_abs_n", "stderr", "expected_abs_n"],
        rows,
        meta,
    )
}

/// `[("xi", 2), ("h", 1)]` → `xi_1, xi_2, h`.
fn columns(parts: &[(&str, usize)]) -> Vec<String> {
    parts
        .iter()
        .flat_map(|&(stem, n)| slowmf::io::indexed_header("", stem, n).into_iter().skip(1))
        .collect()
}

fn refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}
