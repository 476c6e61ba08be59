//! Exponential tracking between the white-noise system and orbits confined to
//! the Wong-Zakai manifold.

use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::integrate::{Scheme, aligned_offset, solve_reduced, solve_sde};
use crate::io;
use crate::linalg::dist;
use crate::manifold::{LpOptions, ManifoldClosure, ManifoldSource};
use crate::model::SlowFastModel;
use crate::noise::{DriverKind, NoiseBundle, required_burn_in, stationary_driver};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackingReport {
    /// `(t, ‖w(t) − w̄(t)‖)` with `w̄` the manifold-confined orbit.
    pub gap_series: Vec<(f64, f64)>,
    /// Decay rate fitted while the gap exceeds three times the floor.
    pub fitted_rate: Option<f64>,
    pub fit_points: usize,
    /// Mean gap over the second half of the run.
    pub floor: f64,
    pub initial_gap: f64,
    pub c1_bound: f64,
    pub c2_bound: f64,
    pub kappa_star: f64,
}

impl TrackingReport {
    pub fn max_gap(&self) -> f64 {
        self.gap_series.iter().map(|p| p.1).fold(0.0, f64::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header = ["t", "gap"].map(String::from);
        io::write_rows(
            path,
            &header,
            self.gap_series.iter().map(|(t, g)| vec![*t, *g]),
        )?;
        io::write_sidecar(
            path,
            &json!({ "fitted_rate": self.fitted_rate, "fit_points": self.fit_points,
                     "floor": self.floor, "initial_gap": self.initial_gap,
                     "c1_bound": self.c1_bound, "c2_bound": self.c2_bound,
                     "kappa_star": self.kappa_star }),
        )
    }
}

/// Fast coordinate of the Wong-Zakai manifold over `xi` at the start of `grid`.
pub fn manifold_point(
    model: &SlowFastModel,
    noise: &NoiseBundle,
    xi: &[f64],
    grid: &TimeGrid,
    source: ManifoldSource,
    opts: &LpOptions,
) -> Result<Vec<f64>> {
    let driver = colored_driver(model, noise)?;
    let closure = ManifoldClosure::new(model, &driver, source, *opts)?;
    let mut h = vec![0.0; model.n1()];
    closure.eval(aligned_offset(noise.grid(), grid)?, xi, &mut h)?;
    Ok(h)
}

fn colored_driver(
    model: &SlowFastModel,
    noise: &NoiseBundle,
) -> Result<crate::noise::StationaryDriver> {
    let burn = required_burn_in(model.a_matrix(), model.eps(), noise.mu())?;
    stationary_driver(
        noise,
        model.a_matrix(),
        model.sigma(),
        model.eps(),
        DriverKind::Colored,
        burn,
    )
}

/// Runs the white-noise system from `zeta` and the manifold-confined orbit from
/// `(h^{μ,ε}(ω, ξ), ξ)`, where `ξ` is the slow part of `zeta`, on the same sample.
pub fn tracking_gap(
    model: &SlowFastModel,
    noise: &NoiseBundle,
    zeta: (&[f64], &[f64]),
    grid: &TimeGrid,
    source: ManifoldSource,
    opts: &LpOptions,
    scheme: Scheme,
) -> Result<TrackingReport> {
    let con = model.contraction();
    if !(con.kappa_star < 1.0) {
        return Err(Error::Precondition(format!(
            "tracking needs kappa_star < 1, got {}",
            con.kappa_star
        )));
    }
    if noise.mu().is_none() {
        return Err(Error::Config(
            "tracking needs a colored noise sample".into(),
        ));
    }
    let driver = colored_driver(model, noise)?;
    let closure = ManifoldClosure::new(model, &driver, source, *opts)?;
    let offset = aligned_offset(noise.grid(), grid)?;
    let full = solve_sde(model, noise, zeta, grid, scheme)?;
    let reduced = solve_reduced(
        model,
        model.param(),
        |i, _, xi, out| closure.eval(offset + i, xi, out),
        zeta.1,
        grid,
    )?;
    let gap_series: Vec<(f64, f64)> = (0..grid.n_nodes())
        .map(|i| {
            let g = dist(full.fast(i), reduced.fast(i)) + dist(full.slow(i), reduced.slow(i));
            (grid.time(i), g)
        })
        .collect();
    let half = grid.t_start() + 0.5 * (grid.t_end() - grid.t_start());
    let tail: Vec<f64> = gap_series
        .iter()
        .filter(|p| p.0 >= half)
        .map(|p| p.1)
        .collect();
    let floor = stats::mean(&tail);
    let head: Vec<(f64, f64)> = gap_series
        .iter()
        .take_while(|p| p.1 > 3.0 * floor)
        .copied()
        .collect();
    let fitted_rate = if head.len() >= 3 {
        let t: Vec<f64> = head.iter().map(|p| p.0).collect();
        let lg: Vec<f64> = head.iter().map(|p| p.1.ln()).collect();
        Some(-stats::ols(&t, &lg)?.slope)
    } else {
        None
    };
    Ok(TrackingReport {
        initial_gap: gap_series[0].1,
        fitted_rate,
        fit_points: head.len(),
        floor,
        gap_series,
        c1_bound: con.tracking_c1,
        c2_bound: con.tracking_c2,
        kappa_star: con.kappa_star,
    })
}
