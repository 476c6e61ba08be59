//! Nelder-Mead minimisation and reduced-system parameter estimation.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::integrate::{Scheme, aligned_offset, solve_reduced, solve_sde};
use crate::manifold::{LpOptions, ManifoldClosure, ManifoldSource, history_grid};
use crate::model::SlowFastModel;
use crate::noise::{
    DriverKind, NoiseBundle, StationaryDriver, required_burn_in, stationary_driver,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NelderMeadOptions {
    pub tol_x: f64,
    pub tol_f: f64,
    pub max_iter: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            tol_x: 1e-6,
            tol_f: 1e-12,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimplexState {
    pub iteration: usize,
    pub vertices: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NelderMeadResult {
    pub argmin: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// False when the iteration cap was hit first.
    pub converged: bool,
    pub trace: Vec<SimplexState>,
}

/// Non-finite values rank as +∞ and are never accepted over a finite vertex.
fn clean(v: f64) -> f64 {
    if v.is_finite() { v } else { f64::INFINITY }
}

/// Simplex minimisation with reflection 1, expansion 2, contraction 1/2 and
/// shrink 1/2. Stops once the simplex diameter is within `tol_x` or the value
/// spread within `tol_f`.
pub fn nelder_mead<F>(
    mut f: F,
    initial: Vec<Vec<f64>>,
    opts: &NelderMeadOptions,
) -> Result<NelderMeadResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let k = initial.first().map_or(0, |v| v.len());
    if k == 0 || initial.len() != k + 1 || initial.iter().any(|v| v.len() != k) {
        return Err(Error::Config(format!(
            "a simplex in {k} dimensions needs {} vertices of that size",
            k + 1
        )));
    }
    let mut diffs = DMatrix::<f64>::zeros(k, k);
    for (j, v) in initial[1..].iter().enumerate() {
        for i in 0..k {
            diffs[(i, j)] = v[i] - initial[0][i];
        }
    }
    if diffs.determinant().abs() <= f64::EPSILON * diffs.norm().powi(k as i32) {
        return Err(Error::Config("initial simplex is degenerate".into()));
    }

    let mut evaluations = 0;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        clean(f(x))
    };
    let mut pts: Vec<(Vec<f64>, f64)> = initial
        .into_iter()
        .map(|x| {
            let v = eval(&x);
            (x, v)
        })
        .collect();
    let mut best = pts
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .expect("non-empty");
    let mut trace = Vec::new();
    let combine = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
    };
    let mut iterations = 0;
    let mut converged = false;
    loop {
        pts.sort_by(|a, b| a.1.total_cmp(&b.1));
        trace.push(SimplexState {
            iteration: iterations,
            vertices: pts.iter().map(|p| p.0.clone()).collect(),
            values: pts.iter().map(|p| p.1).collect(),
        });
        let diameter = pts[1..]
            .iter()
            .map(|p| crate::linalg::dist(&p.0, &pts[0].0))
            .fold(0.0, f64::max);
        let spread = pts[k].1 - pts[0].1;
        if diameter <= opts.tol_x || (spread.is_finite() && spread <= opts.tol_f) {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; k];
        for p in &pts[..k] {
            for (c, x) in centroid.iter_mut().zip(&p.0) {
                *c += x / k as f64;
            }
        }
        let worst = pts[k].clone();
        let xr = combine(&centroid, &worst.0, -1.0);
        let fr = eval(&xr);
        let replacement = if fr < pts[0].1 {
            let xe = combine(&centroid, &worst.0, -2.0);
            let fe = eval(&xe);
            Some(if fe < fr { (xe, fe) } else { (xr, fr) })
        } else if fr < pts[k - 1].1 {
            Some((xr, fr))
        } else if fr < worst.1 {
            let xc = combine(&centroid, &xr, 0.5);
            let fc = eval(&xc);
            (fc <= fr).then_some((xc, fc))
        } else {
            let xc = combine(&centroid, &worst.0, 0.5);
            let fc = eval(&xc);
            (fc < worst.1).then_some((xc, fc))
        };
        match replacement {
            Some(p) => pts[k] = p,
            None => {
                let x0 = pts[0].0.clone();
                for p in pts[1..].iter_mut() {
                    let x = combine(&x0, &p.0, 0.5);
                    let v = eval(&x);
                    *p = (x, v);
                }
            }
        }
        for p in &pts {
            if p.1 < best.1 {
                best = p.clone();
            }
        }
    }
    for p in &pts {
        if p.1 < best.1 {
            best = p.clone();
        }
    }
    Ok(NelderMeadResult {
        argmin: best.0,
        value: best.1,
        iterations,
        evaluations,
        converged,
        trace,
    })
}

/// Which reduced system closes the slow equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducedVariant {
    /// Manifold of the white-noise system.
    WhiteReduced,
    /// Wong-Zakai manifold driven by colored noise.
    WzReduced,
}

impl ReducedVariant {
    pub fn driver_kind(self) -> DriverKind {
        match self {
            Self::WhiteReduced => DriverKind::White,
            Self::WzReduced => DriverKind::Colored,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    /// Observation horizon `T`.
    pub t_end: f64,
    /// Observation and full-system step.
    pub dt: f64,
    pub a_true: f64,
    pub a_interval: [f64; 2],
    /// Noise samples in the objective's expectation; sample 0 is the observation's own.
    pub n_mc: usize,
    pub manifold_source: ManifoldSource,
    pub variant: ReducedVariant,
    pub mu: f64,
    pub eta0: f64,
    pub xi0: f64,
    pub seed: u64,
    /// First simplex vertex; the second is `a0 + 0.1·|Λ|`.
    pub a0: f64,
    /// Reduced-system step as a multiple of `dt`; `None` picks `ε/20` for the
    /// smooth Wong-Zakai driver and `dt` for the white one.
    pub reduced_stride: Option<usize>,
    /// Initial stretch left out of the fit while the fast variable relaxes
    /// onto the manifold; `None` picks `10ε/γ₁`. The reduced orbit starts from
    /// the observed slow value at its end.
    pub transient: Option<f64>,
    pub optimizer: NelderMeadOptions,
    pub lp: LpOptions,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            t_end: 10.0,
            dt: 1e-3,
            a_true: 0.1,
            a_interval: [0.01, 1.0],
            n_mc: 1,
            manifold_source: ManifoldSource::Expansion,
            variant: ReducedVariant::WzReduced,
            mu: 0.01,
            eta0: 0.0,
            xi0: 5.0,
            seed: 2024,
            a0: 0.5,
            reduced_stride: None,
            transient: None,
            optimizer: NelderMeadOptions::default(),
            lp: LpOptions::default(),
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.a_interval;
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!(
                "horizon must be positive, got {}",
                self.t_end
            )));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!(
                "empty parameter interval [{lo}, {hi}]"
            )));
        }
        if self.n_mc == 0 {
            return Err(Error::Config("n_mc must be at least 1".into()));
        }
        if !(self.a0 >= lo && self.a0 <= hi) {
            return Err(Error::Range(format!(
                "start value {} outside [{lo}, {hi}]",
                self.a0
            )));
        }
        if let Some(t) = self.transient
            && !(0.0..self.t_end).contains(&t)
        {
            return Err(Error::Config(format!(
                "transient {t} must lie in [0, {})",
                self.t_end
            )));
        }
        if self.reduced_stride == Some(0) {
            return Err(Error::Config("reduced stride must be positive".into()));
        }
        Ok(())
    }

    fn stride(&self, eps: f64) -> usize {
        self.reduced_stride.unwrap_or(match self.variant {
            ReducedVariant::WhiteReduced => 1,
            ReducedVariant::WzReduced => ((eps / 20.0) / self.dt + 1e-9).floor().max(1.0) as usize,
        })
    }
}

/// Slow observations on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub grid: TimeGrid,
    pub n2: usize,
    pub values: Vec<f64>,
}

impl Observation {
    pub fn slow(&self, i: usize) -> &[f64] {
        &self.values[i * self.n2..(i + 1) * self.n2]
    }

    /// Reads `t,v_1..v_n2` on a uniform grid.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let n2 = r.headers()?.len().saturating_sub(1);
        if n2 == 0 {
            return Err(Error::Config(format!(
                "{} has no slow columns",
                path.display()
            )));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            if row.len() != n2 + 1 {
                return Err(Error::Config(format!("{}: ragged row", path.display())));
            }
            times.push(row[0]);
            values.extend_from_slice(&row[1..]);
        }
        if times.len() < 2 {
            return Err(Error::Config(format!(
                "{} needs at least two rows",
                path.display()
            )));
        }
        let dt = times[1] - times[0];
        let grid = TimeGrid::new(times[0], times[times.len() - 1], dt)?;
        if grid.n_nodes() != times.len()
            || times
                .iter()
                .enumerate()
                .any(|(i, t)| (t - grid.time(i)).abs() > 1e-9 * dt.max(1.0))
        {
            return Err(Error::Config(format!(
                "{} is not on a uniform grid",
                path.display()
            )));
        }
        Ok(Self { grid, n2, values })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header = crate::io::indexed_header("t", "v", self.n2);
        let rows = (0..self.grid.n_nodes()).map(|i| {
            let mut r = vec![self.grid.time(i)];
            r.extend_from_slice(self.slow(i));
            r
        });
        crate::io::write_rows(path, &header, rows)
    }
}

/// Noise grid holding the history the manifold needs before 0 and reaching `T`.
pub fn estimation_noise_grid(model: &SlowFastModel, cfg: &EstimationConfig) -> Result<TimeGrid> {
    history_grid(model, cfg.dt, Some(cfg.mu), &cfg.lp, cfg.t_end)
}

/// Noise sample `k` of the objective: seed `cfg.seed + k`.
pub fn estimation_noise(
    model: &SlowFastModel,
    cfg: &EstimationConfig,
    k: usize,
) -> Result<NoiseBundle> {
    let grid = estimation_noise_grid(model, cfg)?;
    NoiseBundle::sample(grid, cfg.seed.wrapping_add(k as u64), Some(cfg.mu))
}

/// Slow part of the white-noise system at `a_true` from `(η₀, ξ₀)` on `[0, T]`.
pub fn synthetic_observation(
    model: &SlowFastModel,
    cfg: &EstimationConfig,
    noise: &NoiseBundle,
) -> Result<Observation> {
    let truth = model.clone().with_param(cfg.a_true)?;
    let grid = TimeGrid::new(0.0, cfg.t_end, cfg.dt)?;
    let tr = solve_sde(
        &truth,
        noise,
        (&[cfg.eta0], &[cfg.xi0]),
        &grid,
        Scheme::default(),
    )?;
    Ok(Observation {
        grid,
        n2: truth.n2(),
        values: tr.slow_values().to_vec(),
    })
}

/// `F(a) = mean over samples of ∫_{t₀}^T ‖ṽ_a − v_obs‖² dt` with `ṽ_a` the
/// reduced solution from `v_obs(t₀)`; precomputes the drivers once.
pub struct Objective {
    model: SlowFastModel,
    obs: Observation,
    drivers: Vec<(StationaryDriver, usize)>,
    stride: usize,
    /// Observation node of `t₀`, a multiple of `stride`.
    skip: usize,
    source: ManifoldSource,
    lp: LpOptions,
    interval: [f64; 2],
}

impl Objective {
    pub fn new(
        model: &SlowFastModel,
        cfg: &EstimationConfig,
        obs: &Observation,
        noises: &[NoiseBundle],
    ) -> Result<Self> {
        cfg.validate()?;
        if noises.is_empty() {
            return Err(Error::Config(
                "objective needs at least one noise sample".into(),
            ));
        }
        if obs.n2 != model.n2() {
            return Err(Error::Config(
                "observation dimension differs from the model".into(),
            ));
        }
        let stride = cfg.stride(model.eps());
        if !obs.grid.n_steps().is_multiple_of(stride) {
            return Err(Error::Config(format!(
                "observation of {} steps is not divisible by the reduced stride {stride}",
                obs.grid.n_steps()
            )));
        }
        let t_skip = cfg
            .transient
            .unwrap_or(10.0 * model.eps() / model.constants().gamma1);
        let skip = (t_skip / obs.grid.dt() / stride as f64 - 1e-9)
            .ceil()
            .max(0.0) as usize
            * stride;
        if skip + 2 * stride > obs.grid.n_steps() {
            return Err(Error::Config(format!(
                "transient {t_skip} leaves too little of the observation to fit"
            )));
        }
        let kind = cfg.variant.driver_kind();
        let mut drivers = Vec::with_capacity(noises.len());
        for noise in noises {
            let mu = (kind == DriverKind::Colored).then(|| noise.mu()).flatten();
            let burn = required_burn_in(model.a_matrix(), model.eps(), mu)?;
            let d = stationary_driver(
                noise,
                model.a_matrix(),
                model.sigma(),
                model.eps(),
                kind,
                burn,
            )?;
            let offset = aligned_offset(noise.grid(), &obs.grid)?;
            drivers.push((d, offset));
        }
        Ok(Self {
            model: model.clone(),
            obs: obs.clone(),
            drivers,
            stride,
            skip,
            source: cfg.manifold_source,
            lp: cfg.lp,
            interval: cfg.a_interval,
        })
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Objective value; `+∞` outside the interval or when a reduced run fails.
    pub fn value(&self, a: f64) -> f64 {
        if !(a >= self.interval[0] && a <= self.interval[1]) {
            return f64::INFINITY;
        }
        self.try_value(a).unwrap_or(f64::INFINITY)
    }

    pub fn try_value(&self, a: f64) -> Result<f64> {
        let model = self.model.clone().with_param(a)?;
        let n = self.obs.grid.n_steps();
        let grid = self.obs.grid.window(self.skip, n)?.coarsened(self.stride)?;
        let skip = self.skip;
        let dt = grid.dt();
        let mut total = 0.0;
        for (driver, offset) in &self.drivers {
            let closure = ManifoldClosure::new(&model, driver, self.source, self.lp)?;
            let stride = self.stride;
            let tr = solve_reduced(
                &model,
                a,
                |i, _, xi, out| closure.eval(offset + skip + i * stride, xi, out),
                self.obs.slow(skip),
                &grid,
            )?;
            let sq: Vec<f64> = (0..grid.n_nodes())
                .map(|i| {
                    let d = crate::linalg::dist(tr.slow(i), self.obs.slow(skip + i * stride));
                    d * d
                })
                .collect();
            let n = sq.len() - 1;
            total += dt * (sq[1..n].iter().sum::<f64>() + 0.5 * (sq[0] + sq[n]));
        }
        Ok(total / self.drivers.len() as f64)
    }
}

/// `F(a')` for one parameter value.
#[allow(non_snake_case)]
pub fn objective_F(
    a_prime: f64,
    obs: &Observation,
    cfg: &EstimationConfig,
    model: &SlowFastModel,
    noises: &[NoiseBundle],
) -> Result<f64> {
    let [lo, hi] = cfg.a_interval;
    if !(a_prime >= lo && a_prime <= hi) {
        return Err(Error::Range(format!(
            "parameter {a_prime} outside [{lo}, {hi}]"
        )));
    }
    Objective::new(model, cfg, obs, noises)?.try_value(a_prime)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationResult {
    pub variant: ReducedVariant,
    pub manifold_source: ManifoldSource,
    pub a_hat: f64,
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Timing varies run to run, so it stays out of serialized output.
    #[serde(skip)]
    pub wall_seconds: f64,
    pub trace: Vec<SimplexState>,
}

/// Minimises `F` over the parameter interval from the 2-point simplex
/// `{a0, a0 + 0.1·|Λ|}`. The timer covers driver setup and optimisation.
pub fn estimate_from_observation(
    model: &SlowFastModel,
    cfg: &EstimationConfig,
    obs: &Observation,
    noises: &[NoiseBundle],
) -> Result<EstimationResult> {
    let start = Instant::now();
    let objective = Objective::new(model, cfg, obs, noises)?;
    let [lo, hi] = cfg.a_interval;
    let simplex = vec![vec![cfg.a0], vec![cfg.a0 + 0.1 * (hi - lo)]];
    let nm = nelder_mead(|x| objective.value(x[0]), simplex, &cfg.optimizer)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    if !nm.value.is_finite() {
        return Err(Error::Fit("objective was infinite at every vertex".into()));
    }
    Ok(EstimationResult {
        variant: cfg.variant,
        manifold_source: cfg.manifold_source,
        a_hat: nm.argmin[0],
        objective: nm.value,
        iterations: nm.iterations,
        evaluations: nm.evaluations,
        converged: nm.converged,
        wall_seconds,
        trace: nm.trace,
    })
}

/// Synthetic run: observation from sample 0 at `a_true`, then estimation.
pub fn estimate_parameter(
    cfg: &EstimationConfig,
    model: &SlowFastModel,
) -> Result<EstimationResult> {
    cfg.validate()?;
    let noises = (0..cfg.n_mc)
        .map(|k| estimation_noise(model, cfg, k))
        .collect::<Result<Vec<_>>>()?;
    let obs = synthetic_observation(model, cfg, &noises[0])?;
    estimate_from_observation(model, cfg, &obs, &noises)
}
