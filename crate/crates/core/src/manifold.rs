//! Random slow manifolds: Lyapunov-Perron fixed points, the closed-form
//! expansion for the example system, and the studies built on them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::integrate::{Scheme, solve_rde, solve_sde};
use crate::io;
use crate::linalg::{Dense, dist, norm, phi_functions};
use crate::model::{ExampleNonlinearity, SlowFastModel};
use crate::noise::{
    DriverKind, NoiseBundle, StationaryDriver, required_burn_in, sample_brownian, stationary_driver,
};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LpOptions {
    /// Length of the backward window; `None` picks `(ε/ρ)·ln(1/tol) + 5ε/γ₁`.
    pub t_cut: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            t_cut: None,
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

impl LpOptions {
    pub fn resolved_t_cut(&self, model: &SlowFastModel) -> f64 {
        let c = model.constants();
        let eps = model.eps();
        self.t_cut
            .unwrap_or_else(|| eps / c.rho * (1.0 / self.tol).ln() + 5.0 * eps / c.gamma1)
    }
}

/// Where manifold values come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldSource {
    #[default]
    Expansion,
    FixedPoint,
}

/// The fixed point `(X, Y)` on `[−T_cut, 0]` relative to its base time.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardOrbit {
    pub grid: TimeGrid,
    pub n1: usize,
    pub n2: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl BackwardOrbit {
    pub fn x(&self, k: usize) -> &[f64] {
        &self.x[k * self.n1..(k + 1) * self.n1]
    }

    pub fn y(&self, k: usize) -> &[f64] {
        &self.y[k * self.n2..(k + 1) * self.n2]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut header = io::indexed_header("t", "x", self.n1);
        header.extend(io::indexed_header("", "y", self.n2).into_iter().skip(1));
        let rows = (0..self.grid.n_nodes()).map(|k| {
            let mut r = vec![self.grid.time(k)];
            r.extend_from_slice(self.x(k));
            r.extend_from_slice(self.y(k));
            r
        });
        io::write_rows(path, &header, rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    /// `X(0)`: the manifold offset from the driver.
    pub offset: Vec<f64>,
    /// `h = X(0) + driver(0)`.
    pub h: Vec<f64>,
    pub orbit: BackwardOrbit,
    pub iterations: usize,
    /// Successive ratios of weighted-norm changes.
    pub ratios: Vec<f64>,
    pub residual: f64,
}

impl LpSolution {
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().copied().fold(0.0, f64::max)
    }
}

/// Picard iteration for the backward orbit through `ξ`, reusable across base
/// times and slow values for one model and driver.
///
/// `X(t) = ∫_{−T}^t e^{A(t−s)/ε} f(X + x̂, Y)/ε ds`,
/// `Y(t) = e^{Bt}ξ − ∫_t^0 e^{B(t−s)} g(X + x̂, Y) ds`; both integrands are
/// interpolated linearly per step and integrated against the exact kernels.
pub struct LpSolver<'a> {
    model: &'a SlowFastModel,
    driver: &'a StationaryDriver,
    opts: LpOptions,
    n_nodes: usize,
    e: Dense,
    wl: Dense,
    wr: Dense,
    eb: Dense,
    ql: Dense,
    qr: Dense,
    weights: Vec<f64>,
    kappa1: f64,
}

impl<'a> LpSolver<'a> {
    pub fn new(
        model: &'a SlowFastModel,
        driver: &'a StationaryDriver,
        opts: LpOptions,
    ) -> Result<Self> {
        if driver.dim() != model.n1() {
            return Err(Error::Config(format!(
                "driver has dimension {}, model fast block {}",
                driver.dim(),
                model.n1()
            )));
        }
        let eps = model.eps();
        if ((driver.eps() - eps) / eps).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "driver built for eps = {}, model has eps = {eps}",
                driver.eps()
            )));
        }
        if !(opts.tol > 0.0 && opts.tol.is_finite()) || opts.max_iter == 0 {
            return Err(Error::Config(
                "fixed-point tolerance and iteration cap must be positive".into(),
            ));
        }
        let kappa1 = model.contraction().kappa;
        if !(kappa1 < 1.0) {
            return Err(Error::Precondition(format!(
                "contraction constant {kappa1} is not below 1"
            )));
        }
        let t_cut = opts.resolved_t_cut(model);
        if !(t_cut > 0.0 && t_cut.is_finite()) {
            return Err(Error::Config(format!(
                "backward window must be positive, got {t_cut}"
            )));
        }
        let dt = driver.grid().dt();
        let n_steps = (t_cut / dt - 1e-9).ceil().max(1.0) as usize;
        let (e, p1, p2) = phi_functions(&(model.a_matrix() * (dt / eps)));
        let (eb, q1, q2) = phi_functions(&(model.b_matrix() * (-dt)));
        let rho = model.constants().rho;
        let weights = (0..=n_steps)
            .map(|k| (-rho * (n_steps - k) as f64 * dt / eps).exp())
            .collect();
        Ok(Self {
            model,
            driver,
            opts,
            n_nodes: n_steps + 1,
            e: Dense::from_matrix(&e),
            wl: Dense::from_matrix(&(&p1 - &p2)).scaled(dt / eps),
            wr: Dense::from_matrix(&p2).scaled(dt / eps),
            eb: Dense::from_matrix(&eb),
            ql: Dense::from_matrix(&q2).scaled(-dt),
            qr: Dense::from_matrix(&(&q1 - &q2)).scaled(-dt),
            weights,
            kappa1,
        })
    }

    pub fn kappa1(&self) -> f64 {
        self.kappa1
    }

    pub fn t_cut(&self) -> f64 {
        (self.n_nodes - 1) as f64 * self.driver.grid().dt()
    }

    pub fn options(&self) -> &LpOptions {
        &self.opts
    }

    pub fn driver(&self) -> &StationaryDriver {
        self.driver
    }

    pub fn model(&self) -> &SlowFastModel {
        self.model
    }

    /// `ceil(ln tol / ln κ₁) + 2`.
    pub fn iteration_budget(&self) -> usize {
        self.model.contraction().iteration_budget(self.opts.tol)
    }

    /// Solves with the driver node at time 0 as base.
    pub fn solve(&self, xi: &[f64]) -> Result<LpSolution> {
        self.solve_at(self.driver.grid().require_zero_node()?, xi)
    }

    /// Solves with base at driver node `node`, i.e. for the shifted sample `θ_t ω`.
    pub fn solve_at(&self, node: usize, xi: &[f64]) -> Result<LpSolution> {
        let (n1, n2, n) = (self.model.n1(), self.model.n2(), self.n_nodes);
        if xi.len() != n2 || xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "slow value {xi:?} must be finite with {n2} entries"
            )));
        }
        let grid = self.driver.grid();
        if node + 1 < n || node > grid.n_steps() {
            return Err(Error::Config(format!(
                "driver grid holds no backward window of {} before t = {}",
                self.t_cut(),
                grid.time(node.min(grid.n_steps()))
            )));
        }
        let first = node + 1 - n;
        self.driver.check_covers(grid.time(first))?;

        let mut x = vec![0.0; n * n1];
        let mut y = vec![0.0; n * n2];
        y[(n - 1) * n2..].copy_from_slice(xi);
        for k in (0..n - 1).rev() {
            let (head, tail) = y.split_at_mut((k + 1) * n2);
            self.eb.apply(&tail[..n2], &mut head[k * n2..]);
        }
        let mut xn = vec![0.0; n * n1];
        let mut yn = vec![0.0; n * n2];
        let mut fv = vec![0.0; n * n1];
        let mut gv = vec![0.0; n * n2];
        let mut u = vec![0.0; n1];
        let mut ratios = Vec::new();
        let mut last = f64::NAN;
        for it in 1..=self.opts.max_iter {
            for k in 0..n {
                let drv = self.driver.value(first + k);
                for i in 0..n1 {
                    u[i] = x[k * n1 + i] + drv[i];
                }
                let yk = &y[k * n2..(k + 1) * n2];
                self.model.fast(&u, yk, &mut fv[k * n1..(k + 1) * n1]);
                self.model.slow(&u, yk, &mut gv[k * n2..(k + 1) * n2]);
            }
            xn[..n1].fill(0.0);
            for k in 0..n - 1 {
                let (head, tail) = xn.split_at_mut((k + 1) * n1);
                let next = &mut tail[..n1];
                self.e.apply(&head[k * n1..], next);
                self.wl.apply_add(&fv[k * n1..(k + 1) * n1], next);
                self.wr.apply_add(&fv[(k + 1) * n1..(k + 2) * n1], next);
            }
            yn[(n - 1) * n2..].copy_from_slice(xi);
            for k in (0..n - 1).rev() {
                let (head, tail) = yn.split_at_mut((k + 1) * n2);
                let cur = &mut head[k * n2..];
                self.eb.apply(&tail[..n2], cur);
                self.ql.apply_add(&gv[k * n2..(k + 1) * n2], cur);
                self.qr.apply_add(&gv[(k + 1) * n2..(k + 2) * n2], cur);
            }
            let (mut cx, mut cy) = (0.0f64, 0.0f64);
            for k in 0..n {
                let w = self.weights[k];
                cx = cx.max(w * dist(&xn[k * n1..(k + 1) * n1], &x[k * n1..(k + 1) * n1]));
                cy = cy.max(w * dist(&yn[k * n2..(k + 1) * n2], &y[k * n2..(k + 1) * n2]));
            }
            let change = cx + cy;
            if !change.is_finite() {
                return Err(Error::Divergence {
                    time: grid.time(node),
                    detail: format!("fixed-point iterate became non-finite at iteration {it}"),
                });
            }
            if last > 0.0 {
                ratios.push(change / last);
            }
            last = change;
            std::mem::swap(&mut x, &mut xn);
            std::mem::swap(&mut y, &mut yn);
            if change <= self.opts.tol {
                let offset = x[(n - 1) * n1..].to_vec();
                let drv = self.driver.value(node);
                let h = offset.iter().zip(drv).map(|(a, b)| a + b).collect();
                return Ok(LpSolution {
                    offset,
                    h,
                    orbit: BackwardOrbit {
                        grid: TimeGrid::anchored(n - 1, n - 1, grid.dt())?,
                        n1,
                        n2,
                        x,
                        y,
                    },
                    iterations: it,
                    ratios,
                    residual: change,
                });
            }
        }
        Err(Error::NonConvergence {
            iterations: self.opts.max_iter,
            last_change: last,
            last_ratio: ratios.last().copied().unwrap_or(f64::NAN),
        })
    }
}

/// Fixed point through `xi` with base at time 0 of the driver grid.
pub fn lp_fixed_point(
    model: &SlowFastModel,
    driver: &StationaryDriver,
    xi: &[f64],
    opts: &LpOptions,
) -> Result<LpSolution> {
    LpSolver::new(model, driver, *opts)?.solve(xi)
}

/// Driver-dependent pieces of the example's two-term expansion
///
/// `h(ξ) = ξ²/c + ε(2aξ⁴/c² − 2bξ²/c) + (2aξ²/c)·J + x̂`,
///
/// with `c = 600`, `b` the slow rate and `J(t) = ∫_{−∞}^t e^{(s−t)/ε} x̂(s) ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionSeries {
    eps: f64,
    b: f64,
    grid: TimeGrid,
    driver: Vec<f64>,
    memory: Vec<f64>,
    ready: usize,
}

impl ExpansionSeries {
    pub fn new(model: &SlowFastModel, driver: &StationaryDriver) -> Result<Self> {
        example_of(model)?;
        let eps = model.eps();
        let grid = *driver.grid();
        let dt = grid.dt();
        let start = (((driver.valid_from() - grid.t_start()) / dt) - 1e-9)
            .ceil()
            .max(0.0) as usize;
        let ready_time = grid.time(start) + 20.0 * eps;
        let ready = (((ready_time - grid.t_start()) / dt) - 1e-9).ceil() as usize;
        if ready > grid.n_steps() {
            return Err(Error::Config(format!(
                "driver grid too short for the expansion memory window of {}",
                20.0 * eps
            )));
        }
        let values = driver.values().to_vec();
        let z = -dt / eps;
        let decay = z.exp();
        let (p1, p2) = if z.abs() > 1e-6 {
            ((decay - 1.0) / z, (decay - 1.0 - z) / (z * z))
        } else {
            (1.0 + z / 2.0, 0.5 + z / 6.0)
        };
        let mut memory = vec![f64::NAN; grid.n_nodes()];
        memory[start] = 0.0;
        for k in start..grid.n_steps() {
            memory[k + 1] = decay * memory[k] + dt * ((p1 - p2) * values[k] + p2 * values[k + 1]);
        }
        Ok(Self {
            eps,
            b: model.b_matrix()[(0, 0)],
            grid,
            driver: values,
            memory,
            ready,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// First node at which the memory integral has run for `20ε`.
    pub fn ready_node(&self) -> usize {
        self.ready
    }

    /// `h(θ_{t_node} ω, ξ)` for slow parameter `a`.
    pub fn h(&self, node: usize, xi: f64, a: f64) -> Result<f64> {
        if node < self.ready || node > self.grid.n_steps() {
            return Err(Error::Config(format!(
                "expansion unavailable at t = {}; memory integral needs history from t = {}",
                self.grid.time(node.min(self.grid.n_steps())),
                self.grid.time(self.ready)
            )));
        }
        let c = ExampleNonlinearity::DENOM;
        let x2 = xi * xi;
        Ok(x2 / c
            + self.eps * (2.0 * a * x2 * x2 / (c * c) - 2.0 * self.b * x2 / c)
            + 2.0 * a * x2 / c * self.memory[node]
            + self.driver[node])
    }
}

fn example_of(model: &SlowFastModel) -> Result<&ExampleNonlinearity> {
    let ex = model.example().ok_or_else(|| {
        Error::Config("the expansion exists only for the scalar example system".into())
    })?;
    let a = model.a_matrix()[(0, 0)];
    if a != -1.0 {
        return Err(Error::Config(format!(
            "the expansion assumes A = -1, got {a}"
        )));
    }
    Ok(ex)
}

/// Expansion value at time 0 of the noise grid, with the driver of the given kind.
pub fn expansion_h(
    model: &SlowFastModel,
    noise: &NoiseBundle,
    xi: f64,
    kind: DriverKind,
) -> Result<f64> {
    let mu = if kind == DriverKind::Colored {
        noise.mu()
    } else {
        None
    };
    let burn = required_burn_in(model.a_matrix(), model.eps(), mu)?;
    let driver = stationary_driver(
        noise,
        model.a_matrix(),
        model.sigma(),
        model.eps(),
        kind,
        burn,
    )?;
    let series = ExpansionSeries::new(model, &driver)?;
    series.h(noise.grid().require_zero_node()?, xi, model.param())
}

/// Manifold values `h(θ_t ω, ξ)` from either source, for closing reduced systems.
#[allow(clippy::large_enum_variant)] // built once per run
pub enum ManifoldClosure<'a> {
    Expansion { series: ExpansionSeries, param: f64 },
    FixedPoint(LpSolver<'a>),
}

impl<'a> ManifoldClosure<'a> {
    pub fn new(
        model: &'a SlowFastModel,
        driver: &'a StationaryDriver,
        source: ManifoldSource,
        opts: LpOptions,
    ) -> Result<Self> {
        Ok(match source {
            ManifoldSource::Expansion => Self::Expansion {
                series: ExpansionSeries::new(model, driver)?,
                param: model.param(),
            },
            ManifoldSource::FixedPoint => Self::FixedPoint(LpSolver::new(model, driver, opts)?),
        })
    }

    pub fn eval(&self, node: usize, xi: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            Self::Expansion { series, param } => {
                out[0] = series.h(node, xi[0], *param)?;
                Ok(())
            }
            Self::FixedPoint(solver) => {
                out.copy_from_slice(&solver.solve_at(node, xi)?.h);
                Ok(())
            }
        }
    }
}

/// One manifold graph `ξ ↦ h(ω, ξ)` over a list of slow values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifoldSample {
    pub eps: f64,
    /// `None` for the white-noise manifold.
    pub mu: Option<f64>,
    pub omega_seed: Option<u64>,
    pub base_time: f64,
    pub xi_grid: Vec<Vec<f64>>,
    pub h_values: Vec<Vec<f64>>,
    /// Largest divided difference between neighbouring slow values.
    pub lipschitz_est: f64,
    /// The closed-form graph Lipschitz bound.
    pub lipschitz_bound: f64,
    pub iterations: usize,
    pub residual: f64,
    pub max_ratio: f64,
}

impl ManifoldSample {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let n2 = self.xi_grid.first().map_or(1, |v| v.len());
        let n1 = self.h_values.first().map_or(1, |v| v.len());
        let mut header = io::indexed_header("", "xi", n2).split_off(1);
        header.extend(io::indexed_header("", "h", n1).into_iter().skip(1));
        let rows = self.xi_grid.iter().zip(&self.h_values).map(|(x, h)| {
            let mut r = x.clone();
            r.extend_from_slice(h);
            r
        });
        io::write_rows(path, &header, rows)?;
        io::write_sidecar(
            path,
            &json!({ "eps": self.eps, "mu": self.mu, "seed": self.omega_seed,
                     "base_time": self.base_time, "lipschitz_est": self.lipschitz_est,
                     "lipschitz_bound": self.lipschitz_bound, "iterations": self.iterations,
                     "residual": self.residual, "max_ratio": self.max_ratio }),
        )
    }
}

fn check_xi_grid(model: &SlowFastModel, xis: &[Vec<f64>]) -> Result<()> {
    if xis.is_empty() {
        return Err(Error::Config("empty slow-value grid".into()));
    }
    for xi in xis {
        if xi.len() != model.n2() || xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "slow value {xi:?} must be finite with {} entries",
                model.n2()
            )));
        }
        if let Some(ex) = model.example()
            && norm(xi) > ex.radius()
        {
            return Err(Error::Range(format!(
                "slow value {xi:?} outside the cut-off ball of radius {}",
                ex.radius()
            )));
        }
    }
    Ok(())
}

/// Graph over `xis` at driver node `node`.
pub fn manifold_graph_at(
    solver: &LpSolver<'_>,
    node: usize,
    xis: &[Vec<f64>],
) -> Result<ManifoldSample> {
    let model = solver.model();
    check_xi_grid(model, xis)?;
    let mut h_values = Vec::with_capacity(xis.len());
    let (mut iterations, mut residual, mut max_ratio) = (0, 0.0f64, 0.0f64);
    for xi in xis {
        let sol = solver
            .solve_at(node, xi)
            .map_err(|e| e.context(format!("xi = {xi:?}")))?;
        iterations = iterations.max(sol.iterations);
        residual = residual.max(sol.residual);
        max_ratio = max_ratio.max(sol.max_ratio());
        h_values.push(sol.h);
    }
    let lipschitz_est = xis
        .windows(2)
        .zip(h_values.windows(2))
        .filter_map(|(x, h)| {
            let dx = dist(&x[0], &x[1]);
            (dx > 0.0).then(|| dist(&h[0], &h[1]) / dx)
        })
        .fold(0.0, f64::max);
    let driver = solver.driver();
    Ok(ManifoldSample {
        eps: model.eps(),
        mu: driver.mu(),
        omega_seed: driver.seed(),
        base_time: driver.grid().time(node),
        xi_grid: xis.to_vec(),
        h_values,
        lipschitz_est,
        lipschitz_bound: model.contraction().graph_lipschitz,
        iterations,
        residual,
        max_ratio,
    })
}

pub fn manifold_graph(
    model: &SlowFastModel,
    driver: &StationaryDriver,
    xis: &[Vec<f64>],
    opts: &LpOptions,
) -> Result<ManifoldSample> {
    let solver = LpSolver::new(model, driver, *opts)?;
    manifold_graph_at(&solver, driver.grid().require_zero_node()?, xis)
}

/// Grid ending at 0 that holds a backward window plus the driver burn-in.
pub fn history_grid(
    model: &SlowFastModel,
    dt: f64,
    mu: Option<f64>,
    opts: &LpOptions,
    extra: f64,
) -> Result<TimeGrid> {
    let back = opts.resolved_t_cut(model) + required_burn_in(model.a_matrix(), model.eps(), mu)?;
    let n_back = (back / dt - 1e-9).ceil() as usize + 1;
    let n_fwd = if extra > 0.0 {
        (extra / dt - 1e-9).ceil() as usize
    } else {
        0
    };
    TimeGrid::anchored(n_back, n_back + n_fwd, dt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapStudy {
    pub mu_list: Vec<f64>,
    pub xi_list: Vec<Vec<f64>>,
    pub seeds: Vec<u64>,
    pub dt: f64,
    #[serde(default)]
    pub source: ManifoldSource,
    #[serde(default)]
    pub lp: LpOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub mu: f64,
    pub mean_gap: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapTable {
    pub eps: f64,
    pub rows: Vec<GapRow>,
    /// Fitted exponent of the mean gap in `μ`.
    pub slope: f64,
}

impl GapTable {
    pub fn strictly_decreasing_in_mu(&self) -> bool {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| b.mu.total_cmp(&a.mu));
        rows.windows(2).all(|w| w[1].mean_gap < w[0].mean_gap)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header = ["mu", "mean_gap", "stderr"].map(String::from);
        io::write_rows(
            path,
            &header,
            self.rows.iter().map(|r| vec![r.mu, r.mean_gap, r.stderr]),
        )?;
        io::write_sidecar(path, &json!({ "eps": self.eps, "slope": self.slope }))
    }
}

fn graph_values(
    model: &SlowFastModel,
    driver: &StationaryDriver,
    source: ManifoldSource,
    xis: &[Vec<f64>],
    opts: &LpOptions,
) -> Result<Vec<Vec<f64>>> {
    match source {
        ManifoldSource::FixedPoint => Ok(manifold_graph(model, driver, xis, opts)?.h_values),
        ManifoldSource::Expansion => {
            check_xi_grid(model, xis)?;
            let series = ExpansionSeries::new(model, driver)?;
            let node = driver.grid().require_zero_node()?;
            xis.iter()
                .map(|xi| Ok(vec![series.h(node, xi[0], model.param())?]))
                .collect()
        }
    }
}

/// Mean `‖h^{μ,ε} − h^ε‖` over seeds and slow values for each `μ`, on shared samples.
pub fn wz_manifold_gap(model: &SlowFastModel, study: &GapStudy) -> Result<GapTable> {
    if study.mu_list.len() < 3 {
        return Err(Error::Fit(format!(
            "a rate fit needs at least 3 correlation times, got {}",
            study.mu_list.len()
        )));
    }
    if study.seeds.is_empty() {
        return Err(Error::Config("gap study needs at least one seed".into()));
    }
    let mu_max = study.mu_list.iter().copied().fold(0.0, f64::max);
    let grid = history_grid(model, study.dt, Some(mu_max), &study.lp, 0.0)?;
    let burn = required_burn_in(model.a_matrix(), model.eps(), Some(mu_max))?;
    let (a, sigma, eps) = (model.a_matrix(), model.sigma(), model.eps());
    let mut per_mu = vec![Vec::with_capacity(study.seeds.len()); study.mu_list.len()];
    for &seed in &study.seeds {
        let white = NoiseBundle::white(sample_brownian(grid, seed)?);
        let dw = stationary_driver(&white, a, sigma, eps, DriverKind::White, burn)?;
        let hw = graph_values(model, &dw, study.source, &study.xi_list, &study.lp)?;
        for (j, &mu) in study.mu_list.iter().enumerate() {
            let colored = white.with_mu(mu)?;
            let dc = stationary_driver(&colored, a, sigma, eps, DriverKind::Colored, burn)?;
            let hc = graph_values(model, &dc, study.source, &study.xi_list, &study.lp)?;
            let gap = hw.iter().zip(&hc).map(|(x, y)| dist(x, y)).sum::<f64>() / hw.len() as f64;
            per_mu[j].push(gap);
        }
    }
    let rows: Vec<GapRow> = study
        .mu_list
        .iter()
        .zip(&per_mu)
        .map(|(&mu, gaps)| GapRow {
            mu,
            mean_gap: stats::mean(gaps),
            stderr: stats::stderr(gaps),
        })
        .collect();
    let mus: Vec<f64> = rows.iter().map(|r| r.mu).collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r.mean_gap).collect();
    Ok(GapTable {
        eps,
        slope: stats::log_log_slope(&mus, &gaps)?,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub t_check: f64,
    pub distances: Vec<f64>,
    pub max_distance: f64,
    /// Largest `‖h‖` on the starting graph, floored at 1.
    pub scale: f64,
}

impl InvarianceReport {
    pub fn relative(&self) -> f64 {
        self.max_distance / self.scale
    }
}

/// Flows `(h(ω, ξ), ξ)` for `t_check` and measures the distance of the fast
/// coordinate to `h(θ_{t_check} ω, v(t_check))`. The noise grid must hold the
/// backward window before 0 and reach `t_check`.
pub fn invariance_check(
    model: &SlowFastModel,
    noise: &NoiseBundle,
    kind: DriverKind,
    xis: &[Vec<f64>],
    t_check: f64,
    opts: &LpOptions,
    scheme: Scheme,
) -> Result<InvarianceReport> {
    let mu = if kind == DriverKind::Colored {
        noise.mu()
    } else {
        None
    };
    let burn = required_burn_in(model.a_matrix(), model.eps(), mu)?;
    let driver = stationary_driver(
        noise,
        model.a_matrix(),
        model.sigma(),
        model.eps(),
        kind,
        burn,
    )?;
    let solver = LpSolver::new(model, &driver, *opts)?;
    let grid = noise.grid();
    let start = grid.require_zero_node()?;
    let end = grid.node(t_check)?;
    let mut distances = Vec::with_capacity(xis.len());
    let mut scale = 1.0f64;
    check_xi_grid(model, xis)?;
    for xi in xis {
        let h0 = solver.solve_at(start, xi)?.h;
        scale = scale.max(norm(&h0));
        if end == start {
            distances.push(0.0);
            continue;
        }
        let flow_grid = grid.window(start, end)?;
        let tr = match kind {
            DriverKind::White => solve_sde(model, noise, (&h0, xi), &flow_grid, scheme)?,
            DriverKind::Colored => solve_rde(model, noise, (&h0, xi), &flow_grid, scheme)?,
        };
        let last = flow_grid.n_steps();
        let h1 = solver.solve_at(end, tr.slow(last))?.h;
        distances.push(dist(tr.fast(last), &h1));
    }
    Ok(InvarianceReport {
        t_check,
        max_distance: distances.iter().copied().fold(0.0, f64::max),
        distances,
        scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonuniformityRow {
    pub eps: f64,
    pub mean_abs_n: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonuniformityTable {
    pub mu: f64,
    pub rows: Vec<NonuniformityRow>,
    /// Exponent of `E|n|` in `ε`; absent when a mean vanishes.
    pub slope: Option<f64>,
}

impl NonuniformityTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header = ["eps", "mean_abs_n", "stderr"].map(String::from);
        io::write_rows(
            path,
            &header,
            self.rows
                .iter()
                .map(|r| vec![r.eps, r.mean_abs_n, r.stderr]),
        )?;
        io::write_sidecar(path, &json!({ "mu": self.mu, "slope": self.slope }))
    }
}

/// The two stationary Gaussian terms at time 0 for `A = −1`,
/// `n₁ = ε^{−1/2}∫ e^{r/μ} dB_r` and
/// `n₂ = ε^{−3/2}(1/ε − 1/μ)^{−1}∫ (e^{r/μ} − e^{r/ε}) dB_r`,
/// as left-point sums over `[−20 max(ε, μ), 0]`, scaled by `sigma`.
pub fn nonuniformity_terms(eps: f64, mu: f64, seed: u64, sigma: f64) -> Result<(f64, f64)> {
    if !(eps > 0.0 && mu > 0.0 && eps.is_finite() && mu.is_finite()) {
        return Err(Error::Config(format!(
            "eps and mu must be positive, got {eps} and {mu}"
        )));
    }
    let dt = eps.min(mu) / 20.0;
    let n = ((20.0 * eps.max(mu)) / dt - 1e-3).ceil() as usize;
    let b = sample_brownian(TimeGrid::anchored(n, n, dt)?, seed)?;
    let g = b.grid();
    let same = (mu - eps).abs() <= 1e-9 * eps.max(mu);
    let scale2 = eps.powf(-1.5);
    let (mut n1, mut n2) = (0.0, 0.0);
    for (i, db) in b.increments().iter().enumerate() {
        let r = g.time(i);
        let em = (r / mu).exp();
        n1 += em * db;
        let kernel = if same {
            -r * (r / eps).exp()
        } else {
            (em - (r / eps).exp()) / (1.0 / eps - 1.0 / mu)
        };
        n2 += kernel * db;
    }
    Ok((sigma * n1 / eps.sqrt(), sigma * scale2 * n2))
}

/// Stationary variance of `n₂` for `σ = 1`: `μ²/(2ε(ε+μ))`.
pub fn n2_variance(eps: f64, mu: f64) -> f64 {
    mu * mu / (2.0 * eps * (eps + mu))
}

/// Stationary variance of `n = n₂ − n₁` for `σ = 1`: `μ/(2(ε+μ))`.
pub fn n_variance(eps: f64, mu: f64) -> f64 {
    mu / (2.0 * (eps + mu))
}

/// Mean `|n₂ − n₁|` over seeds for each `ε`, with a log-log slope in `ε`.
pub fn nonuniformity_diagnostic(
    mu: f64,
    eps_list: &[f64],
    seeds: &[u64],
    sigma: f64,
) -> Result<NonuniformityTable> {
    if eps_list.is_empty() || seeds.is_empty() {
        return Err(Error::Config("diagnostic needs scales and seeds".into()));
    }
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let vals = seeds
            .iter()
            .map(|&s| nonuniformity_terms(eps, mu, s, sigma).map(|(a, b)| (b - a).abs()))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(NonuniformityRow {
            eps,
            mean_abs_n: stats::mean(&vals),
            stderr: stats::stderr(&vals),
        });
    }
    let slope = if rows.len() >= 2 && rows.iter().all(|r| r.mean_abs_n > 0.0) {
        let e: Vec<f64> = rows.iter().map(|r| r.eps).collect();
        let m: Vec<f64> = rows.iter().map(|r| r.mean_abs_n).collect();
        Some(stats::log_log_slope(&e, &m)?)
    } else {
        None
    };
    Ok(NonuniformityTable { mu, rows, slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::example_model;
    use crate::noise::BrownianPath;

    fn quiet_noise(grid: TimeGrid) -> NoiseBundle {
        NoiseBundle::white(BrownianPath::from_increments(grid, vec![0.0; grid.n_steps()]).unwrap())
    }

    #[test]
    fn expansion_zero_noise_value() {
        let m = example_model(0.1, 6.0).unwrap();
        let g = TimeGrid::new(-3.0, 0.0, 5e-3).unwrap();
        let h = expansion_h(&m, &quiet_noise(g), 3.0, DriverKind::White).unwrap();
        assert!((h - (0.015 + 1.5e-6)).abs() < 1e-15, "{h}");
    }

    #[test]
    fn zero_state_zero_noise_graph_is_zero() {
        let m = example_model(0.1, 6.0).unwrap();
        let opts = LpOptions::default();
        let g = history_grid(&m, 5e-3, None, &opts, 0.0).unwrap();
        let noise = quiet_noise(g);
        let burn = required_burn_in(m.a_matrix(), 0.1, None).unwrap();
        let d = stationary_driver(
            &noise,
            m.a_matrix(),
            m.sigma(),
            0.1,
            DriverKind::White,
            burn,
        )
        .unwrap();
        let s = manifold_graph(&m, &d, &[vec![0.0]], &opts).unwrap();
        assert_eq!(s.h_values[0][0], 0.0);
    }

    #[test]
    fn fixed_point_needs_backward_window() {
        let m = example_model(0.1, 6.0).unwrap();
        let g = TimeGrid::new(-2.0, 0.0, 5e-3).unwrap();
        let noise = quiet_noise(g);
        let d = stationary_driver(&noise, m.a_matrix(), m.sigma(), 0.1, DriverKind::White, 1.0)
            .unwrap();
        assert!(matches!(
            lp_fixed_point(&m, &d, &[1.0], &LpOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn n2_limit_kernel_is_continuous() {
        let eps = 0.01;
        let a = nonuniformity_terms(eps, eps, 5, 1.0).unwrap();
        let b = nonuniformity_terms(eps, eps * (1.0 + 1e-7), 5, 1.0).unwrap();
        assert!((a.1 - b.1).abs() < 1e-4 * a.1.abs().max(1.0), "{a:?} {b:?}");
    }

    #[test]
    fn gap_study_needs_three_mu() {
        let m = example_model(0.1, 6.0).unwrap();
        let study = GapStudy {
            mu_list: vec![0.1, 0.01],
            xi_list: vec![vec![1.0]],
            seeds: vec![1],
            dt: 1e-3,
            source: ManifoldSource::Expansion,
            lp: LpOptions::default(),
        };
        assert!(matches!(wz_manifold_gap(&m, &study), Err(Error::Fit(_))));
    }
}
