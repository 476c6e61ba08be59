//! Coupled Brownian, Ornstein-Uhlenbeck and integrated O-U sample paths,
//! the Wiener shift, and the stationary fast drivers built on them.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::io;
use crate::linalg::{Dense, log_norm};

/// Stream index used for the stationary O-U start value.
const Z0_STREAM: u64 = 1;

/// Seeded generator for stream `stream` of `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Two-sided Brownian path pinned to 0 at time 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    grid: TimeGrid,
    increments: Vec<f64>,
    values: Vec<f64>,
    seed: Option<u64>,
}

pub fn sample_brownian(grid: TimeGrid, seed: u64) -> Result<BrownianPath> {
    let mut rng = rng_for(seed, 0);
    let sd = grid.dt().sqrt();
    let increments = (0..grid.n_steps())
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut rng);
            sd * x
        })
        .collect();
    BrownianPath::build(grid, increments, Some(seed))
}

impl BrownianPath {
    /// Path with prescribed increments; `increments[i]` spans nodes `i..i+1`.
    pub fn from_increments(grid: TimeGrid, increments: Vec<f64>) -> Result<Self> {
        Self::build(grid, increments, None)
    }

    fn build(grid: TimeGrid, increments: Vec<f64>, seed: Option<u64>) -> Result<Self> {
        if increments.len() != grid.n_steps() {
            return Err(Error::Config(format!(
                "{} increments for a grid of {} steps",
                increments.len(),
                grid.n_steps()
            )));
        }
        let values = pin_at_zero(&grid, &increments)?;
        Ok(Self {
            grid,
            increments,
            values,
            seed,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn value_at(&self, t: f64) -> Result<f64> {
        Ok(self.values[self.grid.node(t)?])
    }

    /// Same path seen on a grid `factor` times coarser (increments summed).
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.coarsened(factor)?;
        let increments = self
            .increments
            .chunks(factor)
            .map(|c| c.iter().sum())
            .collect();
        Self::build(grid, increments, self.seed)
    }

    /// Restriction to nodes `from..=to`; the window must contain time 0.
    pub fn window(&self, from: usize, to: usize) -> Result<Self> {
        let grid = self.grid.window(from, to)?;
        grid.require_zero_node()?;
        Self::build(grid, self.increments[from..to].to_vec(), self.seed)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_series(path, &self.grid, &self.values)?;
        io::write_sidecar(
            path,
            &json!({ "kind": "brownian", "seed": self.seed, "grid": io::grid_json(&self.grid) }),
        )
    }
}

/// Cumulative sums of `increments` with value 0 at the zero node.
fn pin_at_zero(grid: &TimeGrid, increments: &[f64]) -> Result<Vec<f64>> {
    let k = grid.require_zero_node()?;
    let mut values = vec![0.0; grid.n_nodes()];
    for i in k..grid.n_steps() {
        values[i + 1] = values[i] + increments[i];
    }
    for i in (0..k).rev() {
        values[i] = values[i + 1] - increments[i];
    }
    Ok(values)
}

/// Start value of an O-U path at the first grid node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Z0Mode {
    /// Draw from the stationary law N(0, 1/(2μ)) on a separate stream of the path seed.
    StationarySample,
    Explicit(f64),
    Zero,
}

/// Euler discretisation of `μ dz = −z dt + dB` driven by a Brownian path.
#[derive(Debug, Clone, PartialEq)]
pub struct OuPath {
    grid: TimeGrid,
    mu: f64,
    z0: f64,
    values: Vec<f64>,
}

pub fn ou_path(b: &BrownianPath, mu: f64, z0_mode: Z0Mode) -> Result<OuPath> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::Config(format!(
            "correlation time must be positive, got {mu}"
        )));
    }
    let dt = b.grid.dt();
    if dt > mu / 10.0 * (1.0 + 1e-12) {
        return Err(Error::Resolution(format!(
            "step {dt} too coarse for mu = {mu}; need dt <= {}",
            mu / 10.0
        )));
    }
    let z0 = match z0_mode {
        Z0Mode::Zero => 0.0,
        Z0Mode::Explicit(z) => z,
        Z0Mode::StationarySample => {
            let seed = b.seed.ok_or_else(|| {
                Error::Config("stationary start needs a seeded Brownian path".into())
            })?;
            let x: f64 = StandardNormal.sample(&mut rng_for(seed, Z0_STREAM));
            x * (0.5 / mu).sqrt()
        }
    };
    let decay = 1.0 - dt / mu;
    let mut values = Vec::with_capacity(b.grid.n_nodes());
    let mut z = z0;
    values.push(z);
    for db in &b.increments {
        z = decay * z + db / mu;
        values.push(z);
    }
    Ok(OuPath {
        grid: b.grid,
        mu,
        z0,
        values,
    })
}

impl OuPath {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Value at the first grid node.
    pub fn z0(&self) -> f64 {
        self.z0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn write_csv(&self, path: &Path, seed: Option<u64>) -> Result<()> {
        io::write_series(path, &self.grid, &self.values)?;
        io::write_sidecar(
            path,
            &json!({ "kind": "ou", "mu": self.mu, "z0": self.z0, "seed": seed,
                     "grid": io::grid_json(&self.grid) }),
        )
    }
}

/// Left-Riemann time integral of an O-U path, zero at time 0.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedOuPath {
    grid: TimeGrid,
    mu: f64,
    values: Vec<f64>,
}

pub fn integrated_ou(z: &OuPath) -> Result<IntegratedOuPath> {
    let grid = z.grid;
    let k = grid.require_zero_node()?;
    let dt = grid.dt();
    let mut values = vec![0.0; grid.n_nodes()];
    for i in k..grid.n_steps() {
        values[i + 1] = values[i] + z.values[i] * dt;
    }
    for i in (0..k).rev() {
        values[i] = values[i + 1] - z.values[i] * dt;
    }
    Ok(IntegratedOuPath {
        grid,
        mu: z.mu,
        values,
    })
}

impl IntegratedOuPath {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn write_csv(&self, path: &Path, seed: Option<u64>) -> Result<()> {
        io::write_series(path, &self.grid, &self.values)?;
        io::write_sidecar(
            path,
            &json!({ "kind": "integrated_ou", "mu": self.mu, "seed": seed,
                     "grid": io::grid_json(&self.grid) }),
        )
    }
}

/// The shift `θ_t ω(s) = ω(t+s) − ω(t)`, applied to a stored path.
pub trait WienerShift: Sized {
    fn wiener_shift(&self, t: f64) -> Result<Self>;
}

pub fn wiener_shift<P: WienerShift>(path: &P, t: f64) -> Result<P> {
    path.wiener_shift(t)
}

impl WienerShift for BrownianPath {
    fn wiener_shift(&self, t: f64) -> Result<Self> {
        let grid = self.grid.shifted(t)?;
        Self::build(grid, self.increments.clone(), self.seed)
    }
}

impl WienerShift for OuPath {
    /// `z_s(θ_t ω) = z_{s+t}(ω)`: values are kept, times relabelled.
    fn wiener_shift(&self, t: f64) -> Result<Self> {
        Ok(Self {
            grid: self.grid.shifted(t)?,
            ..self.clone()
        })
    }
}

impl WienerShift for IntegratedOuPath {
    fn wiener_shift(&self, t: f64) -> Result<Self> {
        let grid = self.grid.shifted(t)?;
        let base = self.values[grid.require_zero_node()?];
        Ok(Self {
            grid,
            mu: self.mu,
            values: self.values.iter().map(|v| v - base).collect(),
        })
    }
}

/// One noise sample: a Brownian path and, for colored runs, its O-U companions.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    brownian: BrownianPath,
    colored: Option<(OuPath, IntegratedOuPath)>,
}

impl NoiseBundle {
    pub fn white(brownian: BrownianPath) -> Self {
        Self {
            brownian,
            colored: None,
        }
    }

    pub fn colored(brownian: BrownianPath, mu: f64, z0: Z0Mode) -> Result<Self> {
        let z = ou_path(&brownian, mu, z0)?;
        let phi = integrated_ou(&z)?;
        Ok(Self {
            brownian,
            colored: Some((z, phi)),
        })
    }

    /// Seeded sample; `mu = None` gives a white-noise bundle.
    pub fn sample(grid: TimeGrid, seed: u64, mu: Option<f64>) -> Result<Self> {
        let b = sample_brownian(grid, seed)?;
        match mu {
            None => Ok(Self::white(b)),
            Some(mu) => Self::colored(b, mu, Z0Mode::StationarySample),
        }
    }

    /// Same Brownian path with a colored companion at correlation time `mu`.
    pub fn with_mu(&self, mu: f64) -> Result<Self> {
        Self::colored(self.brownian.clone(), mu, Z0Mode::StationarySample)
    }

    /// The same sample on a grid `factor` times coarser; the colored part is
    /// rebuilt from the summed increments with the original start value.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let brownian = self.brownian.coarsen(factor)?;
        match &self.colored {
            None => Ok(Self::white(brownian)),
            Some((z, _)) => Self::colored(brownian, z.mu, Z0Mode::Explicit(z.z0)),
        }
    }

    pub fn brownian(&self) -> &BrownianPath {
        &self.brownian
    }

    pub fn grid(&self) -> &TimeGrid {
        self.brownian.grid()
    }

    pub fn seed(&self) -> Option<u64> {
        self.brownian.seed()
    }

    pub fn mu(&self) -> Option<f64> {
        self.colored.as_ref().map(|(z, _)| z.mu)
    }

    pub fn ou(&self) -> Result<&OuPath> {
        self.colored
            .as_ref()
            .map(|(z, _)| z)
            .ok_or_else(|| Error::Config("noise sample has no colored component".into()))
    }

    pub fn integrated(&self) -> Result<&IntegratedOuPath> {
        self.colored
            .as_ref()
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Config("noise sample has no colored component".into()))
    }
}

impl WienerShift for NoiseBundle {
    fn wiener_shift(&self, t: f64) -> Result<Self> {
        let colored = match &self.colored {
            Some((z, p)) => Some((z.wiener_shift(t)?, p.wiener_shift(t)?)),
            None => None,
        };
        Ok(Self {
            brownian: self.brownian.wiener_shift(t)?,
            colored,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    White,
    Colored,
}

/// Stationary response of the fast linear part to the noise,
/// `û_{i+1} = e^{A dt/ε} û_i + (σ/√ε)·inc_i` with `inc_i = ΔB_i` or `z_i dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDriver {
    kind: DriverKind,
    eps: f64,
    mu: Option<f64>,
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
    valid_from: f64,
    seed: Option<u64>,
}

/// Shortest burn-in that makes the truncation bias `e^{-10}` relative.
pub fn required_burn_in(a: &DMatrix<f64>, eps: f64, mu: Option<f64>) -> Result<f64> {
    let gamma = -log_norm(a);
    if !(gamma > 0.0) {
        return Err(Error::Precondition(format!(
            "fast linear part is not dissipative (log-norm {})",
            -gamma
        )));
    }
    Ok(f64::max(10.0 * eps / gamma, 10.0 * mu.unwrap_or(0.0)))
}

pub fn stationary_driver(
    noise: &NoiseBundle,
    a: &DMatrix<f64>,
    sigma: &[f64],
    eps: f64,
    kind: DriverKind,
    burn_in: f64,
) -> Result<StationaryDriver> {
    let dim = a.nrows();
    if a.ncols() != dim || sigma.len() != dim {
        return Err(Error::Config(format!(
            "A is {}x{} but sigma has {} entries",
            a.nrows(),
            a.ncols(),
            sigma.len()
        )));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Config(format!(
            "scale eps must be positive, got {eps}"
        )));
    }
    let mu = match kind {
        DriverKind::White => None,
        DriverKind::Colored => Some(noise.ou()?.mu()),
    };
    let required = required_burn_in(a, eps, mu)?;
    if !(burn_in >= required * (1.0 - 1e-12)) {
        return Err(Error::Config(format!(
            "burn-in {burn_in} shorter than the required window {required}"
        )));
    }
    let grid = *noise.grid();
    let valid_from = grid.t_start() + burn_in;
    if valid_from >= grid.t_end() {
        return Err(Error::Config(format!(
            "grid [{}, {}] cannot hold a burn-in window of {burn_in}",
            grid.t_start(),
            grid.t_end()
        )));
    }
    let dt = grid.dt();
    let step = Dense::from_matrix(&(a * (dt / eps)).exp());
    let scale: Vec<f64> = sigma.iter().map(|s| s / eps.sqrt()).collect();
    let increments: Vec<f64> = match kind {
        DriverKind::White => noise.brownian().increments().to_vec(),
        DriverKind::Colored => noise.ou()?.values()[..grid.n_steps()]
            .iter()
            .map(|z| z * dt)
            .collect(),
    };
    let mut values = vec![0.0; grid.n_nodes() * dim];
    for (i, inc) in increments.iter().enumerate() {
        let (head, tail) = values.split_at_mut((i + 1) * dim);
        let next = &mut tail[..dim];
        step.apply(&head[i * dim..], next);
        for (x, s) in next.iter_mut().zip(&scale) {
            *x += s * inc;
        }
    }
    Ok(StationaryDriver {
        kind,
        eps,
        mu,
        grid,
        dim,
        values,
        valid_from,
        seed: noise.seed(),
    })
}

impl StationaryDriver {
    pub fn kind(&self) -> DriverKind {
        self.kind
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn mu(&self) -> Option<f64> {
        self.mu
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Earliest time at which the burn-in has been spent.
    pub fn valid_from(&self) -> f64 {
        self.valid_from
    }

    pub fn value(&self, node: usize) -> &[f64] {
        &self.values[node * self.dim..(node + 1) * self.dim]
    }

    pub fn value_at(&self, t: f64) -> Result<&[f64]> {
        Ok(self.value(self.grid.node(t)?))
    }

    /// Flat node-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Fails unless nodes from time `t` onwards lie past the burn-in.
    pub fn check_covers(&self, t: f64) -> Result<()> {
        if t < self.valid_from - 1e-9 * self.grid.dt() {
            return Err(Error::Config(format!(
                "driver is only valid from t = {} but t = {t} was requested; extend the burn-in grid",
                self.valid_from
            )));
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let seed = self.seed;
        let header = io::indexed_header("t", "value", self.dim);
        let rows = (0..self.grid.n_nodes()).map(|i| {
            std::iter::once(self.grid.time(i))
                .chain(self.value(i).iter().copied())
                .collect::<Vec<_>>()
        });
        io::write_rows(path, &header, rows)?;
        io::write_sidecar(
            path,
            &json!({ "kind": self.kind, "eps": self.eps, "mu": self.mu, "seed": seed,
                     "valid_from": self.valid_from, "grid": io::grid_json(&self.grid) }),
        )
    }
}

impl WienerShift for StationaryDriver {
    /// The driver is a stationary process, `x̂(θ_t ω)(s) = x̂(ω)(t+s)`: times are relabelled.
    fn wiener_shift(&self, t: f64) -> Result<Self> {
        Ok(Self {
            grid: self.grid.shifted(t)?,
            valid_from: self.valid_from - t,
            ..self.clone()
        })
    }
}
