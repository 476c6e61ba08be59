//! Pathwise solvers for the slow-fast system driven by white noise (SDE) or
//! by colored noise (Wong-Zakai RDE), and for slow systems closed by a manifold.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::io;
use crate::linalg::{Dense, phi_functions};
use crate::model::SlowFastModel;
use crate::noise::{DriverKind, NoiseBundle};

/// Time stepping for the stiff fast block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Exponential predictor-corrector: the nonlinearity is interpolated
    /// linearly across the step under the exact semigroup kernel.
    #[default]
    ExponentialTrapezoid,
    /// `u ← e^{A dt/ε}(u + (dt/ε) f(u, v)) + (σ/√ε)·inc`.
    ExponentialEuler,
    /// Explicit Euler-Maruyama on both blocks.
    EulerMaruyama,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryMeta {
    pub model: String,
    pub seed: Option<u64>,
    pub scheme: Option<Scheme>,
    pub driver: Option<DriverKind>,
    pub mu: Option<f64>,
    pub param: f64,
}

/// States `(u_i, v_i)` on every node of a grid, stored node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    n1: usize,
    n2: usize,
    fast: Vec<f64>,
    slow: Vec<f64>,
    meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.n_nodes()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn fast(&self, i: usize) -> &[f64] {
        &self.fast[i * self.n1..(i + 1) * self.n1]
    }

    pub fn slow(&self, i: usize) -> &[f64] {
        &self.slow[i * self.n2..(i + 1) * self.n2]
    }

    pub fn fast_values(&self) -> &[f64] {
        &self.fast
    }

    pub fn slow_values(&self) -> &[f64] {
        &self.slow
    }

    pub fn meta(&self) -> &TrajectoryMeta {
        &self.meta
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut header = io::indexed_header("t", "u", self.n1);
        header.extend(io::indexed_header("", "v", self.n2).into_iter().skip(1));
        let rows = (0..self.len()).map(|i| {
            let mut r = vec![self.grid.time(i)];
            r.extend_from_slice(self.fast(i));
            r.extend_from_slice(self.slow(i));
            r
        });
        io::write_rows(path, &header, rows)?;
        io::write_sidecar(
            path,
            &json!({ "meta": self.meta, "grid": io::grid_json(&self.grid) }),
        )
    }
}

/// Index of the node of `outer` where `inner` starts, for grids sharing the step.
pub fn aligned_offset(outer: &TimeGrid, inner: &TimeGrid) -> Result<usize> {
    if ((outer.dt() - inner.dt()) / outer.dt()).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "solver step {} differs from the noise step {}",
            inner.dt(),
            outer.dt()
        )));
    }
    let start = outer
        .node(inner.t_start())
        .map_err(|e| e.context("solver grid start"))?;
    if start + inner.n_steps() > outer.n_steps() {
        return Err(Error::Range(format!(
            "solver grid [{}, {}] runs past the noise grid end {}",
            inner.t_start(),
            inner.t_end(),
            outer.t_end()
        )));
    }
    Ok(start)
}

/// Precomputed step operators for one `(model, dt)` pair.
struct Stepper {
    n1: usize,
    n2: usize,
    scheme: Scheme,
    dt: f64,
    eps: f64,
    /// `e^{A dt/ε}`, or `I + A dt/ε` for Euler-Maruyama.
    e: Dense,
    p1: Dense,
    p2: Dense,
    b: Dense,
    noise_scale: Vec<f64>,
}

impl Stepper {
    fn new(model: &SlowFastModel, dt: f64, scheme: Scheme) -> Self {
        let eps = model.eps();
        let z = model.a_matrix() * (dt / eps);
        let (e, p1, p2) = phi_functions(&z);
        let e = match scheme {
            Scheme::EulerMaruyama => {
                Dense::from_matrix(&(nalgebra::DMatrix::identity(model.n1(), model.n1()) + &z))
            }
            _ => Dense::from_matrix(&e),
        };
        Self {
            n1: model.n1(),
            n2: model.n2(),
            scheme,
            dt,
            eps,
            e,
            p1: Dense::from_matrix(&p1).scaled(dt / eps),
            p2: Dense::from_matrix(&p2).scaled(dt / eps),
            b: Dense::from_matrix(model.b_matrix()),
            noise_scale: model.sigma().iter().map(|s| s / eps.sqrt()).collect(),
        }
    }

    /// Advances `(u, v)` by one step with noise increment `inc`.
    #[allow(clippy::needless_range_loop)]
    fn step(&self, model: &SlowFastModel, u: &mut [f64], v: &mut [f64], inc: f64, s: &mut Scratch) {
        let (n1, n2, dt) = (self.n1, self.n2, self.dt);
        model.fast(u, v, &mut s.f0);
        self.b.apply(v, &mut s.g0);
        model.slow(u, v, &mut s.g1);
        for j in 0..n2 {
            s.g0[j] += s.g1[j];
            s.vp[j] = v[j] + dt * s.g0[j];
        }
        match self.scheme {
            Scheme::EulerMaruyama => {
                self.e.apply(u, &mut s.up);
                for i in 0..n1 {
                    s.up[i] += dt / self.eps * s.f0[i] + self.noise_scale[i] * inc;
                }
                u.copy_from_slice(&s.up);
                v.copy_from_slice(&s.vp);
                return;
            }
            Scheme::ExponentialEuler => {
                for i in 0..n1 {
                    s.f1[i] = u[i] + dt / self.eps * s.f0[i];
                }
                self.e.apply(&s.f1, &mut s.up);
                for i in 0..n1 {
                    s.up[i] += self.noise_scale[i] * inc;
                }
                u.copy_from_slice(&s.up);
            }
            Scheme::ExponentialTrapezoid => {
                self.e.apply(u, &mut s.up);
                self.p1.apply_add(&s.f0, &mut s.up);
                for i in 0..n1 {
                    s.up[i] += self.noise_scale[i] * inc;
                }
                model.fast(&s.up, &s.vp, &mut s.f1);
                for i in 0..n1 {
                    s.f1[i] -= s.f0[i];
                }
                u.copy_from_slice(&s.up);
                self.p2.apply_add(&s.f1, u);
            }
        }
        self.b.apply(&s.vp, &mut s.g1);
        model.slow(u, &s.vp, &mut s.f2);
        for j in 0..n2 {
            v[j] += 0.5 * dt * (s.g0[j] + s.g1[j] + s.f2[j]);
        }
    }
}

struct Scratch {
    f0: Vec<f64>,
    f1: Vec<f64>,
    up: Vec<f64>,
    g0: Vec<f64>,
    g1: Vec<f64>,
    f2: Vec<f64>,
    vp: Vec<f64>,
}

impl Scratch {
    fn new(n1: usize, n2: usize) -> Self {
        Self {
            f0: vec![0.0; n1],
            f1: vec![0.0; n1],
            up: vec![0.0; n1],
            g0: vec![0.0; n2],
            g1: vec![0.0; n2],
            f2: vec![0.0; n2],
            vp: vec![0.0; n2],
        }
    }
}

fn check_state(model: &SlowFastModel, eta: &[f64], xi: &[f64]) -> Result<()> {
    if eta.len() != model.n1() || xi.len() != model.n2() {
        return Err(Error::Config(format!(
            "initial state has sizes ({}, {}), model needs ({}, {})",
            eta.len(),
            xi.len(),
            model.n1(),
            model.n2()
        )));
    }
    if eta.iter().chain(xi).any(|x| !x.is_finite()) {
        return Err(Error::Config("initial state must be finite".into()));
    }
    Ok(())
}

fn check_fast_resolution(model: &SlowFastModel, dt: f64) -> Result<()> {
    let limit = model.eps() / 20.0;
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::Resolution(format!(
            "step {dt} too coarse for eps = {}; need dt <= {limit}",
            model.eps()
        )));
    }
    Ok(())
}

fn run(
    model: &SlowFastModel,
    noise: &NoiseBundle,
    kind: DriverKind,
    zeta: (&[f64], &[f64]),
    grid: &TimeGrid,
    scheme: Scheme,
) -> Result<Trajectory> {
    let (eta, xi) = zeta;
    check_state(model, eta, xi)?;
    check_fast_resolution(model, grid.dt())?;
    let offset = aligned_offset(noise.grid(), grid)?;
    let dt = grid.dt();
    let increments: Vec<f64> = match kind {
        DriverKind::White => {
            noise.brownian().increments()[offset..offset + grid.n_steps()].to_vec()
        }
        DriverKind::Colored => noise.ou()?.values()[offset..offset + grid.n_steps()]
            .iter()
            .map(|z| z * dt)
            .collect(),
    };
    let (n1, n2) = (model.n1(), model.n2());
    let stepper = Stepper::new(model, dt, scheme);
    let mut scratch = Scratch::new(n1, n2);
    let mut fast = Vec::with_capacity(grid.n_nodes() * n1);
    let mut slow = Vec::with_capacity(grid.n_nodes() * n2);
    let (mut u, mut v) = (eta.to_vec(), xi.to_vec());
    fast.extend_from_slice(&u);
    slow.extend_from_slice(&v);
    for (i, inc) in increments.iter().enumerate() {
        stepper.step(model, &mut u, &mut v, *inc, &mut scratch);
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                time: grid.time(i + 1),
                detail: format!("non-finite state after step {}", i + 1),
            });
        }
        fast.extend_from_slice(&u);
        slow.extend_from_slice(&v);
    }
    Ok(Trajectory {
        grid: *grid,
        n1,
        n2,
        fast,
        slow,
        meta: TrajectoryMeta {
            model: model.nonlinearity().name().to_string(),
            seed: noise.seed(),
            scheme: Some(scheme),
            driver: Some(kind),
            mu: if kind == DriverKind::Colored {
                noise.mu()
            } else {
                None
            },
            param: model.param(),
        },
    })
}

/// Solves the white-noise system from `zeta = (η, ξ)` at `grid.t_start()`.
/// The grid must be a sub-range of the noise grid with the same step.
pub fn solve_sde(
    model: &SlowFastModel,
    noise: &NoiseBundle,
    zeta: (&[f64], &[f64]),
    grid: &TimeGrid,
    scheme: Scheme,
) -> Result<Trajectory> {
    run(model, noise, DriverKind::White, zeta, grid, scheme)
}

/// Solves the Wong-Zakai system, forced by `σ z dt/√ε` in place of `σ dB/√ε`.
pub fn solve_rde(
    model: &SlowFastModel,
    noise: &NoiseBundle,
    zeta: (&[f64], &[f64]),
    grid: &TimeGrid,
    scheme: Scheme,
) -> Result<Trajectory> {
    run(model, noise, DriverKind::Colored, zeta, grid, scheme)
}

/// `ṽ' = Bṽ + g(h(t, ṽ), ṽ, a)` by Heun. `h(node, t, ξ, out)` supplies the
/// fast coordinate; the trajectory records `h` as its fast component.
pub fn solve_reduced<H>(
    model: &SlowFastModel,
    param: f64,
    mut h: H,
    xi0: &[f64],
    grid: &TimeGrid,
) -> Result<Trajectory>
where
    H: FnMut(usize, f64, &[f64], &mut [f64]) -> Result<()>,
{
    let (n1, n2) = (model.n1(), model.n2());
    if xi0.len() != n2 || xi0.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config(
            "reduced initial value must be finite with n2 entries".into(),
        ));
    }
    let nl = model.nonlinearity();
    let b = Dense::from_matrix(model.b_matrix());
    let dt = grid.dt();
    let mut fast = Vec::with_capacity(grid.n_nodes() * n1);
    let mut slow = Vec::with_capacity(grid.n_nodes() * n2);
    let mut v = xi0.to_vec();
    let mut u = vec![0.0; n1];
    let mut up = vec![0.0; n1];
    let (mut g0, mut g1, mut gb, mut vp) =
        (vec![0.0; n2], vec![0.0; n2], vec![0.0; n2], vec![0.0; n2]);
    let eval = |h: &mut H, i: usize, x: &[f64], out: &mut [f64]| {
        h(i, grid.time(i), x, out)
            .map_err(|e| e.context(format!("closure at t = {}", grid.time(i))))
    };
    eval(&mut h, 0, &v, &mut u)?;
    for i in 0..grid.n_steps() {
        fast.extend_from_slice(&u);
        slow.extend_from_slice(&v);
        b.apply(&v, &mut g0);
        nl.slow(&u, &v, param, &mut gb);
        for j in 0..n2 {
            g0[j] += gb[j];
            vp[j] = v[j] + dt * g0[j];
        }
        eval(&mut h, i + 1, &vp, &mut up)?;
        b.apply(&vp, &mut g1);
        nl.slow(&up, &vp, param, &mut gb);
        for j in 0..n2 {
            v[j] += 0.5 * dt * (g0[j] + g1[j] + gb[j]);
        }
        eval(&mut h, i + 1, &v, &mut u)?;
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                time: grid.time(i + 1),
                detail: "non-finite reduced state".into(),
            });
        }
    }
    fast.extend_from_slice(&u);
    slow.extend_from_slice(&v);
    Ok(Trajectory {
        grid: *grid,
        n1,
        n2,
        fast,
        slow,
        meta: TrajectoryMeta {
            model: nl.name().to_string(),
            seed: None,
            scheme: None,
            driver: None,
            mu: None,
            param,
        },
    })
}
