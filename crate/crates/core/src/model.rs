//! Slow-fast systems `u' = (A u + f(u,v))/ε + σ Ḃ/√ε`, `v' = B v + g(u,v,a)`,
//! the checks on their structural constants, and the built-in example.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::log_norm;
use crate::noise::rng_for;

/// Nonlinear terms of a slow-fast system. Implementations must be pure.
pub trait Nonlinearity: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn fast(&self, u: &[f64], v: &[f64], out: &mut [f64]);
    fn slow(&self, u: &[f64], v: &[f64], a: f64, out: &mut [f64]);

    /// Radius of the box used when sampling Lipschitz constants.
    fn sampling_radius(&self) -> f64 {
        10.0
    }

    fn as_example(&self) -> Option<&ExampleNonlinearity> {
        None
    }
}

/// C¹ bridge: 1 on `[0, 1]`, `1 − 3x² + 2x³` with `x = s − 1` on `[1, 2]`, 0 beyond.
pub fn bridge(s: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else if s >= 2.0 {
        0.0
    } else {
        let x = s - 1.0;
        1.0 - x * x * (3.0 - 2.0 * x)
    }
}

pub fn bridge_slope(s: f64) -> f64 {
    if s <= 1.0 || s >= 2.0 {
        0.0
    } else {
        let x = s - 1.0;
        6.0 * x * (x - 1.0)
    }
}

/// `raw(x)·χ(‖x‖/radius)`; inside the ball `raw` is returned untouched.
pub fn cutoff<F>(raw: F, radius: f64) -> impl Fn(&[f64]) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    move |x: &[f64]| {
        let s = crate::linalg::norm(x) / radius;
        if s <= 1.0 {
            raw(x)
        } else if s >= 2.0 {
            0.0
        } else {
            raw(x) * bridge(s)
        }
    }
}

/// `f(u,v) = χ(|v|/R) v²/600`, `g(u,v,a) = −a u v χ(‖(u,v)‖/R)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleNonlinearity {
    radius: f64,
}

impl ExampleNonlinearity {
    pub const DENOM: f64 = 600.0;

    pub fn new(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::Config(format!(
                "cutoff radius must be positive, got {radius}"
            )));
        }
        Ok(Self { radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Global Lipschitz constant of the cut-off fast term, `(R/600)·max|d/ds(χ(s)s²)|`.
    pub fn fast_lipschitz(&self) -> f64 {
        let n = 20_000;
        let peak = (0..=n)
            .map(|i| {
                let s = 2.0 * i as f64 / n as f64;
                (bridge_slope(s) * s * s + 2.0 * s * bridge(s)).abs()
            })
            .fold(0.0, f64::max);
        // the scan step is 1e-4; the margin covers the missed curvature
        self.radius / Self::DENOM * peak * (1.0 + 1e-3)
    }
}

impl Nonlinearity for ExampleNonlinearity {
    fn name(&self) -> &str {
        "example"
    }

    fn fast(&self, _u: &[f64], v: &[f64], out: &mut [f64]) {
        out[0] = bridge(v[0].abs() / self.radius) * v[0] * v[0] / Self::DENOM;
    }

    fn slow(&self, u: &[f64], v: &[f64], a: f64, out: &mut [f64]) {
        let s = u[0].hypot(v[0]) / self.radius;
        out[0] = -a * u[0] * v[0] * bridge(s);
    }

    fn sampling_radius(&self) -> f64 {
        2.5 * self.radius
    }

    fn as_example(&self) -> Option<&ExampleNonlinearity> {
        Some(self)
    }
}

/// `f ≡ 0`, `g ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNonlinearity;

impl Nonlinearity for ZeroNonlinearity {
    fn name(&self) -> &str {
        "zero"
    }

    fn fast(&self, _u: &[f64], _v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn slow(&self, _u: &[f64], _v: &[f64], _a: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
}

type FastFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
type SlowFn = dyn Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync;

/// Nonlinearity assembled from closures.
pub struct FnNonlinearity {
    name: String,
    f: Box<FastFn>,
    g: Box<SlowFn>,
}

impl FnNonlinearity {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        g: impl Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            f: Box::new(f),
            g: Box::new(g),
        }
    }
}

impl fmt::Debug for FnNonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnNonlinearity")
            .field("name", &self.name)
            .finish()
    }
}

impl Nonlinearity for FnNonlinearity {
    fn name(&self) -> &str {
        &self.name
    }

    fn fast(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        (self.f)(u, v, out)
    }

    fn slow(&self, u: &[f64], v: &[f64], a: f64, out: &mut [f64]) {
        (self.g)(u, v, a, out)
    }
}

/// Looks up a built-in nonlinearity: `example` or `zero`.
pub fn registered_nonlinearity(name: &str, cutoff_radius: f64) -> Result<Arc<dyn Nonlinearity>> {
    match name {
        "example" => Ok(Arc::new(ExampleNonlinearity::new(cutoff_radius)?)),
        "zero" => Ok(Arc::new(ZeroNonlinearity)),
        other => Err(Error::Config(format!(
            "unknown nonlinearity '{other}' (known: example, zero)"
        ))),
    }
}

/// Constants declared alongside a model: decay rates, Lipschitz bound, weight rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeclaredConstants {
    pub gamma1: f64,
    pub gamma2: f64,
    pub lipschitz: f64,
    pub rho: f64,
}

#[derive(Clone)]
pub struct SlowFastModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    nonlinearity: Arc<dyn Nonlinearity>,
    sigma: Vec<f64>,
    eps: f64,
    param: f64,
    param_range: (f64, f64),
    constants: DeclaredConstants,
}

impl fmt::Debug for SlowFastModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SlowFastModel")
            .field("nonlinearity", &self.nonlinearity.name())
            .field("n1", &self.n1())
            .field("n2", &self.n2())
            .field("eps", &self.eps)
            .field("param", &self.param)
            .finish()
    }
}

impl SlowFastModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        nonlinearity: Arc<dyn Nonlinearity>,
        sigma: Vec<f64>,
        eps: f64,
        param: f64,
        constants: DeclaredConstants,
    ) -> Result<Self> {
        if !a.is_square() || !b.is_square() || a.nrows() == 0 || b.nrows() == 0 {
            return Err(Error::Config(
                "A and B must be non-empty square matrices".into(),
            ));
        }
        if sigma.len() != a.nrows() {
            return Err(Error::Config(format!(
                "sigma has {} entries, expected {}",
                sigma.len(),
                a.nrows()
            )));
        }
        let finite = a
            .iter()
            .chain(b.iter())
            .chain(sigma.iter())
            .all(|x| x.is_finite());
        if !finite || !param.is_finite() {
            return Err(Error::Config("model entries must be finite".into()));
        }
        let model = Self {
            a,
            b,
            nonlinearity,
            sigma,
            eps: 1.0,
            param,
            param_range: (f64::NEG_INFINITY, f64::INFINITY),
            constants,
        };
        model.with_constants(constants)?.with_eps(eps)
    }

    pub fn with_eps(mut self, eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0 && eps <= 1.0) {
            return Err(Error::Config(format!(
                "scale eps must lie in (0, 1], got {eps}"
            )));
        }
        self.eps = eps;
        Ok(self)
    }

    pub fn with_param(mut self, param: f64) -> Result<Self> {
        let (lo, hi) = self.param_range;
        if !(param >= lo && param <= hi) {
            return Err(Error::Range(format!(
                "parameter {param} outside its interval [{lo}, {hi}]"
            )));
        }
        self.param = param;
        Ok(self)
    }

    pub fn with_param_range(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!(
                "empty parameter interval [{lo}, {hi}]"
            )));
        }
        if !(self.param >= lo && self.param <= hi) {
            return Err(Error::Range(format!(
                "parameter {} outside its interval [{lo}, {hi}]",
                self.param
            )));
        }
        self.param_range = (lo, hi);
        Ok(self)
    }

    pub fn with_sigma(mut self, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != self.n1() || sigma.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config(
                "sigma must be finite with one entry per fast variable".into(),
            ));
        }
        self.sigma = sigma;
        Ok(self)
    }

    pub fn with_constants(mut self, c: DeclaredConstants) -> Result<Self> {
        let all = [c.gamma1, c.gamma2, c.lipschitz, c.rho];
        if all.iter().any(|x| !x.is_finite() || *x < 0.0) || c.gamma1 == 0.0 || c.rho == 0.0 {
            return Err(Error::Config(format!(
                "declared constants must be finite and positive: {c:?}"
            )));
        }
        self.constants = c;
        Ok(self)
    }

    pub fn n1(&self) -> usize {
        self.a.nrows()
    }

    pub fn n2(&self) -> usize {
        self.b.nrows()
    }

    pub fn a_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b_matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn param(&self) -> f64 {
        self.param
    }

    pub fn param_range(&self) -> (f64, f64) {
        self.param_range
    }

    pub fn constants(&self) -> DeclaredConstants {
        self.constants
    }

    pub fn nonlinearity(&self) -> &dyn Nonlinearity {
        self.nonlinearity.as_ref()
    }

    pub fn fast(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        self.nonlinearity.fast(u, v, out)
    }

    pub fn slow(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        self.nonlinearity.slow(u, v, self.param, out)
    }

    /// The example nonlinearity, when this is the scalar example system.
    pub fn example(&self) -> Option<&ExampleNonlinearity> {
        if self.n1() == 1 && self.n2() == 1 {
            self.nonlinearity.as_example()
        } else {
            None
        }
    }

    /// Closed-form constants for the current scale.
    pub fn contraction(&self) -> Contraction {
        Contraction::new(self.constants, self.eps)
    }
}

/// Contraction and tracking constants of the Lyapunov-Perron operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Contraction {
    /// `K/(γ₁−ρ) + εK/(ρ−εγ₂)`; bounds both the operator norm and its Lipschitz constant.
    pub kappa: f64,
    pub kappa_star: f64,
    pub eps_max: f64,
    /// Lipschitz bound for the manifold graph.
    pub graph_lipschitz: f64,
    pub tracking_c1: f64,
    pub tracking_c2: f64,
}

impl Contraction {
    pub fn new(c: DeclaredConstants, eps: f64) -> Self {
        let k = c.lipschitz;
        let d1 = c.gamma1 - c.rho;
        let d2 = c.rho - eps * c.gamma2;
        let (kappa, margin) = if d1 > 0.0 && d2 > 0.0 {
            let kappa = k / d1 + eps * k / d2;
            (kappa, 1.0 - k * (1.0 / d1 + eps / d2))
        } else {
            (f64::INFINITY, f64::NEG_INFINITY)
        };
        let eps_max = if k == 0.0 {
            c.rho / c.gamma2
        } else {
            let room = 1.0 / k - 1.0 / d1;
            if d1 > 0.0 && room > 0.0 {
                c.rho / (c.gamma2 + 1.0 / room)
            } else {
                0.0
            }
        };
        let positive = margin > 0.0;
        let kappa_star = if positive {
            kappa + k * k / (d1 * (c.rho / eps - c.gamma2) * margin)
        } else {
            f64::INFINITY
        };
        Self {
            kappa,
            kappa_star,
            eps_max,
            graph_lipschitz: if positive {
                k / (d1 * margin)
            } else {
                f64::INFINITY
            },
            tracking_c1: if positive {
                1.0 / margin
            } else {
                f64::INFINITY
            },
            tracking_c2: c.rho / eps,
        }
    }

    /// `ceil(ln tol / ln κ) + 2`, the Picard iteration budget.
    pub fn iteration_budget(&self, tol: f64) -> usize {
        if self.kappa <= 0.0 {
            return 2;
        }
        if self.kappa >= 1.0 {
            return usize::MAX;
        }
        (tol.ln() / self.kappa.ln()).ceil() as usize + 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub gamma1: f64,
    pub gamma2: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub rho: f64,
    pub eps: f64,
    pub kappa: f64,
    pub kappa1: f64,
    pub kappa_star: f64,
    pub eps_max: f64,
    pub graph_lipschitz_bound: f64,
    pub tracking_c1: f64,
    pub tracking_c2: f64,
    pub fast_log_norm: f64,
    pub slow_backward_log_norm: f64,
    pub sampled_fast_lipschitz: f64,
    /// Reported only; see the README note on the example's slow coupling.
    pub sampled_slow_lipschitz: f64,
    pub tracking_ok: bool,
    pub ok: bool,
    pub violations: Vec<String>,
}

const LIPSCHITZ_SAMPLES: usize = 4000;

pub fn check_assumptions(model: &SlowFastModel) -> Result<AssumptionReport> {
    let c = model.constants;
    let eps = model.eps;
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Config(format!(
            "scale eps must be positive, got {eps}"
        )));
    }
    let con = model.contraction();
    let fast_log_norm = log_norm(&model.a);
    let slow_backward_log_norm = log_norm(&(-&model.b));
    let (fast_lip, slow_lip) = sampled_lipschitz(model);

    let mut violations = Vec::new();
    if !(c.lipschitz < c.gamma1 - c.rho) {
        violations.push(format!(
            "gap condition: K = {} must be below gamma1 - rho = {}",
            c.lipschitz,
            c.gamma1 - c.rho
        ));
    }
    if !(eps < con.eps_max) {
        violations.push(format!(
            "scale condition: eps = {eps} must be below eps_max = {}",
            con.eps_max
        ));
    }
    if fast_log_norm > -c.gamma1 + 1e-12 {
        violations.push(format!(
            "fast spectral condition: log-norm of A is {fast_log_norm}, needs <= -{}",
            c.gamma1
        ));
    }
    if slow_backward_log_norm > c.gamma2 + 1e-12 {
        violations.push(format!(
            "slow spectral condition: log-norm of -B is {slow_backward_log_norm}, needs <= {}",
            c.gamma2
        ));
    }
    if fast_lip > c.lipschitz * (1.0 + 1e-6) + 1e-12 {
        violations.push(format!(
            "Lipschitz condition: sampled constant of f is {fast_lip}, declared K = {}",
            c.lipschitz
        ));
    }
    let (n1, n2) = (model.n1(), model.n2());
    let mut f0 = vec![0.0; n1];
    let mut g0 = vec![0.0; n2];
    model.fast(&vec![0.0; n1], &vec![0.0; n2], &mut f0);
    model.slow(&vec![0.0; n1], &vec![0.0; n2], &mut g0);
    if f0.iter().chain(&g0).any(|x| *x != 0.0) {
        violations.push("origin condition: f(0,0) and g(0,0,a) must vanish".into());
    }
    Ok(AssumptionReport {
        gamma1: c.gamma1,
        gamma2: c.gamma2,
        k: c.lipschitz,
        rho: c.rho,
        eps,
        kappa: con.kappa,
        kappa1: con.kappa,
        kappa_star: con.kappa_star,
        eps_max: con.eps_max,
        graph_lipschitz_bound: con.graph_lipschitz,
        tracking_c1: con.tracking_c1,
        tracking_c2: con.tracking_c2,
        fast_log_norm,
        slow_backward_log_norm,
        sampled_fast_lipschitz: fast_lip,
        sampled_slow_lipschitz: slow_lip,
        tracking_ok: violations.is_empty() && con.kappa_star < 1.0,
        ok: violations.is_empty(),
        violations,
    })
}

/// Largest finite-difference slope of `f` and `g` over random points and
/// directions in a box, measured in the norm `‖u‖ + ‖v‖`.
fn sampled_lipschitz(model: &SlowFastModel) -> (f64, f64) {
    let (n1, n2) = (model.n1(), model.n2());
    let r = model.nonlinearity.sampling_radius();
    let h = 1e-6 * r.max(1.0);
    let mut rng = rng_for(0x5eed, 7);
    let unit = Uniform::new_inclusive(-r, r).expect("valid box");
    let (mut fmax, mut gmax) = (0.0f64, 0.0f64);
    let mut p = vec![0.0; n1 + n2];
    let mut d = vec![0.0; n1 + n2];
    let (mut fa, mut fb) = (vec![0.0; n1], vec![0.0; n1]);
    let (mut ga, mut gb) = (vec![0.0; n2], vec![0.0; n2]);
    for _ in 0..LIPSCHITZ_SAMPLES {
        p.iter_mut().for_each(|x| *x = unit.sample(&mut rng));
        d.iter_mut()
            .for_each(|x| *x = StandardNormal.sample(&mut rng));
        let len = crate::linalg::norm(&d[..n1]) + crate::linalg::norm(&d[n1..]);
        if len == 0.0 {
            continue;
        }
        let q: Vec<f64> = p.iter().zip(&d).map(|(x, y)| x + h * y / len).collect();
        model.fast(&p[..n1], &p[n1..], &mut fa);
        model.fast(&q[..n1], &q[n1..], &mut fb);
        model.slow(&p[..n1], &p[n1..], &mut ga);
        model.slow(&q[..n1], &q[n1..], &mut gb);
        fmax = fmax.max(crate::linalg::dist(&fa, &fb) / h);
        gmax = gmax.max(crate::linalg::dist(&ga, &gb) / h);
    }
    (fmax, gmax)
}

pub const EXAMPLE_EPS: f64 = 0.1;
pub const EXAMPLE_SIGMA: f64 = 0.1;
pub const EXAMPLE_B: f64 = 0.001;
pub const EXAMPLE_RHO: f64 = 0.5;
pub const EXAMPLE_RANGE: (f64, f64) = (0.01, 1.0);
pub const EXAMPLE_RADIUS: f64 = 6.0;

/// The scalar example: `A = −1`, `B = 0.001`, `σ = 0.1`, `ε = 0.1`,
/// `γ₁ = 1`, `γ₂ = 0.001`, `ρ = 0.5`, `K` from the cut-off radius.
pub fn example_model(a: f64, cutoff_radius: f64) -> Result<SlowFastModel> {
    let nl = ExampleNonlinearity::new(cutoff_radius)?;
    let constants = DeclaredConstants {
        gamma1: 1.0,
        gamma2: EXAMPLE_B,
        lipschitz: nl.fast_lipschitz(),
        rho: EXAMPLE_RHO,
    };
    SlowFastModel::new(
        DMatrix::from_element(1, 1, -1.0),
        DMatrix::from_element(1, 1, EXAMPLE_B),
        Arc::new(nl),
        vec![EXAMPLE_SIGMA],
        EXAMPLE_EPS,
        a,
        constants,
    )?
    .with_param_range(EXAMPLE_RANGE.0, EXAMPLE_RANGE.1)
}

/// Serializable model description; matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub nonlinearity: String,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    pub eps: f64,
    pub param: f64,
    pub param_range: [f64; 2],
    pub cutoff_radius: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub rho: f64,
    /// Lipschitz bound `K`; derived from the cut-off when omitted.
    pub lipschitz: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            nonlinearity: "example".into(),
            a: vec![vec![-1.0]],
            b: vec![vec![EXAMPLE_B]],
            sigma: vec![EXAMPLE_SIGMA],
            eps: EXAMPLE_EPS,
            param: 0.1,
            param_range: [EXAMPLE_RANGE.0, EXAMPLE_RANGE.1],
            cutoff_radius: EXAMPLE_RADIUS,
            gamma1: 1.0,
            gamma2: EXAMPLE_B,
            rho: EXAMPLE_RHO,
            lipschitz: None,
        }
    }
}

fn matrix_from_rows(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!(
            "{name} must be a non-empty square matrix"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(n, n, &flat))
}

impl ModelConfig {
    pub fn build(&self) -> Result<SlowFastModel> {
        let nl = registered_nonlinearity(&self.nonlinearity, self.cutoff_radius)?;
        let lipschitz = match (self.lipschitz, nl.as_example()) {
            (Some(k), _) => k,
            (None, Some(ex)) => ex.fast_lipschitz(),
            (None, None) if self.nonlinearity == "zero" => 0.0,
            (None, None) => {
                return Err(Error::Config(format!(
                    "nonlinearity '{}' needs an explicit lipschitz constant",
                    self.nonlinearity
                )));
            }
        };
        let constants = DeclaredConstants {
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            lipschitz,
            rho: self.rho,
        };
        SlowFastModel::new(
            matrix_from_rows("a", &self.a)?,
            matrix_from_rows("b", &self.b)?,
            nl,
            self.sigma.clone(),
            self.eps,
            self.param,
            constants,
        )?
        .with_param_range(self.param_range[0], self.param_range[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_origin_and_inner_values() {
        let m = example_model(0.1, 6.0).unwrap();
        let mut out = [1.0];
        m.fast(&[0.0], &[0.0], &mut out);
        assert_eq!(out[0], 0.0);
        m.slow(&[0.0], &[0.0], &mut out);
        assert_eq!(out[0], 0.0);
        m.fast(&[0.4], &[3.0], &mut out);
        assert_eq!(out[0], 9.0 / 600.0);
        m.slow(&[0.5], &[2.0], &mut out);
        assert_eq!(out[0], -0.1 * 0.5 * 2.0);
    }

    #[test]
    fn bridge_shape() {
        assert_eq!(bridge(0.3), 1.0);
        assert_eq!(bridge(1.0), 1.0);
        assert_eq!(bridge(2.0), 0.0);
        assert_eq!(bridge(1.5), 0.5);
        assert_eq!(bridge_slope(1.0), 0.0);
        assert_eq!(bridge_slope(2.0), 0.0);
        // finite-difference check of the slope
        for &s in &[1.1, 1.37, 1.8] {
            let fd = (bridge(s + 1e-7) - bridge(s - 1e-7)) / 2e-7;
            assert!((fd - bridge_slope(s)).abs() < 1e-6);
        }
    }

    #[test]
    fn cutoff_keeps_inner_ball_and_kills_outside() {
        let raw = |x: &[f64]| x[0] * x[0] / 600.0 + 0.1 * x[0];
        let f = cutoff(raw, 6.0);
        for v in [-6.0, -1.3, 0.0, 2.2, 6.0] {
            assert_eq!(f(&[v]).to_bits(), raw(&[v]).to_bits());
        }
        for v in [12.0, -12.5, 40.0] {
            assert_eq!(f(&[v]), 0.0);
        }
    }

    #[test]
    fn example_lipschitz_bound_exceeds_sampled_slopes() {
        let nl = ExampleNonlinearity::new(6.0).unwrap();
        let k = nl.fast_lipschitz();
        // peak of |d/ds(χ s²)| on the bridge sits near s = 1.72
        assert!(k > 0.02 && k < 0.03, "{k}");
        let f = |v: f64| {
            let mut o = [0.0];
            nl.fast(&[0.0], &[v], &mut o);
            o[0]
        };
        let mut max: f64 = 0.0;
        let n = 200_000;
        for i in 0..n {
            let v = -13.0 + 26.0 * i as f64 / n as f64;
            max = max.max((f(v + 1e-7) - f(v)).abs() / 1e-7);
        }
        assert!(max <= k, "{max} > {k}");
        assert!(max > 0.99 * k);
    }

    #[test]
    fn unknown_nonlinearity_is_rejected() {
        assert!(registered_nonlinearity("cubic", 1.0).is_err());
    }

    #[test]
    fn config_defaults_build_the_example() {
        let m = ModelConfig::default().build().unwrap();
        assert!(m.example().is_some());
        assert_eq!(
            m.constants().lipschitz,
            example_model(0.1, 6.0).unwrap().constants().lipschitz
        );
    }

    #[test]
    fn zero_scale_is_rejected() {
        let m = example_model(0.1, 6.0).unwrap();
        assert!(matches!(m.clone().with_eps(0.0), Err(Error::Config(_))));
        assert!(m.with_param(2.0).is_err());
    }
}
