//! Uniform time grids.

use serde::Serialize;

use crate::error::{Error, Result};

/// Relative slack used when deciding whether a time falls on a node.
const NODE_SLACK: f64 = 1e-6;

/// A uniform grid `t_start, t_start + dt, ..., t_end`.
///
/// When time 0 falls on a node the grid is anchored there: node times are
/// computed as integer multiples of `dt`, so shifted grids compose exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    t_start: f64,
    dt: f64,
    n_steps: usize,
    #[serde(skip)]
    zero: Option<usize>,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, dt: f64) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite() && dt.is_finite()) {
            return Err(Error::Config("grid bounds and step must be finite".into()));
        }
        if dt <= 0.0 {
            return Err(Error::Config(format!(
                "grid step must be positive, got {dt}"
            )));
        }
        if t_end <= t_start {
            return Err(Error::Config(format!(
                "grid end {t_end} must exceed start {t_start}"
            )));
        }
        let span = t_end - t_start;
        let n = (span / dt).round();
        if n < 1.0 || ((n * dt - span) / span).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "span {span} is not an integer number of steps of {dt}"
            )));
        }
        let n_steps = n as usize;
        let k = (-t_start / dt).round();
        if k >= 0.0 && k <= n && (-t_start / dt - k).abs() <= NODE_SLACK {
            return Self::anchored(k as usize, n_steps, dt);
        }
        Ok(Self {
            t_start,
            dt,
            n_steps,
            zero: None,
        })
    }

    /// Grid with `n_steps` steps whose node `zero_index` sits at time 0.
    pub fn anchored(zero_index: usize, n_steps: usize, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Config(format!(
                "grid step must be positive, got {dt}"
            )));
        }
        if n_steps == 0 || zero_index > n_steps {
            return Err(Error::Config(format!(
                "zero node {zero_index} outside a grid of {n_steps} steps"
            )));
        }
        Ok(Self {
            t_start: -(zero_index as f64) * dt,
            dt,
            n_steps,
            zero: Some(zero_index),
        })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.n_steps)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn time(&self, i: usize) -> f64 {
        match self.zero {
            Some(k) => (i as f64 - k as f64) * self.dt,
            None => self.t_start + i as f64 * self.dt,
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.time(i)).collect()
    }

    pub fn zero_node(&self) -> Option<usize> {
        self.zero
    }

    pub fn require_zero_node(&self) -> Result<usize> {
        self.zero.ok_or_else(|| {
            Error::Config(format!(
                "grid [{}, {}] with step {} has no node at time 0",
                self.t_start,
                self.t_end(),
                self.dt
            ))
        })
    }

    /// Index of the node at time `t`.
    pub fn node(&self, t: f64) -> Result<usize> {
        let x = (t - self.t_start) / self.dt;
        let i = x.round();
        if !t.is_finite() || (x - i).abs() > NODE_SLACK {
            return Err(Error::Range(format!(
                "time {t} is not on the grid (step {})",
                self.dt
            )));
        }
        if i < 0.0 || i > self.n_steps as f64 {
            return Err(Error::Range(format!(
                "time {t} outside grid [{}, {}]",
                self.t_start,
                self.t_end()
            )));
        }
        Ok(i as usize)
    }

    /// Number of whole steps in a duration `t`, which must be a multiple of `dt`.
    pub fn steps_in(&self, t: f64) -> Result<i64> {
        let x = t / self.dt;
        let j = x.round();
        if !t.is_finite() || (x - j).abs() > NODE_SLACK {
            return Err(Error::Range(format!(
                "duration {t} is not a multiple of the step {}",
                self.dt
            )));
        }
        Ok(j as i64)
    }

    /// The same nodes relabelled so that the node at time `t` becomes time 0.
    pub fn shifted(&self, t: f64) -> Result<Self> {
        let k = self.require_zero_node()? as i64 + self.steps_in(t)?;
        if k < 0 || k > self.n_steps as i64 {
            return Err(Error::Range(format!(
                "shift by {t} leaves the grid [{}, {}]",
                self.t_start,
                self.t_end()
            )));
        }
        Self::anchored(k as usize, self.n_steps, self.dt)
    }

    /// Sub-grid made of nodes `from..=to`.
    pub fn window(&self, from: usize, to: usize) -> Result<Self> {
        if from >= to || to > self.n_steps {
            return Err(Error::Range(format!(
                "window {from}..={to} invalid for a grid of {} steps",
                self.n_steps
            )));
        }
        match self.zero {
            Some(k) if (from..=to).contains(&k) => Self::anchored(k - from, to - from, self.dt),
            _ => Ok(Self {
                t_start: self.time(from),
                dt: self.dt,
                n_steps: to - from,
                zero: None,
            }),
        }
    }

    /// Grid with every `factor`-th node.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.n_steps.is_multiple_of(factor) {
            return Err(Error::Config(format!(
                "cannot coarsen {} steps by a factor {factor}",
                self.n_steps
            )));
        }
        let dt = self.dt * factor as f64;
        match self.zero {
            Some(k) if k % factor == 0 => Self::anchored(k / factor, self.n_steps / factor, dt),
            Some(_) => Err(Error::Config(
                "coarsening would move the zero node off the grid".into(),
            )),
            None => Ok(Self {
                t_start: self.t_start,
                dt,
                n_steps: self.n_steps / factor,
                zero: None,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors_when_zero_is_a_node() {
        let g = TimeGrid::new(-1.0, 1.0, 1e-3).unwrap();
        assert_eq!(g.n_steps(), 2000);
        assert_eq!(g.zero_node(), Some(1000));
        assert_eq!(g.time(1000), 0.0);
        assert_eq!(g.node(0.25).unwrap(), 1250);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TimeGrid::new(0.0, 1.0, 0.0).is_err());
        assert!(TimeGrid::new(1.0, 0.0, 0.1).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0.3).is_err());
        assert!(
            TimeGrid::new(0.05, 1.05, 0.1)
                .unwrap()
                .zero_node()
                .is_none()
        );
    }

    #[test]
    fn shift_composes_exactly() {
        let g = TimeGrid::new(-2.0, 2.0, 0.01).unwrap();
        let a = g.shifted(0.3).unwrap().shifted(0.5).unwrap();
        let b = g.shifted(0.8).unwrap();
        assert_eq!(a, b);
        assert!(g.shifted(2.5).is_err());
        assert!(g.shifted(0.005).is_err());
    }

    #[test]
    fn window_keeps_zero_when_inside() {
        let g = TimeGrid::new(-1.0, 1.0, 0.1).unwrap();
        let w = g.window(5, 15).unwrap();
        assert_eq!(w.zero_node(), Some(5));
        let w2 = g.window(12, 20).unwrap();
        assert!(w2.zero_node().is_none());
        assert!((w2.t_start() - 0.2).abs() < 1e-15);
    }
}
