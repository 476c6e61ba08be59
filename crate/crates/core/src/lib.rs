//! Random slow manifolds of slow-fast stochastic systems, their Wong-Zakai
//! approximation by integrated Ornstein-Uhlenbeck noise, and reduced-system
//! parameter estimation.

// `!(x > 0.0)` style checks are meant to reject NaN along with the range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimate;
pub mod grid;
pub mod integrate;
pub mod io;
pub mod linalg;
pub mod manifold;
pub mod model;
pub mod noise;
pub mod stats;
pub mod tracking;

pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use model::{SlowFastModel, check_assumptions, example_model};
pub use noise::{DriverKind, NoiseBundle, WienerShift, stationary_driver, wiener_shift};
