//! Numerical laboratory for mean-field games with absorption.
//!
//! The solvers are generic over the floating-point type (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the command-line tool uses.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod measures;
pub mod mfg;
pub mod model;
pub mod particle;
pub mod pde;
pub mod presets;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Model = model::ModelSpec<f64>;
pub type Schedule = model::TruncationSchedule<f64>;
pub type Grids = grid::Grids<f64>;
pub type Flow = measures::SubProbFlow<f64>;
pub type Record = measures::EmpiricalRecord<f64>;
pub type Policy = pde::FeedbackPolicy<f64>;
pub type Value = pde::ValueField<f64>;
pub type Report = mfg::FixedPointReport<f64>;
pub type Config = particle::SimConfig<f64>;
