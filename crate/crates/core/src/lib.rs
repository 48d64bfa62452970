// Negated comparisons are deliberate: NaN must fail every range check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod coincidence;
pub mod detector;
pub mod error;
pub mod events;
pub mod experiment;
pub mod fringe;
pub mod io;
pub mod lut;
pub mod recovery;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type DetectorParamsF64 = recovery::DetectorParams<f64>;
pub type DetectorParamsF32 = recovery::DetectorParams<f32>;
pub type VisibilityFitF64 = fringe::VisibilityFit<f64>;
pub type VisibilityFitF32 = fringe::VisibilityFit<f32>;
pub type RateSampleF64 = fringe::RateSample<f64>;
