//! Human/object disentangling set prediction for HOI detection.
//!
//! The crate is generic over the floating point type through [`Scalar`];
//! the aliases below fix it to `f64`, which every file format and the CLI use.

pub mod attention;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Graph = tensor::Graph<f64>;
pub type GradientMap = tensor::GradientMap<f64>;
pub type ParamSet = params::ParamSet<f64>;
pub type HodnParams = model::HodnParams<f64>;
pub type HoiPrediction = model::HoiPrediction<f64>;
pub type SceneSample = data::SceneSample<f64>;
pub type GroundTruthTriplet = training::GroundTruthTriplet<f64>;
pub type LossWeights = training::LossWeights<f64>;
pub type LossBreakdown = training::LossBreakdown<f64>;
pub type OptimizerState = training::OptimizerState<f64>;
pub type ScoredTriplet = evaluation::ScoredTriplet<f64>;
pub type GtInstance = evaluation::GtInstance<f64>;
