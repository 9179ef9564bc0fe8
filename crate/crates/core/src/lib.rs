//! Memory-augmented concept-graph stock trend forecasting.
//!
//! The pipeline: a two-layer GRU encodes each stock's 60-day lookback, a
//! predefined-concept module and a hidden-concept module extract shared
//! information from stock/concept graphs, each refined by a global memory
//! bank, and an individual module keeps the residual. A shared forecast
//! layer and a linear output head turn the three features into a predicted
//! normalized change rate.

pub mod concepts;
pub mod data;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod params;

pub use error::{MtmdError, Result};
pub use numerics::Tensor;
pub use params::ParameterSet;
