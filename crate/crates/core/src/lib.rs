//! Private and fair federated learning with χ²-divergence regularization.

pub mod dataio;
pub mod error;
pub mod fairness;
pub mod federation;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod privacy;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::{Numeric, Scalar};

pub type Dataset = dataio::TabularDataset<f64>;
pub type Model = model::ModelParams<f64>;
pub type Dual = fairness::DualMatrix<f64>;
