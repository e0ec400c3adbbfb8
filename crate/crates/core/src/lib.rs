//! Neural support vector machines: kernel SVMs trained jointly with a
//! parametric feature map, using Pegasos-style stochastic subgradient steps.

pub mod data;
pub mod error;
pub mod feature_maps;
pub mod kernels;
pub mod models;
pub mod objectives;
pub mod optimizer;
pub mod presets;
pub mod rng;
pub mod training;

pub use error::{NsvmError, Result};
