//! Semi-supervised road updating from imagery and historical maps.

pub mod dataio;
pub mod error;
pub mod infer;
pub mod metrics;
pub mod network;
pub mod objectives;
pub mod postprocess;
pub mod seed;
pub mod trainer;

mod raster;

pub use error::{Error, Result};
pub use srunet_tensor::{Scalar, Tensor32, Tensor64, Var32, Var64};

pub type ParamStore32 = network::ParamStore<f32>;
pub type ParamStore64 = network::ParamStore<f64>;
pub type ModelState32 = trainer::ModelState<f32>;
pub type ModelState64 = trainer::ModelState<f64>;
pub type Checkpoint32 = network::Checkpoint<f32>;
pub type Checkpoint64 = network::Checkpoint<f64>;
