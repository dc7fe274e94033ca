//! Saliency label decoupling, supervision losses, evaluation metrics,
//! error-versus-distance diagnostics, and a toy two-branch interaction
//! network trained on synthetic shapes.

pub mod cli;
pub mod decouple;
pub mod distance;
pub mod error;
pub mod gray;
pub mod io;
pub mod losses;
pub mod error_distance;
pub mod metrics;
pub mod net;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type GrayMapF32 = gray::GrayMap<f32>;
pub type GrayMapF64 = gray::GrayMap<f64>;
pub type DecoupledLabelsF32 = decouple::DecoupledLabels<f32>;
pub type DecoupledLabelsF64 = decouple::DecoupledLabels<f64>;
pub type MetricReportF64 = metrics::MetricReport<f64>;
pub type ErrorDistanceReportF64 = error_distance::ErrorDistanceReport<f64>;
pub type Tensor4F32 = net::tensor::Tensor4<f32>;
pub type Tensor4F64 = net::tensor::Tensor4<f64>;
pub type ToyFinModelF32 = net::model::ToyFinModel<f32>;
pub type ToyFinModelF64 = net::model::ToyFinModel<f64>;
