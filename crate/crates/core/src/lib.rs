//! Metro passenger-flow forecasting with a residual-LSTM network: tape-based
//! autodiff, station graph, data pipeline, model, training and evaluation.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common case.

pub mod data;
pub mod graph;
pub mod gradsuite;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape64 = tensor::Tape<f64>;
pub type ParamStore64 = tensor::ParamStore<f64>;
pub type ResLstm64 = model::ResLstm<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape32 = tensor::Tape<f32>;
pub type ResLstm32 = model::ResLstm<f32>;
