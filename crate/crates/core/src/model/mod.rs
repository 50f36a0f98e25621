//! The four-branch forecaster, its building blocks, and baseline networks.

mod baselines;
mod layers;
mod reslstm;
mod spec;

pub use baselines::{BaselineKind, BaselineNet, HistoricalAverage, BASELINE_HIDDEN, CNN_FILTERS};
pub use layers::{
    attention, bind, fuse, run_lstm, AttentionParams, BnUpdate, Ctx, ExoBranch, FlowBranch, LstmLayer, ResidualBlock,
};
pub(crate) use layers::{trainable, DenseIds};
pub use reslstm::ResLstm;
pub use spec::{
    exo_branch_count, flow_branch_count, lstm_count, make_variant, residual_block_count, Branch, BranchToggles,
    ModelSpec, Variant,
};

use thiserror::Error;

use crate::data::{DataError, SampleBatch};
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, TensorError, Var};

/// Fails unless `got` has the same tensor names, shapes and kinds as
/// `expected`, in the same order.
pub(crate) fn check_layout<T: Scalar>(expected: &ParamStore<T>, got: &ParamStore<T>) -> Result<()> {
    if expected.len() != got.len() {
        return Err(ModelError::Config(format!(
            "parameter count mismatch: model has {} tensors, checkpoint has {}",
            expected.len(),
            got.len()
        )));
    }
    for (e, g) in expected.entries().iter().zip(got.entries()) {
        if e.name != g.name || e.value.shape() != g.value.shape() || e.kind != g.kind {
            return Err(ModelError::Config(format!(
                "parameter `{}` {:?} does not match stored `{}` {:?}",
                e.name,
                e.value.shape(),
                g.name,
                g.value.shape()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// A trainable network mapping a sample batch to next-slot inflow `[B, s]`.
pub trait Forecaster<T: Scalar> {
    fn params(&self) -> &ParamStore<T>;
    fn params_mut(&mut self) -> &mut ParamStore<T>;
    /// Indicator rows the network reads from `SampleBatch::i4`.
    fn exo_rows(&self) -> usize;
    fn predict(&self, ctx: &mut Ctx<'_, T>, batch: &SampleBatch<T>) -> Result<Var>;
}
