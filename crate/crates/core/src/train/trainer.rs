use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::data::{Instant, PreparedData};
use crate::model::{bind, BnUpdate, Ctx, Forecaster};
use crate::scalar::Scalar;
use crate::tensor::{AdamConfig, AdamState, ParamStore, Tape, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_max: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub val_fraction: f64,
    /// Stop after this many epochs without a new best validation MSE.
    pub patience: usize,
    pub seed: u64,
    /// Stop early once the epoch training MSE falls to this fraction of the
    /// first epoch's.
    #[serde(default)]
    pub target_train_ratio: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_max: 200,
            batch_size: 32,
            lr: 1e-3,
            val_fraction: 0.2,
            patience: 20,
            seed: 0,
            target_train_ratio: None,
        }
    }
}

impl TrainConfig {
    /// Default learning rate for the baseline networks.
    pub const BASELINE_LR: f64 = 1e-4;

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs_max == 0 || self.patience == 0 {
            return Err(TrainError::Config("epochs, batch size and patience must be positive".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(TrainError::Config(format!("validation fraction {} must lie in (0, 1)", self.val_fraction)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub history: Vec<LossRecord>,
    /// 1-based epoch of the restored parameters.
    pub best_epoch: usize,
    pub best_val_mse: f64,
    /// Optimizer state at the best epoch.
    pub adam: AdamState<T>,
}

fn step_batch<T: Scalar, M: Forecaster<T>>(
    model: &M,
    data: &PreparedData,
    instants: &[Instant],
    train: bool,
) -> Result<(f64, Vec<Option<Tensor<T>>>, Vec<BnUpdate<T>>)> {
    let batch = data.batch::<T>(instants, model.exo_rows())?;
    let mut tape = Tape::new();
    let store = model.params();
    let vars = bind(&mut tape, store);
    let mut ctx = Ctx::new(&mut tape, &vars, store, train);
    let pred = model.predict(&mut ctx, &batch)?;
    let updates = std::mem::take(&mut ctx.bn_updates);
    let target = tape.constant(batch.target);
    let loss = tape.mse_loss(pred, target)?;
    let value = tape.value(loss).data()[0].to_f64_lossy();
    if !train {
        return Ok((value, Vec::new(), updates));
    }
    let mut grads = tape.backward(loss)?;
    let per_param = vars.iter().map(|&v| grads.take(v)).collect();
    Ok((value, per_param, updates))
}

/// Mean squared error over `instants` in evaluation mode.
pub(crate) fn mean_loss<T: Scalar, M: Forecaster<T>>(model: &M, data: &PreparedData, instants: &[Instant], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in instants.chunks(batch_size) {
        let (l, _, _) = step_batch(model, data, chunk, false)?;
        total += l * chunk.len() as f64;
    }
    Ok(total / instants.len() as f64)
}

/// Mini-batch Adam on MSE with early stopping on validation MSE. The model
/// ends up holding the parameters of the best validation epoch.
pub fn train<T: Scalar, M: Forecaster<T>>(
    model: &mut M,
    data: &PreparedData,
    train_set: &[Instant],
    validation: &[Instant],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(TrainError::Config("training and validation sets must be non-empty".into()));
    }
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order = train_set.to_vec();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ParamStore<T>, AdamState<T>)> = None;
    let mut since_best = 0;
    for epoch in 1..=config.epochs_max {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let (loss, grads, updates) = step_batch(model, data, chunk, true)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    reason: format!("training loss is {loss}"),
                });
            }
            adam.step(model.params_mut(), &grads).map_err(|e| match e {
                TensorError::NonFiniteGradient(p) => TrainError::NonFinite {
                    epoch,
                    reason: format!("non-finite gradient for `{p}`"),
                },
                other => other.into(),
            })?;
            for u in &updates {
                u.apply(model.params_mut());
            }
            total += loss * chunk.len() as f64;
        }
        let train_mse = total / order.len() as f64;
        let val_mse = mean_loss(model, data, validation, config.batch_size)?;
        if !val_mse.is_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                reason: format!("validation loss is {val_mse}"),
            });
        }
        history.push(LossRecord { epoch, train_mse, val_mse });
        log::debug!("epoch {epoch}: train {train_mse:.6} val {val_mse:.6}");
        if best.as_ref().is_none_or(|(_, b, _, _)| val_mse < *b) {
            best = Some((epoch, val_mse, model.params().clone(), adam.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                log::info!("early stop at epoch {epoch}, best epoch {}", best.as_ref().map_or(0, |b| b.0));
                break;
            }
        }
        if let Some(ratio) = config.target_train_ratio {
            if train_mse <= ratio * history[0].train_mse {
                break;
            }
        }
    }
    let (best_epoch, best_val_mse, store, adam) = best.expect("at least one epoch ran");
    *model.params_mut() = store;
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_mse,
        adam,
    })
}
