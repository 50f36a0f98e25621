//! Versioned JSON container for trained models.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Result, TrainConfig, TrainError};
use crate::data::Scaler;
use crate::model::{BaselineKind, BaselineNet, ModelSpec, ResLstm};
use crate::scalar::Scalar;
use crate::tensor::{AdamConfig, AdamState, InitScheme, ParamEntry, ParamKind, ParamStore, Tensor};

/// Bumped whenever the layout below changes incompatibly.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelKind {
    ResLstm { spec: ModelSpec },
    Baseline { kind: BaselineKind, stations: usize, n: usize },
}

impl ModelKind {
    pub fn stations(&self) -> usize {
        match self {
            ModelKind::ResLstm { spec } => spec.stations,
            ModelKind::Baseline { stations, .. } => *stations,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            ModelKind::ResLstm { spec } => spec.n,
            ModelKind::Baseline { n, .. } => *n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    /// How the tensor was initialized before training.
    pub init: InitScheme,
    /// Row-major values.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredAdam {
    pub config: AdamConfig,
    pub t: u64,
    /// First and second moments, indexed like `params`.
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelKind,
    /// Scalar type the model was trained in, `f32` or `f64`.
    pub scalar: String,
    pub seed: u64,
    pub tg_minutes: u32,
    /// Scaler fitted on the training days.
    pub scaler: Scaler,
    pub params: Vec<StoredParam>,
    pub adam: Option<StoredAdam>,
    pub train_config: Option<TrainConfig>,
    pub best_epoch: Option<usize>,
    pub best_val_mse: Option<f64>,
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

fn from_f64<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::from_f64_lossy(x)).collect()
}

impl Checkpoint {
    pub fn new<T: Scalar>(model: ModelKind, seed: u64, tg_minutes: u32, scaler: Scaler, store: &ParamStore<T>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            model,
            scalar: std::any::type_name::<T>().to_string(),
            seed,
            tg_minutes,
            scaler,
            params: store
                .entries()
                .iter()
                .map(|e| StoredParam {
                    name: e.name.clone(),
                    shape: e.value.shape().to_vec(),
                    kind: e.kind,
                    init: e.init,
                    values: e.value.to_f64_vec(),
                })
                .collect(),
            adam: None,
            train_config: None,
            best_epoch: None,
            best_val_mse: None,
        }
    }

    pub fn with_adam<T: Scalar>(mut self, adam: &AdamState<T>) -> Self {
        self.adam = Some(StoredAdam {
            config: adam.config,
            t: adam.t,
            m: adam.m.iter().map(|m| to_f64(m)).collect(),
            v: adam.v.iter().map(|v| to_f64(v)).collect(),
        });
        self
    }

    pub fn store<T: Scalar>(&self) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        for p in &self.params {
            let value = Tensor::from_f64(&p.shape, &p.values)
                .map_err(|e| TrainError::Checkpoint(format!("parameter `{}`: {e}", p.name)))?;
            store.push(ParamEntry {
                name: p.name.clone(),
                value,
                kind: p.kind,
                init: p.init,
            });
        }
        Ok(store)
    }

    /// Optimizer state to resume training from, if one was saved.
    pub fn adam_state<T: Scalar>(&self) -> Result<Option<AdamState<T>>> {
        let Some(a) = &self.adam else { return Ok(None) };
        let sizes: Vec<usize> = self.params.iter().map(|p| p.values.len()).collect();
        let fits = |mom: &[Vec<f64>]| mom.len() == sizes.len() && mom.iter().zip(&sizes).all(|(m, &n)| m.len() == n);
        if !fits(&a.m) || !fits(&a.v) {
            return Err(TrainError::Checkpoint("optimizer moments do not match parameter sizes".into()));
        }
        Ok(Some(AdamState {
            config: a.config,
            t: a.t,
            m: a.m.iter().map(|m| from_f64(m)).collect(),
            v: a.v.iter().map(|v| from_f64(v)).collect(),
        }))
    }

    pub fn reslstm<T: Scalar>(&self) -> Result<ResLstm<T>> {
        match &self.model {
            ModelKind::ResLstm { spec } => Ok(ResLstm::with_params(spec.clone(), self.store()?)?),
            other => Err(TrainError::Checkpoint(format!("expected a ResLSTM checkpoint, found {other:?}"))),
        }
    }

    pub fn baseline<T: Scalar>(&self) -> Result<BaselineNet<T>> {
        match &self.model {
            ModelKind::Baseline { kind, stations, n } => Ok(BaselineNet::with_params(*kind, *stations, *n, self.store()?)?),
            other => Err(TrainError::Checkpoint(format!("expected a baseline checkpoint, found {other:?}"))),
        }
    }

    /// Fails unless the model was trained for this station count, history
    /// length and granularity.
    pub fn check_compatible(&self, stations: usize, n: usize, tg_minutes: u32) -> Result<()> {
        let got = (self.model.stations(), self.model.n(), self.tg_minutes);
        if got != (stations, n, tg_minutes) {
            return Err(TrainError::Config(format!(
                "checkpoint is for {} stations, n = {}, {} min; data has {stations} stations, n = {n}, {tg_minutes} min",
                got.0, got.1, got.2
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let value: serde_json::Value = serde_json::from_reader(r)?;
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(CHECKPOINT_VERSION as u64) {
            return Err(TrainError::Checkpoint(format!(
                "{}: version {version:?}, this build reads version {CHECKPOINT_VERSION}",
                path.display()
            )));
        }
        Ok(serde_json::from_value(value)?)
    }
}
