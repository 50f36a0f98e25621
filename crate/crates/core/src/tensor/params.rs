use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// State carried alongside the weights (batch-norm running statistics).
    Buffer,
}

/// How a parameter's initial values were drawn. Stored with checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum InitScheme {
    /// `U(-1/√fan_in, 1/√fan_in)`
    FanInUniform { fan_in: usize },
    Uniform { low: f64, high: f64 },
    Constant { value: f64 },
}

impl InitScheme {
    pub const ZEROS: InitScheme = InitScheme::Constant { value: 0.0 };
    pub const ONES: InitScheme = InitScheme::Constant { value: 1.0 };
    /// Small uniform range used for recurrent weights.
    pub const RECURRENT: InitScheme = InitScheme::Uniform { low: -0.08, high: 0.08 };

    pub fn sample<T: Scalar, R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<T> {
        match *self {
            InitScheme::FanInUniform { fan_in } => {
                let lim = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| T::from_f64_lossy(rng.random_range(-lim..lim))).collect()
            }
            InitScheme::Uniform { low, high } => {
                (0..n).map(|_| T::from_f64_lossy(rng.random_range(low..high))).collect()
            }
            InitScheme::Constant { value } => vec![T::from_f64_lossy(value); n],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub kind: ParamKind,
    pub init: InitScheme,
}

/// Flat, ordered collection of named model tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        kind: ParamKind,
        init: InitScheme,
        rng: &mut R,
    ) -> ParamId {
        let n = shape.iter().product();
        let value = Tensor::new(shape.to_vec(), init.sample(n, rng)).expect("positive parameter shape");
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
            kind,
            init,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Appends an entry with a known value, e.g. when restoring a checkpoint.
    pub fn push(&mut self, entry: ParamEntry<T>) -> ParamId {
        self.entries.push(entry);
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Number of scalar values the optimizer updates.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.value.numel())
            .sum()
    }
}
