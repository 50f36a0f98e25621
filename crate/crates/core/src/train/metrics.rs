use serde::{Deserialize, Serialize};

use super::{Result, TrainError};

/// Error summary on the original count scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    /// `Σ|y − ŷ| / Σy`
    pub wmape: f64,
}

fn check(actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.len() != predicted.len() || actual.is_empty() {
        return Err(TrainError::Config(format!(
            "metrics need equal non-empty series, got {} actual and {} predicted",
            actual.len(),
            predicted.len()
        )));
    }
    Ok(())
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check(actual, predicted)?;
    let sq: f64 = actual.iter().zip(predicted).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok((sq / actual.len() as f64).sqrt())
}

pub fn mae(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check(actual, predicted)?;
    let abs: f64 = actual.iter().zip(predicted).map(|(y, p)| (y - p).abs()).sum();
    Ok(abs / actual.len() as f64)
}

/// Each error weighted by its share of total flow, which reduces to
/// `Σ|y − ŷ| / Σy`. Undefined when total flow is zero.
pub fn wmape(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check(actual, predicted)?;
    let total: f64 = actual.iter().sum();
    if total <= 0.0 {
        return Err(TrainError::UndefinedMetric("wmape of a series with zero total flow".into()));
    }
    let abs: f64 = actual.iter().zip(predicted).map(|(y, p)| (y - p).abs()).sum();
    Ok(abs / total)
}

pub fn compute_metrics(actual: &[f64], predicted: &[f64]) -> Result<Metrics> {
    Ok(Metrics {
        rmse: rmse(actual, predicted)?,
        mae: mae(actual, predicted)?,
        wmape: wmape(actual, predicted)?,
    })
}
