use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{compute_metrics, Metrics, Result};
use crate::data::{FlowCube, Instant, PreparedData, Scaler};
use crate::model::{bind, Ctx, Forecaster};
use crate::scalar::Scalar;
use crate::tensor::Tape;

/// Test-period predictions and errors on the count scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub stations: usize,
    pub instants: Vec<Instant>,
    /// Batch-major `[instant][station]`.
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
}

impl Evaluation {
    /// Clips predictions at zero and scores them against the raw targets.
    pub fn from_counts(data: &PreparedData, instants: &[Instant], mut predicted: Vec<f64>) -> Result<Self> {
        for p in &mut predicted {
            *p = p.max(0.0);
        }
        let actual = data.raw_targets(instants);
        Ok(Evaluation {
            metrics: compute_metrics(&actual, &predicted)?,
            stations: data.stations,
            instants: instants.to_vec(),
            actual,
            predicted,
        })
    }

    /// `(actual, predicted)` series of one station in instant order.
    pub fn station_series(&self, station: usize) -> (Vec<f64>, Vec<f64>) {
        let pick = |v: &[f64]| v.iter().skip(station).step_by(self.stations).copied().collect();
        (pick(&self.actual), pick(&self.predicted))
    }
}

/// Eval-mode forward pass mapped back to counts (not yet clipped).
pub fn predict_counts<T: Scalar, M: Forecaster<T>>(model: &M, data: &PreparedData, instants: &[Instant], batch_size: usize) -> Result<Vec<f64>> {
    let scale = *data.scaler.channel(Scaler::INFLOW)?;
    let mut out = Vec::with_capacity(instants.len() * data.stations);
    for chunk in instants.chunks(batch_size.max(1)) {
        let batch = data.batch::<T>(chunk, model.exo_rows())?;
        let mut tape = Tape::new();
        let vars = bind(&mut tape, model.params());
        let mut ctx = Ctx::new(&mut tape, &vars, model.params(), false);
        let pred = model.predict(&mut ctx, &batch)?;
        out.extend(tape.value(pred).data().iter().map(|v| scale.invert(v.to_f64_lossy())));
    }
    Ok(out)
}

pub fn evaluate<T: Scalar, M: Forecaster<T>>(model: &M, data: &PreparedData, instants: &[Instant]) -> Result<Evaluation> {
    let predicted = predict_counts(model, data, instants, 64)?;
    Evaluation::from_counts(data, instants, predicted)
}

/// One `timestamp,actual,predicted` CSV per station, named `station_<id>.csv`.
pub fn write_station_series(dir: &Path, eval: &Evaluation, cube: &FlowCube, station_ids: &[String]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (st, id) in station_ids.iter().enumerate() {
        let mut w = csv::Writer::from_path(dir.join(format!("station_{id}.csv"))).map_err(crate::data::DataError::from)?;
        w.write_record(["timestamp", "actual", "predicted"]).map_err(crate::data::DataError::from)?;
        let (actual, predicted) = eval.station_series(st);
        for ((inst, a), p) in eval.instants.iter().zip(actual).zip(predicted) {
            let ts = cube.timestamp(cube.column(inst.day, inst.slot)).format("%Y-%m-%dT%H:%M:%S").to_string();
            w.write_record([ts, a.to_string(), p.to_string()]).map_err(crate::data::DataError::from)?;
        }
        w.flush()?;
    }
    Ok(())
}
