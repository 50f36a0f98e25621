use super::{split_days, DaySplit, Result, TrainError};
use crate::data::{eligible_instants, ExogenousSeries, FlowCube, Instant, PreparedData, Scaler};
use crate::graph::MetroGraph;

/// Scaled series plus the chronological train, validation and test instants.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub data: PreparedData,
    pub split: DaySplit,
    pub train: Vec<Instant>,
    pub validation: Vec<Instant>,
    pub test: Vec<Instant>,
    pub tg_minutes: u32,
    pub cube: FlowCube,
}

impl Dataset {
    /// Splits by day, fits the scaler on training days only and enumerates
    /// eligible instants in each part.
    pub fn new(cube: &FlowCube, exo: &ExogenousSeries, graph: &MetroGraph, n: usize, val_fraction: f64) -> Result<Self> {
        Self::build(cube, exo, graph, n, val_fraction, None)
    }

    /// Like [`Dataset::new`] but reuses a scaler saved with a trained model.
    pub fn with_scaler(
        cube: &FlowCube,
        exo: &ExogenousSeries,
        graph: &MetroGraph,
        n: usize,
        val_fraction: f64,
        scaler: Scaler,
    ) -> Result<Self> {
        Self::build(cube, exo, graph, n, val_fraction, Some(scaler))
    }

    fn build(
        cube: &FlowCube,
        exo: &ExogenousSeries,
        graph: &MetroGraph,
        n: usize,
        val_fraction: f64,
        scaler: Option<Scaler>,
    ) -> Result<Self> {
        let split = split_days(cube.calendar().len(), val_fraction)?;
        let spd = cube.slots_per_day();
        let scaler = match scaler {
            Some(s) => s,
            None => Scaler::fit(cube, exo, 0..split.train.end * spd)?,
        };
        let data = PreparedData::new(cube, exo, graph, scaler, n)?;
        let train = eligible_instants(split.train.clone(), spd, n);
        let validation = eligible_instants(split.validation.clone(), spd, n);
        let test = eligible_instants(split.test.clone(), spd, n);
        if train.is_empty() || validation.is_empty() || test.is_empty() {
            return Err(TrainError::Config(format!(
                "split {split:?} leaves {} train, {} validation and {} test instants; more days are needed",
                train.len(),
                validation.len(),
                test.len()
            )));
        }
        Ok(Dataset {
            data,
            split,
            train,
            validation,
            test,
            tg_minutes: cube.tg_minutes(),
            cube: cube.clone(),
        })
    }

    pub fn stations(&self) -> usize {
        self.data.stations
    }
}
