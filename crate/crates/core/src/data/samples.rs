use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{DataError, ExogenousSeries, FlowCube, Result, Scaler};
use crate::graph::MetroGraph;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Calendar offset of the daily pattern channel, in workdays.
pub const DAILY_LAG: usize = 1;
/// Calendar offset of the weekly pattern channel, in workdays.
pub const WEEKLY_LAG: usize = 5;

/// A prediction target: slot `slot` of service day `day`. The history window
/// is slots `slot - n .. slot` of the same day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Instant {
    pub day: usize,
    pub slot: usize,
}

/// Targets on `days` with a full same-day window and weekly history.
/// Windows that would cross the 05:00 service start are dropped.
pub fn eligible_instants(days: Range<usize>, slots_per_day: usize, n: usize) -> Vec<Instant> {
    let out: Vec<Instant> = days
        .filter(|&d| d >= WEEKLY_LAG)
        .flat_map(|day| (n..slots_per_day).map(move |slot| Instant { day, slot }))
        .collect();
    if out.is_empty() {
        log::warn!("no eligible prediction instants: need {WEEKLY_LAG} earlier workdays and {n} same-day slots");
    }
    out
}

/// Scaled series ready to be windowed into batches.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub stations: usize,
    pub columns: usize,
    pub slots_per_day: usize,
    pub n: usize,
    /// Scaled inflow, `stations × columns`.
    pub inflow: Vec<f64>,
    pub outflow: Vec<f64>,
    /// Graph-transformed scaled inflow. The operator acts on station rows
    /// column by column, so transforming the whole series then windowing is
    /// the same as transforming each window.
    pub graph_inflow: Vec<f64>,
    /// Scaled indicators, `11 × columns`.
    pub exo: Vec<f64>,
    /// Unscaled inflow counts.
    pub raw_inflow: Vec<f64>,
    pub scaler: Scaler,
}

/// Branch inputs and targets for a set of instants.
#[derive(Debug, Clone)]
pub struct SampleBatch<T> {
    /// `[B, 3, s, n]` real-time, daily, weekly inflow windows
    pub i1: Tensor<T>,
    /// `[B, 3, s, n]` outflow windows
    pub i2: Tensor<T>,
    /// `[B, s, n]` graph-transformed real-time inflow
    pub i3: Tensor<T>,
    /// `[B, e, n]` indicator windows
    pub i4: Tensor<T>,
    /// `[B, s]` scaled next-slot inflow
    pub target: Tensor<T>,
    pub instants: Vec<Instant>,
}

impl<T> SampleBatch<T> {
    pub fn len(&self) -> usize {
        self.instants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instants.is_empty()
    }
}

impl PreparedData {
    pub fn new(cube: &FlowCube, exo: &ExogenousSeries, graph: &MetroGraph, scaler: Scaler, n: usize) -> Result<Self> {
        if graph.station_count() != cube.stations() {
            return Err(DataError::Length {
                op: "prepare (stations)",
                expected: graph.station_count(),
                got: cube.stations(),
            });
        }
        if exo.columns() != cube.columns() {
            return Err(DataError::Length {
                op: "prepare (columns)",
                expected: cube.columns(),
                got: exo.columns(),
            });
        }
        if n == 0 || n >= cube.slots_per_day() {
            return Err(DataError::Config(format!("history length {n} must be in 1..{}", cube.slots_per_day())));
        }
        let cols = cube.columns();
        let scale = |m: &[u32], ch: usize| -> Result<Vec<f64>> {
            let c = scaler.channel(ch)?;
            Ok(m.iter().map(|&v| c.apply(v as f64)).collect())
        };
        let inflow = scale(cube.inflow(), Scaler::INFLOW)?;
        let outflow = scale(cube.outflow(), Scaler::OUTFLOW)?;
        let graph_inflow = graph.transform_signal(&inflow, cols);
        let mut exo_scaled = Vec::with_capacity(exo.values().len());
        for r in 0..exo.rows() {
            let c = scaler.channel(Scaler::exo_channel(r))?;
            exo_scaled.extend(exo.row(r).iter().map(|&v| c.apply(v)));
        }
        Ok(PreparedData {
            stations: cube.stations(),
            columns: cols,
            slots_per_day: cube.slots_per_day(),
            n,
            inflow,
            outflow,
            graph_inflow,
            exo: exo_scaled,
            raw_inflow: cube.inflow().iter().map(|&v| v as f64).collect(),
            scaler,
        })
    }

    /// Column of history step `k` (0 oldest) of `inst`, shifted back `lag` workdays.
    pub fn window_column(&self, inst: Instant, k: usize, lag: usize) -> usize {
        (inst.day - lag) * self.slots_per_day + inst.slot - self.n + k
    }

    pub fn target_column(&self, inst: Instant) -> usize {
        inst.day * self.slots_per_day + inst.slot
    }

    /// Builds the branch inputs for `instants`, using the first `exo_rows`
    /// indicators (11, or 4 for weather only).
    pub fn batch<T: Scalar>(&self, instants: &[Instant], exo_rows: usize) -> Result<SampleBatch<T>> {
        if instants.is_empty() {
            return Err(DataError::Config("cannot build an empty batch".into()));
        }
        let (s, n, b, cols) = (self.stations, self.n, instants.len(), self.columns);
        let e = exo_rows;
        let t = |v: f64| T::from_f64_lossy(v);
        let mut i1 = Vec::with_capacity(b * 3 * s * n);
        let mut i2 = Vec::with_capacity(b * 3 * s * n);
        let mut i3 = Vec::with_capacity(b * s * n);
        let mut i4 = Vec::with_capacity(b * e * n);
        let mut target = Vec::with_capacity(b * s);
        for &inst in instants {
            if inst.day < super::samples::WEEKLY_LAG || inst.slot < n || inst.slot >= self.slots_per_day {
                return Err(DataError::Config(format!("instant {inst:?} lacks a full history window")));
            }
            for (src, dst) in [(&self.inflow, &mut i1), (&self.outflow, &mut i2)] {
                for lag in [0, DAILY_LAG, WEEKLY_LAG] {
                    for st in 0..s {
                        for k in 0..n {
                            dst.push(t(src[st * cols + self.window_column(inst, k, lag)]));
                        }
                    }
                }
            }
            for st in 0..s {
                for k in 0..n {
                    i3.push(t(self.graph_inflow[st * cols + self.window_column(inst, k, 0)]));
                }
            }
            for r in 0..e {
                for k in 0..n {
                    i4.push(t(self.exo[r * cols + self.window_column(inst, k, 0)]));
                }
            }
            let tc = self.target_column(inst);
            target.extend((0..s).map(|st| t(self.inflow[st * cols + tc])));
        }
        let tensor = |shape: &[usize], v: Vec<T>| Tensor::new(shape.to_vec(), v).expect("batch shapes are consistent");
        Ok(SampleBatch {
            i1: tensor(&[b, 3, s, n], i1),
            i2: tensor(&[b, 3, s, n], i2),
            i3: tensor(&[b, s, n], i3),
            i4: tensor(&[b, e, n], i4),
            target: tensor(&[b, s], target),
            instants: instants.to_vec(),
        })
    }

    /// Unscaled next-slot inflow, `[B·s]` in batch order.
    pub fn raw_targets(&self, instants: &[Instant]) -> Vec<f64> {
        instants
            .iter()
            .flat_map(|&inst| {
                let tc = self.target_column(inst);
                (0..self.stations).map(move |st| self.raw_inflow[st * self.columns + tc])
            })
            .collect()
    }
}
