use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{DataError, ExogenousSeries, FlowCube, Result};

/// Min–max map of one channel onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelScale {
    pub min: f64,
    pub max: f64,
    /// Set when the fitted range was empty; such channels map to 0.
    pub constant: bool,
}

impl ChannelScale {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() || !max.is_finite() {
            return Err(DataError::Config("cannot fit a scaler on no data or non-finite values".into()));
        }
        Ok(ChannelScale {
            min,
            max,
            constant: max == min,
        })
    }

    pub fn apply(&self, x: f64) -> f64 {
        if self.constant {
            0.0
        } else {
            (x - self.min) / (self.max - self.min)
        }
    }

    pub fn invert(&self, y: f64) -> f64 {
        if self.constant {
            self.min
        } else {
            y * (self.max - self.min) + self.min
        }
    }
}

/// Channel 0 is inflow, 1 is outflow, `2 + r` is exogenous indicator `r`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    channels: Vec<ChannelScale>,
}

impl Scaler {
    pub const INFLOW: usize = 0;
    pub const OUTFLOW: usize = 1;

    pub fn exo_channel(row: usize) -> usize {
        2 + row
    }

    /// Fits every channel on the given column range (the training days).
    pub fn fit(cube: &FlowCube, exo: &ExogenousSeries, columns: Range<usize>) -> Result<Self> {
        if columns.is_empty() || columns.end > cube.columns() || exo.columns() != cube.columns() {
            return Err(DataError::Config(format!(
                "scaler fit range {columns:?} does not fit {} flow and {} exogenous columns",
                cube.columns(),
                exo.columns()
            )));
        }
        let cols = cube.columns();
        let flow = |m: &[u32]| {
            ChannelScale::fit((0..cube.stations()).flat_map(|s| m[s * cols + columns.start..s * cols + columns.end].iter().map(|&c| c as f64)))
        };
        let mut channels = vec![flow(cube.inflow())?, flow(cube.outflow())?];
        for r in 0..exo.rows() {
            let row = exo.row(r);
            let scale = ChannelScale::fit(row[columns.clone()].iter().copied())?;
            if scale.constant {
                log::info!("exogenous indicator {r} is constant on the training range");
            }
            channels.push(scale);
        }
        Ok(Scaler { channels })
    }

    pub fn from_channels(channels: Vec<ChannelScale>) -> Self {
        Scaler { channels }
    }

    pub fn channels(&self) -> &[ChannelScale] {
        &self.channels
    }

    pub fn channel(&self, i: usize) -> Result<&ChannelScale> {
        self.channels.get(i).ok_or(DataError::ScalerNotFitted(i))
    }

    pub fn apply(&self, channel: usize, x: f64) -> Result<f64> {
        Ok(self.channel(channel)?.apply(x))
    }

    pub fn invert(&self, channel: usize, y: f64) -> Result<f64> {
        Ok(self.channel(channel)?.invert(y))
    }
}
