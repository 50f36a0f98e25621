use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Result, TrainError};

/// Workdays held out for testing: the final week.
pub const TEST_DAYS: usize = 5;

/// Chronological partition of service days.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaySplit {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

/// The last `TEST_DAYS` days test; the trailing `val_fraction` of the rest
/// (rounded, at least one day) validates; the remainder trains.
pub fn split_days(days: usize, val_fraction: f64) -> Result<DaySplit> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(TrainError::Config(format!("validation fraction {val_fraction} must lie in (0, 1)")));
    }
    if days < 2 * TEST_DAYS {
        return Err(TrainError::Config(format!("need at least two workweeks ({} days), got {days}", 2 * TEST_DAYS)));
    }
    let rest = days - TEST_DAYS;
    let val = ((rest as f64 * val_fraction).round() as usize).clamp(1, rest - 1);
    let train_end = rest - val;
    Ok(DaySplit {
        train: 0..train_end,
        validation: train_end..rest,
        test: rest..days,
    })
}
