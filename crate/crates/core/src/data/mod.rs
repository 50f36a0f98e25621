//! AFC ingestion, exogenous alignment, scaling, sample windows and the
//! synthetic data generator.

mod calendar;
mod exo;
mod flow;
pub mod io;
mod samples;
mod scaler;
mod synth;

pub use calendar::{slots_per_day, ServiceCalendar, SERVICE_MINUTES, SERVICE_START_MINUTE, TG_CHOICES};
pub use exo::{align_exogenous, AirRow, ExogenousSeries, WeatherRow, INDICATORS, WEATHER_INDICATORS};
pub use flow::{aggregate_tg, ingest_afc, AfcRecord, FlowCube, IngestStats};
pub use samples::{eligible_instants, Instant, PreparedData, SampleBatch};
pub use scaler::{ChannelScale, Scaler};
pub use synth::{synth_flows, StationKind, SynthConfig, SynthDataset, SynthTruth};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown station `{0}`")]
    UnknownStation(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("exogenous alignment failed: {0}")]
    Alignment(String),
    #[error("length mismatch in {op}: expected {expected}, got {got}")]
    Length { op: &'static str, expected: usize, got: usize },
    #[error("scaler has not been fitted for channel {0}")]
    ScalerNotFitted(usize),
    #[error("malformed data in {path}: {reason}")]
    Format { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;
