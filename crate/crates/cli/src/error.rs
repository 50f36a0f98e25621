use metroflow::data::DataError;
use metroflow::graph::GraphError;
use metroflow::model::ModelError;
use metroflow::tensor::TensorError;
use metroflow::train::TrainError;
use thiserror::Error;

/// Command failure, classified by the exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub const EXIT_IO: i32 = 1;
    pub const EXIT_CONFIG: i32 = 2;
    pub const EXIT_DATA: i32 = 3;
    pub const EXIT_NUMERIC: i32 = 4;

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => Self::EXIT_IO,
            CliError::Config(_) => Self::EXIT_CONFIG,
            CliError::Data(_) => Self::EXIT_DATA,
            CliError::Numeric(_) => Self::EXIT_NUMERIC,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(io) => io.into(),
            DataError::Config(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Io(io) => io.into(),
            GraphError::Infeasible(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFiniteGradient(_) | TensorError::Probe { .. } => CliError::Numeric(e.to_string()),
            // shapes come from the configuration and the data
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => CliError::Config(m),
            ModelError::Tensor(t) => t.into(),
            ModelError::Data(d) => d.into(),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Config(m),
            TrainError::Checkpoint(m) => CliError::Config(format!("checkpoint: {m}")),
            e @ (TrainError::UndefinedMetric(_) | TrainError::NonFinite { .. }) => CliError::Numeric(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Data(d) => d.into(),
            TrainError::Tensor(t) => t.into(),
            TrainError::Io(io) => io.into(),
            TrainError::Json(j) => CliError::Data(format!("malformed JSON: {j}")),
        }
    }
}
