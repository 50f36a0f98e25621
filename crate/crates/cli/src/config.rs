use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use metroflow::data::{SynthConfig, TG_CHOICES};
use metroflow::model::{BaselineKind, ModelSpec, Variant};
use metroflow::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Which network a run trains or evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    ResLstm,
    Baseline(BaselineKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Flat experiment description. Every field has a default, so `{}` is a
/// valid config; command-line flags override file values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset directory: topology, AFC records, weather and air quality.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
    /// Parent of the `tg_10`, `tg_15` and `tg_30` run directories read by
    /// `tg`; defaults to `out_dir`.
    pub tg_runs_dir: Option<PathBuf>,

    /// First service day; the calendar holds `days` workdays from here.
    pub start_date: NaiveDate,
    pub days: usize,
    pub weather_effect: f64,
    pub lines: usize,
    pub stations_per_line: usize,
    pub transfers: usize,
    pub peak_rate: f64,
    pub base_rate: f64,

    pub tg_minutes: u32,
    pub n: usize,

    /// `reslstm` or a baseline name.
    pub model: String,
    pub variant: String,
    pub filters: [usize; 2],
    pub exo_hidden: usize,
    pub trunk_hidden: usize,
    /// `f32` or `f64`.
    pub precision: String,

    pub epochs_max: usize,
    pub batch_size: usize,
    /// Defaults to 1e-3 for ResLSTM and 1e-4 for baselines.
    pub lr: Option<f64>,
    pub val_fraction: f64,
    pub patience: usize,
    pub target_train_ratio: Option<f64>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let train = TrainConfig::default();
        ExperimentConfig {
            data_dir: "data".into(),
            out_dir: "out".into(),
            checkpoint: None,
            tg_runs_dir: None,
            start_date: synth.start_date,
            days: synth.days,
            weather_effect: synth.weather_effect,
            lines: 2,
            stations_per_line: 5,
            transfers: 2,
            peak_rate: synth.peak_rate,
            base_rate: synth.base_rate,
            tg_minutes: 30,
            n: 5,
            model: "reslstm".into(),
            variant: Variant::Full.to_string(),
            filters: [32, 64],
            exo_hidden: 128,
            trunk_hidden: 128,
            precision: "f32".into(),
            epochs_max: train.epochs_max,
            batch_size: train.batch_size,
            lr: None,
            val_fraction: train.val_fraction,
            patience: train.patience,
            target_train_ratio: None,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if !TG_CHOICES.contains(&self.tg_minutes) {
            return Err(CliError::Config(format!("tg_minutes must be one of {TG_CHOICES:?}, got {}", self.tg_minutes)));
        }
        if self.n == 0 {
            return Err(CliError::Config("history length n must be positive".into()));
        }
        if self.days == 0 {
            return Err(CliError::Config("days must be positive".into()));
        }
        self.model_choice()?;
        self.variant()?;
        self.precision()?;
        self.train_config().validate()?;
        Ok(())
    }

    pub fn model_choice(&self) -> Result<ModelChoice> {
        if self.model == "reslstm" {
            return Ok(ModelChoice::ResLstm);
        }
        self.model
            .parse::<BaselineKind>()
            .map(ModelChoice::Baseline)
            .map_err(|_| CliError::Config(format!("unknown model `{}`: expected reslstm or a baseline name", self.model)))
    }

    pub fn variant(&self) -> Result<Variant> {
        Ok(self.variant.parse::<Variant>()?)
    }

    pub fn precision(&self) -> Result<Precision> {
        match self.precision.as_str() {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(CliError::Config(format!("precision must be f32 or f64, got `{other}`"))),
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("checkpoint.json"))
    }

    /// Checkpoint of the `tg` run at `minutes`.
    pub fn tg_checkpoint(&self, minutes: u32) -> PathBuf {
        self.tg_runs_dir
            .as_ref()
            .unwrap_or(&self.out_dir)
            .join(format!("tg_{minutes}"))
            .join("checkpoint.json")
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            days: self.days,
            start_date: self.start_date,
            weather_effect: self.weather_effect,
            seed: self.seed,
            peak_rate: self.peak_rate,
            base_rate: self.base_rate,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let default_lr = match self.model_choice() {
            Ok(ModelChoice::Baseline(_)) => TrainConfig::BASELINE_LR,
            _ => TrainConfig::default().lr,
        };
        TrainConfig {
            epochs_max: self.epochs_max,
            batch_size: self.batch_size,
            lr: self.lr.unwrap_or(default_lr),
            val_fraction: self.val_fraction,
            patience: self.patience,
            seed: self.seed,
            target_train_ratio: self.target_train_ratio,
        }
    }

    pub fn model_spec(&self, variant: Variant, stations: usize) -> Result<ModelSpec> {
        let mut spec = ModelSpec::new(variant, stations, self.n)?;
        spec.filters = self.filters;
        spec.exo_hidden = self.exo_hidden;
        spec.trunk_hidden = self.trunk_hidden;
        spec.lr = self.train_config().lr;
        spec.seed = self.seed;
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        let c: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"epochs": 3}"#).is_err());
        let c = ExperimentConfig {
            tg_minutes: 20,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        let c = ExperimentConfig {
            variant: "no_such".into(),
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn baseline_learning_rate_default() {
        let c = ExperimentConfig {
            model: "gru".into(),
            ..Default::default()
        };
        assert_eq!(c.train_config().lr, 1e-4);
        assert_eq!(ExperimentConfig::default().train_config().lr, 1e-3);
    }
}
