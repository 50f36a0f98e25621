//! Command-line front end: synthesize a dataset, train, evaluate, run the
//! variant ablation and the time-granularity comparison, and check gradients.
//!
//! Every command reads files and writes files. Options come from an optional
//! flat JSON config; flags override it.

pub mod commands;
pub mod config;
pub mod error;
pub mod inputs;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "metroflow", version, about = "Metro passenger-flow forecasting experiments")]
pub struct Cli {
    /// Flat JSON experiment config.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// full, gcn_only, no_graph, no_wa, no_a or two_channel.
    #[arg(long, global = true, value_name = "NAME")]
    pub variant: Option<String>,
    /// Time granularity in minutes: 10, 15 or 30.
    #[arg(long, global = true, value_name = "MINUTES")]
    pub tg: Option<u32>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// reslstm or a baseline (historical_average, bpnn, rnn, lstm, gru, cnn).
    #[arg(long, global = true, value_name = "NAME")]
    pub model: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic network, trips and recordings into the data directory.
    Synth,
    /// Train a model and write its checkpoint and loss history.
    Train,
    /// Score a checkpoint on the test days.
    Evaluate,
    /// Train and score all six ResLSTM variants under one seed.
    Ablate,
    /// Compare the 10-, 15- and 30-minute runs on 30-minute targets.
    Tg,
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        probes: usize,
        /// Scale analytic gradients by this factor to confirm the check fails.
        #[arg(long, hide = true, num_args = 0..=1, default_missing_value = "1.01", value_name = "SCALE")]
        inject_fault: Option<f64>,
    },
}

impl Cli {
    /// File config (or defaults) with flags applied on top.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(v) = &self.variant {
            cfg.variant = v.clone();
        }
        if let Some(tg) = self.tg {
            cfg.tg_minutes = tg;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(d) = &self.data {
            cfg.data_dir = d.clone();
        }
        if let Some(m) = &self.model {
            cfg.model = m.clone();
        }
        if let Some(c) = &self.checkpoint {
            cfg.checkpoint = Some(c.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve()?;
    match &cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Evaluate => commands::evaluate_cmd(&cfg),
        Command::Ablate => commands::ablate_cmd(&cfg),
        Command::Tg => commands::tg_cmd(&cfg).map(|_| ()),
        Command::Gradcheck { probes, inject_fault } => {
            commands::gradcheck_cmd(cfg.seed, *probes, inject_fault.unwrap_or(1.0))
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { CliError::EXIT_CONFIG } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
