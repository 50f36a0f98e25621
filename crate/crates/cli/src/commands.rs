use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use metroflow::data::io::write_rows;
use metroflow::data::FlowCube;
use metroflow::gradsuite::{run_suite, SuiteConfig};
use metroflow::model::{BaselineKind, BaselineNet, Forecaster, HistoricalAverage, ResLstm, Variant};
use metroflow::train::{
    evaluate, tg_experiment, train, write_station_series, Checkpoint, Dataset, Evaluation, LossRecord, ModelKind,
    TgReport, TgSeries, TrainConfig,
};
use metroflow::Scalar;
use serde::Serialize;

use crate::config::{ExperimentConfig, ModelChoice, Precision};
use crate::error::{CliError, Result};
use crate::inputs::{write_json, write_synthetic, Inputs};

pub const BUILD_ID: &str = env!("METROFLOW_BUILD_ID");
pub const LOSS_FILE: &str = "loss.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const SERIES_DIR: &str = "series";
pub const ABLATION_DIR: &str = "ablation";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const TG_CSV: &str = "tg_report.csv";
pub const TG_JSON: &str = "tg_report.json";
pub const THREADS_ENV: &str = "METROFLOW_THREADS";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

pub fn synth(cfg: &ExperimentConfig) -> Result<()> {
    let m = write_synthetic(cfg)?;
    println!(
        "wrote {} stations, {} days, {} trips ({} tap-ins counted) to {}",
        m.stations,
        m.truth.calendar.len(),
        m.ingest.records,
        m.total_inflow,
        cfg.data_dir.display()
    );
    Ok(())
}

fn dataset(cfg: &ExperimentConfig, inputs: &Inputs, scaler: Option<metroflow::data::Scaler>) -> Result<Dataset> {
    let (cube, _) = inputs.cube(cfg.tg_minutes)?;
    let exo = inputs.exogenous(cfg.tg_minutes)?;
    Ok(match scaler {
        Some(s) => Dataset::with_scaler(&cube, &exo, &inputs.graph, cfg.n, cfg.val_fraction, s)?,
        None => Dataset::new(&cube, &exo, &inputs.graph, cfg.n, cfg.val_fraction)?,
    })
}

/// A trained model ready to be saved.
struct Fitted {
    checkpoint: Checkpoint,
    history: Vec<LossRecord>,
    trainable: usize,
}

fn fit_model<T: Scalar, M: Forecaster<T>>(
    model: &mut M,
    kind: ModelKind,
    ds: &Dataset,
    tc: &TrainConfig,
) -> Result<Fitted> {
    let trainable = model.params().trainable_count();
    let outcome = train(model, &ds.data, &ds.train, &ds.validation, tc)?;
    let mut checkpoint =
        Checkpoint::new(kind, tc.seed, ds.tg_minutes, ds.data.scaler.clone(), model.params()).with_adam(&outcome.adam);
    checkpoint.train_config = Some(tc.clone());
    checkpoint.best_epoch = Some(outcome.best_epoch);
    checkpoint.best_val_mse = Some(outcome.best_val_mse);
    Ok(Fitted {
        checkpoint,
        history: outcome.history,
        trainable,
    })
}

fn fit<T: Scalar>(cfg: &ExperimentConfig, ds: &Dataset, choice: ModelChoice, variant: Variant) -> Result<Fitted> {
    let tc = cfg.train_config();
    match choice {
        ModelChoice::ResLstm => {
            let spec = cfg.model_spec(variant, ds.stations())?;
            let mut model = ResLstm::<T>::new(spec.clone())?;
            fit_model(&mut model, ModelKind::ResLstm { spec }, ds, &tc)
        }
        ModelChoice::Baseline(BaselineKind::HistoricalAverage) => Err(CliError::Config(
            "historical_average has nothing to train; run `evaluate --model historical_average`".into(),
        )),
        ModelChoice::Baseline(kind) => {
            let mut model = BaselineNet::<T>::new(kind, ds.stations(), cfg.n, cfg.seed)?;
            let kind_rec = ModelKind::Baseline {
                kind,
                stations: ds.stations(),
                n: cfg.n,
            };
            fit_model(&mut model, kind_rec, ds, &tc)
        }
    }
}

fn fit_dispatch(cfg: &ExperimentConfig, ds: &Dataset, variant: Variant) -> Result<Fitted> {
    let choice = cfg.model_choice()?;
    match cfg.precision()? {
        Precision::F32 => fit::<f32>(cfg, ds, choice, variant),
        Precision::F64 => fit::<f64>(cfg, ds, choice, variant),
    }
}

fn save_fitted(f: &Fitted, checkpoint: &Path, loss: &Path) -> Result<()> {
    for p in [checkpoint, loss] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
    }
    f.checkpoint.save(checkpoint)?;
    write_rows(loss, &f.history)?;
    Ok(())
}

pub fn train_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let inputs = Inputs::load(cfg)?;
    let ds = dataset(cfg, &inputs, None)?;
    let fitted = fit_dispatch(cfg, &ds, cfg.variant()?)?;
    let ckpt_path = cfg.checkpoint_path();
    save_fitted(&fitted, &ckpt_path, &cfg.out_dir.join(LOSS_FILE))?;
    println!(
        "trained {} ({} trainable parameters) for {} epochs; best epoch {} with validation MSE {:.6e}; checkpoint {}",
        model_label(&fitted.checkpoint.model),
        fitted.trainable,
        fitted.history.len(),
        fitted.checkpoint.best_epoch.unwrap_or(0),
        fitted.checkpoint.best_val_mse.unwrap_or(f64::NAN),
        ckpt_path.display()
    );
    Ok(())
}

fn model_label(kind: &ModelKind) -> String {
    match kind {
        ModelKind::ResLstm { spec } => format!("reslstm/{}", spec.variant),
        ModelKind::Baseline { kind, .. } => kind.to_string(),
    }
}

fn evaluate_as<T: Scalar>(ckpt: &Checkpoint, ds: &Dataset) -> Result<Evaluation> {
    Ok(match &ckpt.model {
        ModelKind::ResLstm { .. } => evaluate(&ckpt.reslstm::<T>()?, &ds.data, &ds.test)?,
        ModelKind::Baseline { .. } => evaluate(&ckpt.baseline::<T>()?, &ds.data, &ds.test)?,
    })
}

/// Scores a checkpoint on the test days of `ds` in the precision it was
/// trained in.
fn evaluate_checkpoint(ckpt: &Checkpoint, ds: &Dataset) -> Result<Evaluation> {
    ckpt.check_compatible(ds.stations(), ds.data.n, ds.tg_minutes)?;
    match ckpt.scalar.as_str() {
        "f32" => evaluate_as::<f32>(ckpt, ds),
        "f64" => evaluate_as::<f64>(ckpt, ds),
        other => Err(CliError::Config(format!("checkpoint scalar type `{other}` is not supported"))),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(CliError::Config(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

/// Contents of `metrics.json`.
#[derive(Debug, Serialize)]
pub struct MetricsReport<'a> {
    pub model: String,
    pub tg_minutes: u32,
    pub n: usize,
    pub seed: u64,
    pub stations: usize,
    pub test_instants: usize,
    pub rmse: f64,
    pub mae: f64,
    pub wmape: f64,
    pub trainable_params: Option<usize>,
    pub best_epoch: Option<usize>,
    pub config: &'a ExperimentConfig,
    pub build_id: &'static str,
    pub created_at: String,
}

fn metrics_report<'a>(
    cfg: &'a ExperimentConfig,
    model: String,
    ckpt: Option<&Checkpoint>,
    eval: &Evaluation,
) -> MetricsReport<'a> {
    MetricsReport {
        model,
        tg_minutes: cfg.tg_minutes,
        n: cfg.n,
        seed: ckpt.map_or(cfg.seed, |c| c.seed),
        stations: eval.stations,
        test_instants: eval.instants.len(),
        rmse: eval.metrics.rmse,
        mae: eval.metrics.mae,
        wmape: eval.metrics.wmape,
        trainable_params: ckpt.map(|c| {
            c.params
                .iter()
                .filter(|p| p.kind == metroflow::tensor::ParamKind::Trainable)
                .map(|p| p.values.len())
                .sum()
        }),
        best_epoch: ckpt.and_then(|c| c.best_epoch),
        config: cfg,
        build_id: BUILD_ID,
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    }
}

pub fn evaluate_cmd(cfg: &ExperimentConfig) -> Result<()> {
    let inputs = Inputs::load(cfg)?;
    let (eval, ckpt, ds) = if cfg.model_choice()? == ModelChoice::Baseline(BaselineKind::HistoricalAverage) {
        let ds = dataset(cfg, &inputs, None)?;
        let ha = HistoricalAverage::fit(&ds.data, ds.split.train.clone())?;
        let eval = Evaluation::from_counts(&ds.data, &ds.test, ha.predict(&ds.test))?;
        (eval, None, ds)
    } else {
        let ckpt = load_checkpoint(&cfg.checkpoint_path())?;
        let ds = dataset(cfg, &inputs, Some(ckpt.scaler.clone()))?;
        let eval = evaluate_checkpoint(&ckpt, &ds)?;
        (eval, Some(ckpt), ds)
    };
    let label = ckpt.as_ref().map_or_else(|| cfg.model.clone(), |c| model_label(&c.model));
    create_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join(METRICS_FILE), &metrics_report(cfg, label.clone(), ckpt.as_ref(), &eval))?;
    write_station_series(&cfg.out_dir.join(SERIES_DIR), &eval, &ds.cube, inputs.graph.stations())?;
    println!(
        "{label}: rmse {:.4} mae {:.4} wmape {:.4} over {} test slots",
        eval.metrics.rmse,
        eval.metrics.mae,
        eval.metrics.wmape,
        eval.instants.len()
    );
    Ok(())
}

/// One line of `ablation.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub status: String,
    pub trainable_params: Option<usize>,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub wmape: Option<f64>,
    pub error: String,
}

fn ablate_one(cfg: &ExperimentConfig, ds: &Dataset, variant: Variant) -> Result<AblationRow> {
    let dir = cfg.out_dir.join(ABLATION_DIR).join(variant.name());
    let fitted = fit_dispatch(cfg, ds, variant)?;
    save_fitted(&fitted, &dir.join("checkpoint.json"), &dir.join(LOSS_FILE))?;
    let eval = evaluate_checkpoint(&fitted.checkpoint, ds)?;
    let report = metrics_report(cfg, model_label(&fitted.checkpoint.model), Some(&fitted.checkpoint), &eval);
    write_json(&dir.join(METRICS_FILE), &report)?;
    Ok(AblationRow {
        variant: variant.name().into(),
        status: "ok".into(),
        trainable_params: Some(fitted.trainable),
        rmse: Some(eval.metrics.rmse),
        mae: Some(eval.metrics.mae),
        wmape: Some(eval.metrics.wmape),
        error: String::new(),
    })
}

/// Worker count: `METROFLOW_THREADS` if set, else the available cores,
/// never more than `jobs`.
pub fn worker_count(jobs: usize) -> Result<usize> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok(n.min(jobs).max(1))
}

/// Runs `job` for every variant on `workers` threads. Returns one row per
/// variant in input order, failures included, plus the first error.
fn run_variants<F>(variants: &[Variant], workers: usize, job: F) -> (Vec<AblationRow>, Option<CliError>)
where
    F: Fn(Variant) -> Result<AblationRow> + Sync,
{
    let results: Vec<Mutex<Option<Result<AblationRow>>>> = variants.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&variant) = variants.get(i) else { break };
                log::info!("ablation: training {variant}");
                let r = job(variant);
                *results[i].lock().expect("result slot") = Some(r);
            });
        }
    });

    let mut rows = Vec::new();
    let mut first_err = None;
    for (variant, slot) in variants.iter().zip(results) {
        match slot.into_inner().expect("result slot").expect("every variant ran") {
            Ok(row) => rows.push(row),
            Err(e) => {
                log::error!("variant {variant} failed: {e}");
                rows.push(AblationRow {
                    variant: variant.name().into(),
                    status: "failed".into(),
                    trainable_params: None,
                    rmse: None,
                    mae: None,
                    wmape: None,
                    error: e.to_string(),
                });
                first_err.get_or_insert(e);
            }
        }
    }
    (rows, first_err)
}

/// Trains and scores every variant under the same seed. Each variant is an
/// independent single-threaded run, so they may proceed in parallel without
/// affecting results. Failed variants keep their row.
pub fn ablate_cmd(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.model_choice()? != ModelChoice::ResLstm {
        return Err(CliError::Config("ablate compares ResLSTM variants; set model to reslstm".into()));
    }
    let inputs = Inputs::load(cfg)?;
    let ds = dataset(cfg, &inputs, None)?;
    create_dir(&cfg.out_dir.join(ABLATION_DIR))?;

    let (rows, first_err) = run_variants(&Variant::ALL, worker_count(Variant::ALL.len())?, |v| ablate_one(cfg, &ds, v));
    let path = cfg.out_dir.join(ABLATION_FILE);
    write_rows(&path, &rows)?;
    for r in &rows {
        match r.rmse {
            Some(rmse) => println!(
                "{:<12} {:>10} params  rmse {rmse:.4}  mae {:.4}  wmape {:.4}",
                r.variant,
                r.trainable_params.unwrap_or(0),
                r.mae.unwrap_or(f64::NAN),
                r.wmape.unwrap_or(f64::NAN)
            ),
            None => println!("{:<12} failed: {}", r.variant, r.error),
        }
    }
    println!("wrote {}", path.display());
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn check_aggregation(fine: &FlowCube, coarse: &FlowCube) -> Result<()> {
    let factor = (coarse.tg_minutes() / fine.tg_minutes()) as usize;
    let agg = fine.aggregate(factor)?;
    if agg.inflow() != coarse.inflow() || agg.outflow() != coarse.outflow() {
        return Err(CliError::Data(format!(
            "{}-minute counts summed ×{factor} differ from the {}-minute ingestion",
            fine.tg_minutes(),
            coarse.tg_minutes()
        )));
    }
    Ok(())
}

/// Evaluates the 10-, 15- and 30-minute runs on one AFC source and compares
/// them on 30-minute targets.
pub fn tg_cmd(cfg: &ExperimentConfig) -> Result<TgReport> {
    let mut checkpoints = Vec::new();
    for m in metroflow::data::TG_CHOICES {
        let path = cfg.tg_checkpoint(m);
        if !path.is_file() {
            return Err(CliError::Config(format!(
                "missing {m}-minute checkpoint {}; train it with `metroflow train --tg {m} --out <dir>/tg_{m}`",
                path.display()
            )));
        }
        checkpoints.push(Checkpoint::load(&path)?);
    }
    let inputs = Inputs::load(cfg)?;
    let cubes: Vec<FlowCube> = metroflow::data::TG_CHOICES
        .iter()
        .map(|&m| inputs.cube(m).map(|(c, _)| c))
        .collect::<Result<_>>()?;
    check_aggregation(&cubes[0], &cubes[2])?;
    check_aggregation(&cubes[1], &cubes[2])?;
    log::info!("aggregated 10- and 15-minute actuals match the 30-minute ingestion");

    let mut series = Vec::new();
    for ((&m, ckpt), cube) in metroflow::data::TG_CHOICES.iter().zip(&checkpoints).zip(&cubes) {
        let exo = inputs.exogenous(m)?;
        let ds = Dataset::with_scaler(cube, &exo, &inputs.graph, ckpt.model.n(), cfg.val_fraction, ckpt.scaler.clone())?;
        let evaluation = evaluate_checkpoint(ckpt, &ds)?;
        series.push(TgSeries {
            tg_minutes: m,
            evaluation,
        });
    }
    let series: [TgSeries; 3] = series.try_into().expect("three granularities");
    let report = tg_experiment(&series)?;

    create_dir(&cfg.out_dir)?;
    #[derive(Serialize)]
    struct Row<'a> {
        tg: &'a str,
        rmse: f64,
        mae: f64,
        wmape: f64,
    }
    let rows: Vec<Row> = report
        .rows
        .iter()
        .map(|r| Row {
            tg: &r.label,
            rmse: r.metrics.rmse,
            mae: r.metrics.mae,
            wmape: r.metrics.wmape,
        })
        .collect();
    write_rows(&cfg.out_dir.join(TG_CSV), &rows)?;
    write_json(&cfg.out_dir.join(TG_JSON), &report)?;
    for r in &report.rows {
        println!(
            "{:<6} rmse {:.4}  mae {:.4}  wmape {:.4}",
            r.label, r.metrics.rmse, r.metrics.mae, r.metrics.wmape
        );
    }
    println!("{} common 30-minute slots", report.common_slots);
    Ok(report)
}

pub fn gradcheck_cmd(seed: u64, probes: usize, analytic_scale: f64) -> Result<()> {
    let cfg = SuiteConfig {
        probes,
        seed,
        analytic_scale,
        ..Default::default()
    };
    let reports = run_suite(&cfg)?;
    let mut failed = Vec::new();
    for r in &reports {
        let ok = r.passes(cfg.tol);
        println!(
            "{:<16} max_rel_error {:.3e}  {:>5} coords  {}",
            r.name,
            r.max_rel_error,
            r.coords_checked,
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        println!("all {} operations pass at tolerance {:e}", reports.len(), cfg.tol);
        Ok(())
    } else {
        Err(CliError::Numeric(format!("gradient check failed for {}", failed.join(", "))))
    }
}
