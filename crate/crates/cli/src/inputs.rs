//! Dataset directory layout shared by `synth` and the commands that read it.
//!
//! ```text
//! <data_dir>/edges.csv      station_a,station_b
//! <data_dir>/lines.csv      line_id,station_1,...
//! <data_dir>/afc.csv        card_id,entry_station,exit_station,entry_time,exit_time
//! <data_dir>/weather.csv    half-hourly weather recordings
//! <data_dir>/air.csv        hourly air-quality recordings
//! <data_dir>/inflow_<tg>.csv, outflow_<tg>.csv   ingested flow cube
//! <data_dir>/manifest.json  generator settings and record counts
//! ```

use std::fs;
use std::path::Path;

use metroflow::data::io::{read_rows, write_cube, write_rows};
use metroflow::data::{
    align_exogenous, ingest_afc, synth_flows, AfcRecord, AirRow, ExogenousSeries, FlowCube, IngestStats, ServiceCalendar,
    SynthTruth, WeatherRow,
};
use metroflow::graph::{synth_topology, MetroGraph, EDGES_FILE, LINES_FILE};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const AFC_FILE: &str = "afc.csv";
pub const WEATHER_FILE: &str = "weather.csv";
pub const AIR_FILE: &str = "air.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn inflow_file(tg_minutes: u32) -> String {
    format!("inflow_{tg_minutes}.csv")
}

pub fn outflow_file(tg_minutes: u32) -> String {
    format!("outflow_{tg_minutes}.csv")
}

/// Ground truth written next to a synthetic dataset. Carries no clock time so
/// reruns are byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub truth: SynthTruth,
    pub topology: TopologyParams,
    pub stations: usize,
    pub tg_minutes: u32,
    pub slots_per_day: usize,
    pub weather_rows: usize,
    pub air_rows: usize,
    pub ingest: IngestStats,
    pub total_inflow: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TopologyParams {
    pub lines: usize,
    pub stations_per_line: usize,
    pub transfers: usize,
    pub seed: u64,
}

/// Raw inputs read from a dataset directory.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub graph: MetroGraph,
    pub calendar: ServiceCalendar,
    pub records: Vec<AfcRecord>,
    pub weather: Vec<WeatherRow>,
    pub air: Vec<AirRow>,
}

impl Inputs {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let dir = &config.data_dir;
        for f in [EDGES_FILE, LINES_FILE, AFC_FILE, WEATHER_FILE, AIR_FILE] {
            let p = dir.join(f);
            if !p.is_file() {
                return Err(CliError::Config(format!(
                    "missing dataset file {}; run `metroflow synth` or point --data at a dataset",
                    p.display()
                )));
            }
        }
        let graph = MetroGraph::read_files(&dir.join(EDGES_FILE), &dir.join(LINES_FILE))?;
        let calendar = ServiceCalendar::workdays(config.start_date, config.days)?;
        Ok(Inputs {
            graph,
            calendar,
            records: read_rows(&dir.join(AFC_FILE))?,
            weather: read_rows(&dir.join(WEATHER_FILE))?,
            air: read_rows(&dir.join(AIR_FILE))?,
        })
    }

    pub fn cube(&self, tg_minutes: u32) -> Result<(FlowCube, IngestStats)> {
        Ok(ingest_afc(&self.records, &self.graph, &self.calendar, tg_minutes)?)
    }

    pub fn exogenous(&self, tg_minutes: u32) -> Result<ExogenousSeries> {
        Ok(align_exogenous(&self.weather, &self.air, tg_minutes, &self.calendar)?)
    }
}

/// Generates a synthetic network and its records into `config.data_dir`.
pub fn write_synthetic(config: &ExperimentConfig) -> Result<Manifest> {
    let dir = &config.data_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let topology = TopologyParams {
        lines: config.lines,
        stations_per_line: config.stations_per_line,
        transfers: config.transfers,
        seed: config.seed,
    };
    let graph = synth_topology(topology.lines, topology.stations_per_line, topology.transfers, topology.seed)?;
    let ds = synth_flows(&graph, &config.synth_config())?;
    let (cube, ingest) = ds.cube(&graph, config.tg_minutes)?;

    graph.write_files(dir)?;
    write_rows(&dir.join(AFC_FILE), &ds.records)?;
    write_rows(&dir.join(WEATHER_FILE), &ds.weather)?;
    write_rows(&dir.join(AIR_FILE), &ds.air)?;
    write_cube(&dir.join(inflow_file(config.tg_minutes)), &cube, &graph, true)?;
    write_cube(&dir.join(outflow_file(config.tg_minutes)), &cube, &graph, false)?;

    let manifest = Manifest {
        truth: ds.truth,
        topology,
        stations: graph.station_count(),
        tg_minutes: config.tg_minutes,
        slots_per_day: cube.slots_per_day(),
        weather_rows: ds.weather.len(),
        air_rows: ds.air.len(),
        ingest,
        total_inflow: cube.total_inflow(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
