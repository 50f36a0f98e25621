//! Synthetic AFC trips and exogenous recordings.
//!
//! Each station draws Poisson tap-ins per minute from a kind-specific daily
//! profile, modulated by weekday and by a weather/air-quality disturbance.
//! The disturbance at time `t` is computed from the recordings in effect at
//! `t − 30 min`, so the indicator window available to a forecaster carries
//! information about the flow it is asked to predict.

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::calendar::{ServiceCalendar, SERVICE_MINUTES, SERVICE_START_MINUTE};
use super::{align_exogenous, ingest_afc, AfcRecord, AirRow, DataError, ExogenousSeries, FlowCube, IngestStats, Result, WeatherRow};
use crate::graph::MetroGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationKind {
    /// Morning tap-in peak.
    Residential,
    /// Evening tap-in peak.
    Office,
    /// Transfer station with morning and evening peaks.
    Hub,
    /// Train-arrival bumps at irregular times.
    Railway,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub days: usize,
    pub start_date: NaiveDate,
    /// Flows are scaled by `1 − weather_effect · d` with `d ∈ [−1, 1]`.
    pub weather_effect: f64,
    pub seed: u64,
    /// Station-average tap-ins per minute at the main peak.
    pub peak_rate: f64,
    /// Off-peak tap-ins per minute.
    pub base_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            days: 25,
            start_date: NaiveDate::from_ymd_opt(2016, 2, 29).expect("valid date"),
            weather_effect: 0.3,
            seed: 1,
            peak_rate: 6.0,
            base_rate: 0.7,
        }
    }
}

/// What the generator did, for the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub config: SynthConfig,
    pub stations: Vec<String>,
    pub kinds: Vec<StationKind>,
    pub calendar: ServiceCalendar,
    pub entry_records: usize,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub calendar: ServiceCalendar,
    pub records: Vec<AfcRecord>,
    pub weather: Vec<WeatherRow>,
    pub air: Vec<AirRow>,
    pub truth: SynthTruth,
}

impl SynthDataset {
    pub fn cube(&self, graph: &MetroGraph, tg_minutes: u32) -> Result<(FlowCube, IngestStats)> {
        ingest_afc(&self.records, graph, &self.calendar, tg_minutes)
    }

    pub fn exogenous(&self, tg_minutes: u32) -> Result<ExogenousSeries> {
        align_exogenous(&self.weather, &self.air, tg_minutes, &self.calendar)
    }
}

// independent random streams so each part is reproducible on its own
const STREAM_KINDS: u64 = 1;
const STREAM_PROFILES: u64 = 2;
const STREAM_EXO: u64 = 3;
const STREAM_FLOWS: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn bump(minute: f64, center: f64, width: f64) -> f64 {
    let z = (minute - center) / width;
    (-0.5 * z * z).exp()
}

struct Profile {
    kind: StationKind,
    scale: f64,
    /// Railway bumps: (center minute of day, width, relative height).
    bumps: Vec<(f64, f64, f64)>,
}

impl Profile {
    /// Tap-ins per minute at clock minute `m` (minutes after midnight), before
    /// weekday and weather modulation. `shift` jitters railway bumps per day.
    fn rate(&self, m: f64, base: f64, peak: f64, shift: &[f64]) -> f64 {
        let shape = match self.kind {
            StationKind::Residential => base + peak * bump(m, 480.0, 35.0) + 0.2 * peak * bump(m, 1110.0, 60.0),
            StationKind::Office => base + 0.15 * peak * bump(m, 510.0, 40.0) + 0.85 * peak * bump(m, 1080.0, 45.0),
            StationKind::Hub => 1.3 * base + 0.8 * peak * (bump(m, 480.0, 40.0) + bump(m, 1080.0, 45.0)),
            StationKind::Railway => {
                1.5 * base
                    + self
                        .bumps
                        .iter()
                        .zip(shift)
                        .map(|(&(c, w, h), s)| h * peak * bump(m, c + s, w))
                        .sum::<f64>()
            }
        };
        self.scale * shape
    }
}

fn assign_kinds(graph: &MetroGraph, rng: &mut ChaCha8Rng) -> Vec<StationKind> {
    let counts = graph.line_counts();
    let mut kinds: Vec<StationKind> = counts
        .iter()
        .map(|&c| if c >= 2 { StationKind::Hub } else { StationKind::Residential })
        .collect();
    let mut plain: Vec<usize> = (0..kinds.len()).filter(|&i| kinds[i] != StationKind::Hub).collect();
    plain.shuffle(rng);
    let railway = if graph.station_count() >= 3 { graph.station_count().div_ceil(8) } else { 0 };
    let office = plain.len().saturating_sub(railway) / 3;
    for (k, &i) in plain.iter().enumerate() {
        if k < railway {
            kinds[i] = StationKind::Railway;
        } else if k < railway + office {
            kinds[i] = StationKind::Office;
        }
    }
    kinds
}

/// Weather every half hour and air quality every hour, 05:00 through the
/// last recording before 23:00, for each service day.
fn synth_exogenous(calendar: &ServiceCalendar, rng: &mut ChaCha8Rng) -> (Vec<WeatherRow>, Vec<AirRow>) {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut weather = Vec::new();
    let mut air = Vec::new();
    let mut temp_anom = 0.0;
    let mut wind = 4.0;
    let mut log_aqi_anom = 0.0;
    for &day in calendar.days() {
        let day_temp = -3.0 + 3.0 * unit.sample(rng);
        let day_aqi = (80.0f64).ln() + 0.5 * unit.sample(rng);
        let day_dew_gap = 8.0 + 4.0 * rng.random::<f64>();
        for half in 0..(SERVICE_MINUTES / 30) {
            let minute = SERVICE_START_MINUTE + half * 30;
            let t = stamp(day, minute);
            temp_anom = 0.6 * temp_anom + 1.6 * unit.sample(rng);
            wind = (4.0 + 0.7 * (wind - 4.0) + 1.5 * unit.sample(rng)).max(0.0);
            let diurnal = 4.0 * ((minute as f64 - 840.0) / 1440.0 * std::f64::consts::TAU).cos();
            let temperature = day_temp + diurnal + temp_anom;
            let dew = temperature - day_dew_gap - 1.5 * rng.random::<f64>();
            weather.push(WeatherRow {
                timestamp: t,
                temperature_c: round1(temperature),
                dew_point_c: round1(dew),
                rel_humidity_pct: round1(relative_humidity(temperature, dew)),
                wind_speed_ms: round1(wind),
            });
            if half % 2 == 0 {
                log_aqi_anom = 0.5 * log_aqi_anom + 0.35 * unit.sample(rng);
                let aqi = (day_aqi + log_aqi_anom).exp().clamp(10.0, 500.0);
                let jitter = |rng: &mut ChaCha8Rng| 0.85 + 0.3 * rng.random::<f64>();
                air.push(AirRow {
                    timestamp: t,
                    aqi: aqi.round(),
                    pm25: (0.75 * aqi * jitter(rng)).round(),
                    pm10: (0.95 * aqi * jitter(rng)).round(),
                    so2: (5.0 + aqi / 20.0 * jitter(rng)).round(),
                    no2: (30.0 + aqi / 6.0 * jitter(rng)).round(),
                    co: round1(0.3 + aqi / 200.0 * jitter(rng)),
                    o3: (60.0 - aqi / 10.0 * jitter(rng)).max(1.0).round(),
                });
            }
        }
    }
    (weather, air)
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Magnus approximation.
fn relative_humidity(t: f64, dew: f64) -> f64 {
    let f = |x: f64| (17.625 * x / (243.04 + x)).exp();
    (100.0 * f(dew) / f(t)).clamp(0.0, 100.0)
}

fn stamp(day: NaiveDate, minute: u32) -> NaiveDateTime {
    day.and_hms_opt(minute / 60, minute % 60, 0).expect("minute within a day")
}

/// Travel disturbance in `[−1, 1]` from one weather and one air recording:
/// polluted or unusually cold conditions reduce travel.
fn disturbance(w: &WeatherRow, a: &AirRow) -> f64 {
    let diurnal = 4.0 * ((w.timestamp.time().num_seconds_from_midnight() as f64 / 60.0 - 840.0) / 1440.0 * std::f64::consts::TAU).cos();
    let cold = -(w.temperature_c - (-3.0 + diurnal)) / 4.0;
    let polluted = (a.aqi - 100.0) / 80.0;
    (0.6 * polluted + 0.4 * cold).clamp(-1.0, 1.0)
}

const WEEKDAY_FACTOR: [f64; 5] = [1.0, 0.97, 0.98, 1.0, 1.08];

pub fn synth_flows(graph: &MetroGraph, config: &SynthConfig) -> Result<SynthDataset> {
    if config.days == 0 {
        return Err(DataError::Config("synthetic data needs at least one day".into()));
    }
    if !(0.0..=1.0).contains(&config.weather_effect) {
        return Err(DataError::Config(format!("weather effect {} must lie in [0, 1]", config.weather_effect)));
    }
    let calendar = ServiceCalendar::workdays(config.start_date, config.days)?;
    let s = graph.station_count();
    let kinds = assign_kinds(graph, &mut stream(config.seed, STREAM_KINDS));

    let mut prng = stream(config.seed, STREAM_PROFILES);
    let profiles: Vec<Profile> = kinds
        .iter()
        .map(|&kind| {
            let scale = 0.6 + 0.8 * prng.random::<f64>();
            let bumps = (0..5)
                .map(|_| {
                    (
                        prng.random_range(360.0..1320.0),
                        prng.random_range(12.0..30.0),
                        prng.random_range(0.3..0.8),
                    )
                })
                .collect();
            Profile { kind, scale, bumps }
        })
        .collect();

    let (weather, air) = synth_exogenous(&calendar, &mut stream(config.seed, STREAM_EXO));

    let hops: Vec<Vec<usize>> = (0..s).map(|i| graph.hops_from(i)).collect();
    let weights: Vec<f64> = profiles.iter().map(|p| p.scale).collect();
    let mut rng = stream(config.seed, STREAM_FLOWS);
    let day_noise = Normal::<f64>::new(1.0, 0.03).expect("valid normal");
    let mut records = Vec::new();
    let (w_per_day, a_per_day) = ((SERVICE_MINUTES / 30) as usize, (SERVICE_MINUTES / 60) as usize);
    for (d, &date) in calendar.days().iter().enumerate() {
        let weekday = WEEKDAY_FACTOR[date.weekday().num_days_from_monday().min(4) as usize];
        let day_factor: Vec<f64> = (0..s).map(|_| weekday * day_noise.sample(&mut rng).max(0.5)).collect();
        let shifts: Vec<Vec<f64>> = (0..s)
            .map(|_| (0..5).map(|_| rng.random_range(-30.0..30.0)).collect())
            .collect();
        for offset in 0..SERVICE_MINUTES {
            let minute = SERVICE_START_MINUTE + offset;
            // recordings in effect half an hour earlier, clamped to the first of the day
            let lagged = offset.saturating_sub(30);
            let w = &weather[d * w_per_day + (lagged / 30) as usize];
            let a = &air[d * a_per_day + (lagged / 60) as usize];
            let modulation = 1.0 - config.weather_effect * disturbance(w, a);
            for st in 0..s {
                let lambda = profiles[st].rate(minute as f64 + 0.5, config.base_rate, config.peak_rate, &shifts[st])
                    * day_factor[st]
                    * modulation;
                let count = if lambda > 0.0 {
                    Poisson::new(lambda).expect("positive rate").sample(&mut rng) as usize
                } else {
                    0
                };
                for _ in 0..count {
                    let entry = stamp(date, minute) + Duration::seconds(rng.random_range(0..60));
                    let dest = pick_destination(st, &weights, &mut rng);
                    let travel = 120 + 180 * hops[st][dest].min(60) as i64 + rng.random_range(0..180);
                    records.push(AfcRecord {
                        card_id: format!("C{:09}", records.len()),
                        entry_station: graph.stations()[st].clone(),
                        exit_station: graph.stations()[dest].clone(),
                        entry_time: entry,
                        exit_time: entry + Duration::seconds(travel),
                    });
                }
            }
        }
    }
    let truth = SynthTruth {
        config: config.clone(),
        stations: graph.stations().to_vec(),
        kinds,
        calendar: calendar.clone(),
        entry_records: records.len(),
    };
    Ok(SynthDataset {
        calendar,
        records,
        weather,
        air,
        truth,
    })
}

fn pick_destination(origin: usize, weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    if weights.len() == 1 {
        return origin;
    }
    let total: f64 = weights.iter().enumerate().filter(|&(i, _)| i != origin).map(|(_, w)| w).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if i == origin {
            continue;
        }
        if u < w {
            return i;
        }
        u -= w;
    }
    (0..weights.len()).rev().find(|&i| i != origin).expect("another station exists")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synth_topology;

    fn small(effect: f64, days: usize) -> (MetroGraph, SynthDataset) {
        let g = synth_topology(2, 4, 1, 9).unwrap();
        let cfg = SynthConfig {
            days,
            weather_effect: effect,
            seed: 4,
            ..Default::default()
        };
        let ds = synth_flows(&g, &cfg).unwrap();
        (g, ds)
    }

    #[test]
    fn zero_days_rejected() {
        let g = synth_topology(1, 3, 0, 1).unwrap();
        let cfg = SynthConfig {
            days: 0,
            ..Default::default()
        };
        assert!(matches!(synth_flows(&g, &cfg), Err(DataError::Config(_))));
    }

    #[test]
    fn same_seed_same_cube() {
        let (g, a) = small(0.3, 2);
        let (_, b) = small(0.3, 2);
        assert_eq!(a.cube(&g, 30).unwrap().0, b.cube(&g, 30).unwrap().0);
        assert_eq!(a.weather, b.weather);
    }

    #[test]
    fn entries_are_conserved() {
        let (g, ds) = small(0.3, 3);
        let (cube, stats) = ds.cube(&g, 10).unwrap();
        assert_eq!(stats.entries_skipped, 0);
        assert_eq!(cube.total_inflow(), ds.truth.entry_records as u64);
    }

    #[test]
    fn residential_peak_is_in_the_morning() {
        let (g, ds) = small(0.0, 5);
        let (cube, _) = ds.cube(&g, 30).unwrap();
        let spd = cube.slots_per_day();
        for (st, kind) in ds.truth.kinds.iter().enumerate() {
            if *kind != StationKind::Residential {
                continue;
            }
            let mean: Vec<f64> = (0..spd)
                .map(|slot| (0..5).map(|d| cube.inflow_at(st, cube.column(d, slot)) as f64).sum::<f64>() / 5.0)
                .collect();
            let argmax = (0..spd).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).unwrap();
            let start = SERVICE_START_MINUTE + argmax as u32 * 30;
            assert!((7 * 60..9 * 60).contains(&start), "station {st} peaks at minute {start}");
        }
        assert!(ds.truth.kinds.contains(&StationKind::Residential));
    }

    fn lagged_correlation(effect: f64) -> f64 {
        let (g, ds) = small(effect, 20);
        let (cube, _) = ds.cube(&g, 30).unwrap();
        let exo = ds.exogenous(30).unwrap();
        let spd = cube.slots_per_day();
        let total = |c: usize| (0..cube.stations()).map(|s| cube.inflow_at(s, c) as f64).sum::<f64>();
        // ratio to the same-slot mean over all days removes the daily profile
        let slot_mean: Vec<f64> = (0..spd)
            .map(|slot| (0..20).map(|d| total(cube.column(d, slot))).sum::<f64>() / 20.0)
            .collect();
        let (mut xs, mut ys) = (vec![], vec![]);
        for d in 0..20 {
            for slot in 1..spd {
                xs.push(exo.at(4, cube.column(d, slot - 1)));
                ys.push(total(cube.column(d, slot)) / slot_mean[slot]);
            }
        }
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn weather_effect_controls_dependence() {
        assert!(lagged_correlation(0.0).abs() < 0.15);
        assert!(lagged_correlation(0.5) < -0.3);
    }
}
