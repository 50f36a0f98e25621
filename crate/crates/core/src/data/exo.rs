use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::calendar::{slots_per_day, ServiceCalendar};
use super::{DataError, Result};

/// Row names in series order: four weather fields, then seven air-quality fields.
pub const INDICATORS: [&str; 11] = [
    "temperature_c",
    "dew_point_c",
    "rel_humidity_pct",
    "wind_speed_ms",
    "aqi",
    "pm25",
    "pm10",
    "so2",
    "no2",
    "co",
    "o3",
];
/// The leading weather-only rows.
pub const WEATHER_INDICATORS: usize = 4;

const WEATHER_PERIOD_MIN: i64 = 30;
const AIR_PERIOD_MIN: i64 = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherRow {
    pub timestamp: NaiveDateTime,
    pub temperature_c: f64,
    pub dew_point_c: f64,
    pub rel_humidity_pct: f64,
    pub wind_speed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirRow {
    pub timestamp: NaiveDateTime,
    pub aqi: f64,
    pub pm25: f64,
    pub pm10: f64,
    pub so2: f64,
    pub no2: f64,
    pub co: f64,
    pub o3: f64,
}

impl WeatherRow {
    fn values(&self) -> [f64; 4] {
        [self.temperature_c, self.dew_point_c, self.rel_humidity_pct, self.wind_speed_ms]
    }
}

impl AirRow {
    fn values(&self) -> [f64; 7] {
        [self.aqi, self.pm25, self.pm10, self.so2, self.no2, self.co, self.o3]
    }
}

/// Eleven indicator rows on the flow slot grid, row-major `11 × columns`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousSeries {
    tg_minutes: u32,
    columns: usize,
    values: Vec<f64>,
}

impl ExogenousSeries {
    pub fn new(tg_minutes: u32, columns: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != INDICATORS.len() * columns {
            return Err(DataError::Length {
                op: "exogenous series",
                expected: INDICATORS.len() * columns,
                got: values.len(),
            });
        }
        Ok(ExogenousSeries {
            tg_minutes,
            columns,
            values,
        })
    }

    pub fn tg_minutes(&self) -> u32 {
        self.tg_minutes
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn rows(&self) -> usize {
        INDICATORS.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, row: usize, column: usize) -> f64 {
        self.values[row * self.columns + column]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.columns..(row + 1) * self.columns]
    }
}

/// For each slot start, the latest row at or before it on the same day.
/// Returns the row index per slot and the number of slots whose source row is
/// older than one recording period.
fn latest_at_or_before(
    stamps: &[NaiveDateTime],
    calendar: &ServiceCalendar,
    tg_minutes: u32,
    period_min: i64,
    what: &str,
) -> Result<(Vec<usize>, usize)> {
    let spd = slots_per_day(tg_minutes)?;
    let mut picks = Vec::with_capacity(calendar.len() * spd);
    let mut stale = 0;
    for day in 0..calendar.len() {
        for slot in 0..spd {
            let t = calendar.slot_start(day, slot, tg_minutes);
            let idx = stamps.partition_point(|s| *s <= t);
            if idx == 0 || stamps[idx - 1].date() != t.date() {
                return Err(DataError::Alignment(format!("no {what} recording at or before {t} on the same day")));
            }
            if t - stamps[idx - 1] > Duration::minutes(period_min) {
                stale += 1;
            }
            picks.push(idx - 1);
        }
    }
    Ok((picks, stale))
}

/// Resamples half-hourly weather and hourly air quality onto the flow grid.
/// Each slot shares the most recent recording at or before its start.
pub fn align_exogenous(
    weather: &[WeatherRow],
    air: &[AirRow],
    tg_minutes: u32,
    calendar: &ServiceCalendar,
) -> Result<ExogenousSeries> {
    let mut weather = weather.to_vec();
    let mut air = air.to_vec();
    weather.sort_by_key(|r| r.timestamp);
    air.sort_by_key(|r| r.timestamp);
    if let Some(bad) = weather.iter().find(|r| !(0.0..=100.0).contains(&r.rel_humidity_pct)) {
        return Err(DataError::Alignment(format!(
            "relative humidity {} at {} is outside [0, 100]",
            bad.rel_humidity_pct, bad.timestamp
        )));
    }
    let w_stamps: Vec<_> = weather.iter().map(|r| r.timestamp).collect();
    let a_stamps: Vec<_> = air.iter().map(|r| r.timestamp).collect();
    let (w_pick, w_stale) = latest_at_or_before(&w_stamps, calendar, tg_minutes, WEATHER_PERIOD_MIN, "weather")?;
    let (a_pick, a_stale) = latest_at_or_before(&a_stamps, calendar, tg_minutes, AIR_PERIOD_MIN, "air-quality")?;
    if w_stale + a_stale > 0 {
        log::warn!("forward-filled {w_stale} weather and {a_stale} air-quality slots across recording gaps");
    }
    let columns = w_pick.len();
    let mut values = vec![0.0; INDICATORS.len() * columns];
    for c in 0..columns {
        let w = weather[w_pick[c]].values();
        let a = air[a_pick[c]].values();
        for (r, v) in w.iter().chain(a.iter()).enumerate() {
            values[r * columns + c] = *v;
        }
    }
    ExogenousSeries::new(tg_minutes, columns, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn ts(h: u32, m: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2016, 2, 29).unwrap().and_hms_opt(h, m, 0).unwrap()
    }

    /// Reference sample rows, extended through the service day by repeating
    /// the last one so alignment has full coverage.
    fn tables() -> (Vec<WeatherRow>, Vec<AirRow>) {
        let w = [
            (5, 0, -6.0, -17.0, 42.0, 4.0),
            (5, 30, -6.0, -17.0, 42.0, 4.0),
            (6, 0, -5.0, -17.0, 39.0, 11.0),
            (6, 30, -5.0, -18.0, 36.0, 7.0),
            (7, 0, -6.0, -18.0, 39.0, 4.0),
            (7, 30, -6.0, -16.0, 46.0, 7.0),
            (8, 0, -3.0, -16.0, 37.0, 4.0),
        ];
        let mut weather: Vec<WeatherRow> = w
            .iter()
            .map(|&(h, m, t, d, rh, ws)| WeatherRow {
                timestamp: ts(h, m),
                temperature_c: t,
                dew_point_c: d,
                rel_humidity_pct: rh,
                wind_speed_ms: ws,
            })
            .collect();
        let a = [
            (5, 18.0, 11.0, 16.0, 5.0, 36.0, 0.5, 38.0),
            (6, 21.0, 13.0, 21.0, 6.0, 40.0, 0.5, 37.0),
            (7, 20.0, 14.0, 20.0, 5.0, 38.0, 0.5, 40.0),
            (8, 20.0, 12.0, 20.0, 5.0, 37.0, 0.5, 41.0),
            (9, 24.0, 15.0, 24.0, 6.0, 35.0, 0.5, 47.0),
            (10, 25.0, 17.0, 24.0, 7.0, 33.0, 0.6, 53.0),
            (11, 28.0, 19.0, 26.0, 7.0, 33.0, 0.6, 54.0),
        ];
        let mut air: Vec<AirRow> = a
            .iter()
            .map(|&(h, aqi, pm25, pm10, so2, no2, co, o3)| AirRow {
                timestamp: ts(h, 0),
                aqi,
                pm25,
                pm10,
                so2,
                no2,
                co,
                o3,
            })
            .collect();
        for h in 8..23 {
            for m in [0, 30] {
                if (h, m) != (8, 0) {
                    let mut r = weather.last().unwrap().clone();
                    r.timestamp = ts(h, m);
                    weather.push(r);
                }
            }
        }
        for h in 12..23 {
            let mut r = air.last().unwrap().clone();
            r.timestamp = ts(h, 0);
            air.push(r);
        }
        (weather, air)
    }

    fn calendar() -> ServiceCalendar {
        ServiceCalendar::new(vec![NaiveDate::from_ymd_opt(2016, 2, 29).unwrap()]).unwrap()
    }

    #[test]
    fn first_ten_minute_slot_shares_first_rows() {
        let (w, a) = tables();
        let exo = align_exogenous(&w, &a, 10, &calendar()).unwrap();
        let col: Vec<f64> = (0..11).map(|r| exo.at(r, 0)).collect();
        assert_eq!(&col[..4], &[-6.0, -17.0, 42.0, 4.0]);
        assert_eq!(col[4], 18.0);
        assert_eq!(col[5], 11.0);
        // 05:50 still shares 05:30 weather and 05:00 air
        assert_eq!(exo.at(0, 5), -6.0);
        assert_eq!(exo.at(4, 5), 18.0);
        assert_eq!(exo.at(0, 6), -5.0);
    }

    #[test]
    fn thirty_minute_slot_mixes_cadences() {
        let (w, a) = tables();
        let exo = align_exogenous(&w, &a, 30, &calendar()).unwrap();
        // slot 1 starts 05:30: weather from 05:30, air from 05:00
        assert_eq!(exo.at(1, 1), -17.0);
        assert_eq!(exo.at(4, 1), 18.0);
        // slot 3 starts 06:30: weather 06:30 (dew point -18), air 06:00 (AQI 21)
        assert_eq!(exo.at(1, 3), -18.0);
        assert_eq!(exo.at(4, 3), 21.0);
    }

    #[test]
    fn leading_gap_is_an_error() {
        let (w, a) = tables();
        let err = align_exogenous(&w[1..], &a, 10, &calendar()).unwrap_err();
        assert!(matches!(err, DataError::Alignment(_)));
    }

    #[test]
    fn interior_gap_is_forward_filled() {
        let (mut w, a) = tables();
        w.retain(|r| r.timestamp != ts(6, 0) && r.timestamp != ts(6, 30));
        let exo = align_exogenous(&w, &a, 30, &calendar()).unwrap();
        assert_eq!(exo.at(3, 2), 4.0);
        assert_eq!(exo.at(3, 3), 4.0);
    }

    #[test]
    fn humidity_out_of_range_rejected() {
        let (mut w, a) = tables();
        w[3].rel_humidity_pct = 120.0;
        assert!(align_exogenous(&w, &a, 30, &calendar()).is_err());
    }
}
