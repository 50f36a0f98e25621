use std::iter::Sum;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::calendar::{slots_per_day, ServiceCalendar};
use super::{DataError, Result};
use crate::graph::MetroGraph;

/// One smartcard trip: tap-in and tap-out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfcRecord {
    pub card_id: String,
    pub entry_station: String,
    pub exit_station: String,
    pub entry_time: NaiveDateTime,
    pub exit_time: NaiveDateTime,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub records: usize,
    pub entries_counted: usize,
    pub exits_counted: usize,
    /// Tap-ins outside the service window or calendar.
    pub entries_skipped: usize,
    pub exits_skipped: usize,
}

/// Station × slot inflow and outflow counts at one time granularity.
/// Columns run day-major: column `day · slots_per_day + slot`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowCube {
    tg_minutes: u32,
    calendar: ServiceCalendar,
    stations: usize,
    inflow: Vec<u32>,
    outflow: Vec<u32>,
}

impl FlowCube {
    pub fn zeros(stations: usize, calendar: ServiceCalendar, tg_minutes: u32) -> Result<Self> {
        let cols = calendar.len() * slots_per_day(tg_minutes)?;
        Ok(FlowCube {
            tg_minutes,
            calendar,
            stations,
            inflow: vec![0; stations * cols],
            outflow: vec![0; stations * cols],
        })
    }

    pub fn from_counts(
        stations: usize,
        calendar: ServiceCalendar,
        tg_minutes: u32,
        inflow: Vec<u32>,
        outflow: Vec<u32>,
    ) -> Result<Self> {
        let mut cube = Self::zeros(stations, calendar, tg_minutes)?;
        for (name, v) in [("inflow", &inflow), ("outflow", &outflow)] {
            if v.len() != cube.inflow.len() {
                return Err(DataError::Length {
                    op: if name == "inflow" { "flow cube inflow" } else { "flow cube outflow" },
                    expected: cube.inflow.len(),
                    got: v.len(),
                });
            }
        }
        cube.inflow = inflow;
        cube.outflow = outflow;
        Ok(cube)
    }

    pub fn tg_minutes(&self) -> u32 {
        self.tg_minutes
    }

    pub fn calendar(&self) -> &ServiceCalendar {
        &self.calendar
    }

    pub fn stations(&self) -> usize {
        self.stations
    }

    pub fn slots_per_day(&self) -> usize {
        slots_per_day(self.tg_minutes).expect("validated at construction")
    }

    /// Total number of slot columns.
    pub fn columns(&self) -> usize {
        self.calendar.len() * self.slots_per_day()
    }

    pub fn column(&self, day: usize, slot: usize) -> usize {
        day * self.slots_per_day() + slot
    }

    pub fn timestamp(&self, column: usize) -> NaiveDateTime {
        let spd = self.slots_per_day();
        self.calendar.slot_start(column / spd, column % spd, self.tg_minutes)
    }

    /// Row-major `stations × columns`.
    pub fn inflow(&self) -> &[u32] {
        &self.inflow
    }

    pub fn outflow(&self) -> &[u32] {
        &self.outflow
    }

    pub fn inflow_at(&self, station: usize, column: usize) -> u32 {
        self.inflow[station * self.columns() + column]
    }

    pub fn outflow_at(&self, station: usize, column: usize) -> u32 {
        self.outflow[station * self.columns() + column]
    }

    pub fn total_inflow(&self) -> u64 {
        self.inflow.iter().map(|&c| c as u64).sum()
    }

    /// Re-bins to a coarser granularity by summing `factor` consecutive slots.
    pub fn aggregate(&self, factor: usize) -> Result<FlowCube> {
        let tg = self.tg_minutes * factor as u32;
        let spd = self.slots_per_day();
        if factor == 0 || !spd.is_multiple_of(factor) {
            return Err(DataError::Config(format!("cannot aggregate {}-minute slots by {factor}", self.tg_minutes)));
        }
        let rows = |m: &[u32]| -> Result<Vec<u32>> {
            let mut out = Vec::with_capacity(m.len() / factor);
            for row in m.chunks(self.columns()) {
                out.extend(aggregate_tg(row, factor)?);
            }
            Ok(out)
        };
        FlowCube::from_counts(self.stations, self.calendar.clone(), tg, rows(&self.inflow)?, rows(&self.outflow)?)
    }
}

/// Counts each record once at its tap-in station (inflow, by entry time) and
/// once at its tap-out station (outflow, by exit time). Bins are half-open.
pub fn ingest_afc(
    records: &[AfcRecord],
    graph: &MetroGraph,
    calendar: &ServiceCalendar,
    tg_minutes: u32,
) -> Result<(FlowCube, IngestStats)> {
    let mut cube = FlowCube::zeros(graph.station_count(), calendar.clone(), tg_minutes)?;
    let cols = cube.columns();
    let spd = cube.slots_per_day();
    let mut stats = IngestStats {
        records: records.len(),
        ..Default::default()
    };
    let station = |id: &str| graph.station_index(id).ok_or_else(|| DataError::UnknownStation(id.to_string()));
    for r in records {
        let (si, so) = (station(&r.entry_station)?, station(&r.exit_station)?);
        match calendar.locate(r.entry_time) {
            Some((day, minute)) => {
                cube.inflow[si * cols + day * spd + (minute / tg_minutes) as usize] += 1;
                stats.entries_counted += 1;
            }
            None => stats.entries_skipped += 1,
        }
        match calendar.locate(r.exit_time) {
            Some((day, minute)) => {
                cube.outflow[so * cols + day * spd + (minute / tg_minutes) as usize] += 1;
                stats.exits_counted += 1;
            }
            None => stats.exits_skipped += 1,
        }
    }
    if stats.entries_skipped + stats.exits_skipped > 0 {
        log::info!(
            "skipped {} tap-ins and {} tap-outs outside the service window",
            stats.entries_skipped,
            stats.exits_skipped
        );
    }
    Ok((cube, stats))
}

/// Non-overlapping sums of `factor` consecutive values.
pub fn aggregate_tg<V: Copy + Sum<V>>(series: &[V], factor: usize) -> Result<Vec<V>> {
    if factor == 0 || !series.len().is_multiple_of(factor) {
        return Err(DataError::Length {
            op: "aggregate_tg",
            expected: series.len().next_multiple_of(factor.max(1)),
            got: series.len(),
        });
    }
    Ok(series.chunks(factor).map(|c| c.iter().copied().sum()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Line;
    use chrono::NaiveDate;

    fn setup() -> (MetroGraph, ServiceCalendar) {
        let g = MetroGraph::from_lines(&[Line {
            id: "1".into(),
            stations: vec!["X".into(), "Y".into()],
        }])
        .unwrap();
        let cal = ServiceCalendar::workdays(NaiveDate::from_ymd_opt(2016, 2, 29).unwrap(), 1).unwrap();
        (g, cal)
    }

    fn rec(cal: &ServiceCalendar, h: u32, m: u32) -> AfcRecord {
        let t = cal.days()[0].and_hms_opt(h, m, 0).unwrap();
        AfcRecord {
            card_id: "c".into(),
            entry_station: "X".into(),
            exit_station: "Y".into(),
            entry_time: t,
            exit_time: t + chrono::Duration::minutes(4),
        }
    }

    #[test]
    fn counts_entries_in_first_bin() {
        let (g, cal) = setup();
        let (cube, stats) = ingest_afc(&[rec(&cal, 5, 3), rec(&cal, 5, 7)], &g, &cal, 10).unwrap();
        assert_eq!(cube.inflow_at(0, 0), 2);
        assert_eq!(cube.outflow_at(1, 0), 1);
        assert_eq!(cube.outflow_at(1, 1), 1);
        assert_eq!(stats.entries_counted, 2);
    }

    #[test]
    fn empty_records_give_zero_cube() {
        let (g, cal) = setup();
        let (cube, _) = ingest_afc(&[], &g, &cal, 30).unwrap();
        assert_eq!(cube.total_inflow(), 0);
        assert_eq!(cube.columns(), 36);
    }

    #[test]
    fn bin_boundary_is_half_open() {
        let (g, cal) = setup();
        let (cube, _) = ingest_afc(&[rec(&cal, 5, 10)], &g, &cal, 10).unwrap();
        assert_eq!(cube.inflow_at(0, 0), 0);
        assert_eq!(cube.inflow_at(0, 1), 1);
    }

    #[test]
    fn out_of_window_and_unknown_station() {
        let (g, cal) = setup();
        let mut late = rec(&cal, 22, 58);
        late.exit_time = late.entry_time + chrono::Duration::minutes(5);
        let early = rec(&cal, 4, 50);
        let (cube, stats) = ingest_afc(&[late, early], &g, &cal, 10).unwrap();
        assert_eq!((stats.entries_skipped, stats.exits_skipped), (1, 2));
        assert_eq!(cube.total_inflow(), 1);
        let mut bad = rec(&cal, 6, 0);
        bad.exit_station = "Q".into();
        assert!(matches!(ingest_afc(&[bad], &g, &cal, 10), Err(DataError::UnknownStation(s)) if s == "Q"));
    }

    #[test]
    fn aggregate_cases() {
        assert_eq!(aggregate_tg(&[3, 4, 5], 3).unwrap(), vec![12]);
        assert_eq!(aggregate_tg(&[0u32; 6], 2).unwrap(), vec![0, 0, 0]);
        assert!(aggregate_tg(&[1, 2, 3, 4], 3).is_err());
    }

    #[test]
    fn aggregation_matches_direct_ingestion() {
        let (g, cal) = setup();
        let recs: Vec<_> = (0..200).map(|i| rec(&cal, 5 + (i * 7 % 18) as u32, (i * 13 % 60) as u32)).collect();
        let (c10, _) = ingest_afc(&recs, &g, &cal, 10).unwrap();
        let (c15, _) = ingest_afc(&recs, &g, &cal, 15).unwrap();
        let (c30, _) = ingest_afc(&recs, &g, &cal, 30).unwrap();
        assert_eq!(c10.aggregate(3).unwrap(), c30);
        assert_eq!(c15.aggregate(2).unwrap(), c30);
    }
}
