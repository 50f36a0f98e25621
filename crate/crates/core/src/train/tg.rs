use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{compute_metrics, Evaluation, Metrics, Result, TrainError};
use crate::data::Instant;

/// Test predictions at one granularity.
#[derive(Debug, Clone)]
pub struct TgSeries {
    pub tg_minutes: u32,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TgRow {
    /// `10*3`, `15*2` or `30`.
    pub label: String,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TgReport {
    pub rows: Vec<TgRow>,
    /// 30-minute target slots covered at every granularity.
    pub common_slots: usize,
}

/// Sums each granularity's predictions and actuals into 30-minute slots,
/// keyed by `(day, slot30)`, keeping only slots whose every sub-slot was
/// predicted.
fn to_thirty(series: &TgSeries) -> Result<BTreeMap<Instant, (Vec<f64>, Vec<f64>)>> {
    let factor = match series.tg_minutes {
        10 => 3,
        15 => 2,
        30 => 1,
        other => return Err(TrainError::Config(format!("unsupported granularity {other}"))),
    };
    let e = &series.evaluation;
    let s = e.stations;
    let mut acc: BTreeMap<Instant, (usize, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (i, inst) in e.instants.iter().enumerate() {
        let key = Instant {
            day: inst.day,
            slot: inst.slot / factor,
        };
        let entry = acc.entry(key).or_insert_with(|| (0, vec![0.0; s], vec![0.0; s]));
        entry.0 += 1;
        for st in 0..s {
            entry.1[st] += e.actual[i * s + st];
            entry.2[st] += e.predicted[i * s + st];
        }
    }
    Ok(acc
        .into_iter()
        .filter(|(_, (count, _, _))| *count == factor)
        .map(|(k, (_, a, p))| (k, (a, p)))
        .collect())
}

/// Compares 10-minute (aggregated ×3), 15-minute (×2) and native 30-minute
/// predictions on their common 30-minute target slots. Fails if the
/// aggregated actuals disagree with the native ones.
pub fn tg_experiment(series: &[TgSeries; 3]) -> Result<TgReport> {
    let tgs: Vec<u32> = series.iter().map(|s| s.tg_minutes).collect();
    if tgs != [10, 15, 30] {
        return Err(TrainError::Config(format!("expected granularities [10, 15, 30], got {tgs:?}")));
    }
    let stations = series[2].evaluation.stations;
    if series.iter().any(|s| s.evaluation.stations != stations) {
        return Err(TrainError::Config("granularities disagree on station count".into()));
    }
    let maps = series.iter().map(to_thirty).collect::<Result<Vec<_>>>()?;
    let common: BTreeSet<Instant> = maps[0]
        .keys()
        .filter(|k| maps[1].contains_key(k) && maps[2].contains_key(k))
        .copied()
        .collect();
    if common.is_empty() {
        return Err(TrainError::Config("evaluation periods do not overlap at 30 minutes".into()));
    }
    for (label, m) in [("10*3", &maps[0]), ("15*2", &maps[1])] {
        for k in &common {
            if m[k].0 != maps[2][k].0 {
                return Err(TrainError::Config(format!("aggregated {label} actuals differ from native 30-minute actuals at {k:?}")));
            }
        }
    }
    let mut rows = Vec::new();
    for (label, m) in [("10*3", &maps[0]), ("15*2", &maps[1]), ("30", &maps[2])] {
        let (mut a, mut p) = (Vec::new(), Vec::new());
        for k in &common {
            a.extend_from_slice(&m[k].0);
            p.extend_from_slice(&m[k].1);
        }
        rows.push(TgRow {
            label: label.into(),
            metrics: compute_metrics(&a, &p)?,
        });
    }
    Ok(TgReport {
        rows,
        common_slots: common.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(tg: u32, slots: std::ops::Range<usize>, value: impl Fn(usize) -> f64) -> TgSeries {
        let instants: Vec<Instant> = slots.map(|slot| Instant { day: 5, slot }).collect();
        let actual: Vec<f64> = instants.iter().map(|i| value(i.slot)).collect();
        TgSeries {
            tg_minutes: tg,
            evaluation: Evaluation {
                metrics: compute_metrics(&actual, &actual).unwrap(),
                stations: 1,
                predicted: actual.iter().map(|a| a + 1.0).collect(),
                actual,
                instants,
            },
        }
    }

    #[test]
    fn three_rows_on_common_slots() {
        // constant 10 per 10 minutes, 15 per 15 minutes, 30 per 30 minutes
        let r = tg_experiment(&[
            series(10, 5..108, |_| 10.0),
            series(15, 5..72, |_| 15.0),
            series(30, 5..36, |_| 30.0),
        ])
        .unwrap();
        assert_eq!(r.rows.iter().map(|r| r.label.as_str()).collect::<Vec<_>>(), ["10*3", "15*2", "30"]);
        assert_eq!(r.common_slots, 31);
        // every sub-slot prediction is off by one
        assert_eq!(r.rows[0].metrics.mae, 3.0);
        assert_eq!(r.rows[1].metrics.mae, 2.0);
        assert_eq!(r.rows[2].metrics.mae, 1.0);
    }

    #[test]
    fn inconsistent_actuals_rejected() {
        let err = tg_experiment(&[
            series(10, 5..108, |_| 10.0),
            series(15, 5..72, |_| 16.0),
            series(30, 5..36, |_| 30.0),
        ]);
        assert!(matches!(err, Err(TrainError::Config(_))));
    }

    #[test]
    fn identical_predictions_give_identical_rows() {
        let mut a = series(30, 5..36, |s| s as f64);
        a.tg_minutes = 30;
        let ten = series(10, 15..108, |s| (s / 3) as f64 / 3.0);
        let mut ten = ten;
        // predictions at 10 minutes sum to the 30-minute predictions exactly
        ten.evaluation.predicted = ten.evaluation.instants.iter().map(|i| ((i.slot / 3) as f64 + 1.0) / 3.0).collect();
        let fifteen = TgSeries {
            tg_minutes: 15,
            evaluation: Evaluation {
                metrics: a.evaluation.metrics,
                stations: 1,
                instants: (10..72).map(|slot| Instant { day: 5, slot }).collect(),
                actual: (10..72).map(|s| (s / 2) as f64 / 2.0).collect(),
                predicted: (10..72).map(|s| ((s / 2) as f64 + 1.0) / 2.0).collect(),
            },
        };
        let r = tg_experiment(&[ten, fifteen, a]).unwrap();
        for row in &r.rows {
            assert!((row.metrics.mae - r.rows[2].metrics.mae).abs() < 1e-12);
        }
    }
}
