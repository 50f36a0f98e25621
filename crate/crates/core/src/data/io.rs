//! CSV readers and writers for records, recordings and flow-cube caches.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{DataError, FlowCube, Result};
use crate::graph::MetroGraph;

pub fn write_rows<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| with_path(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| with_path(path, e))).collect()
}

fn with_path(path: &Path, e: csv::Error) -> DataError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => return DataError::Io(io),
            _ => unreachable!("checked io kind"),
        }
    }
    DataError::Format {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// Writes one direction of a cube: header `station,<slot start times>`, one
/// row per station in graph order.
pub fn write_cube(path: &Path, cube: &FlowCube, graph: &MetroGraph, inflow: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["station".to_string()];
    header.extend((0..cube.columns()).map(|c| cube.timestamp(c).format("%Y-%m-%dT%H:%M:%S").to_string()));
    w.write_record(&header)?;
    let cols = cube.columns();
    let m = if inflow { cube.inflow() } else { cube.outflow() };
    for (s, id) in graph.stations().iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(m[s * cols..(s + 1) * cols].iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a cube direction back as a `stations × columns` matrix, checking
/// station order against `graph`.
pub fn read_cube(path: &Path, graph: &MetroGraph) -> Result<Vec<u32>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| with_path(path, e))?;
    let fmt = |reason: String| DataError::Format {
        path: path.display().to_string(),
        reason,
    };
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| with_path(path, e))?;
        let expected = graph.stations().get(i).ok_or_else(|| fmt("more rows than stations".into()))?;
        if &rec[0] != expected {
            return Err(fmt(format!("row {i} is station `{}`, expected `{expected}`", &rec[0])));
        }
        for v in rec.iter().skip(1) {
            out.push(v.parse().map_err(|_| fmt(format!("bad count `{v}`")))?);
        }
    }
    Ok(out)
}
