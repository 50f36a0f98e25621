//! Metro network topology and the normalized graph-signal transform.
//!
//! Stations are indexed in line order: lines are walked in declaration order
//! and each station takes the next free index the first time it is seen, so
//! neighbours along a line occupy neighbouring rows. A transfer station is a
//! single vertex shared by every line that serves it.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge references unknown station `{0}`")]
    UnknownStation(String),
    #[error("self-loop at station `{0}`")]
    SelfLoop(String),
    #[error("graph has no stations")]
    Empty,
    #[error("infeasible topology: {0}")]
    Infeasible(String),
    #[error("malformed topology file {path}: {reason}")]
    Format { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Line {
    pub id: String,
    pub stations: Vec<String>,
}

/// Station graph with its renormalized adjacency precomputed.
#[derive(Debug, Clone)]
pub struct MetroGraph {
    stations: Vec<String>,
    index: HashMap<String, usize>,
    lines: Vec<Line>,
    /// row-major `s×s`, entries 0/1, zero diagonal
    adjacency: Vec<u8>,
    /// diagonal of `D̂`, degree of `A + I`
    degree: Vec<f64>,
    /// `D̂^{-1/2} (A + I) D̂^{-1/2}`, row-major `s×s`
    laplacian: Vec<f64>,
}

impl MetroGraph {
    /// Builds the graph from an undirected edge list and the line definitions
    /// that fix the station order. Duplicate edges are merged.
    pub fn build(edges: &[(String, String)], lines: &[Line]) -> Result<Self, GraphError> {
        let mut stations = Vec::new();
        let mut index = HashMap::new();
        for line in lines {
            for s in &line.stations {
                if !index.contains_key(s) {
                    index.insert(s.clone(), stations.len());
                    stations.push(s.clone());
                }
            }
        }
        if stations.is_empty() {
            return Err(GraphError::Empty);
        }
        let n = stations.len();
        let mut adjacency = vec![0u8; n * n];
        for (a, b) in edges {
            let ia = *index.get(a).ok_or_else(|| GraphError::UnknownStation(a.clone()))?;
            let ib = *index.get(b).ok_or_else(|| GraphError::UnknownStation(b.clone()))?;
            if ia == ib {
                return Err(GraphError::SelfLoop(a.clone()));
            }
            adjacency[ia * n + ib] = 1;
            adjacency[ib * n + ia] = 1;
        }
        let degree: Vec<f64> = (0..n)
            .map(|i| 1.0 + adjacency[i * n..(i + 1) * n].iter().map(|&a| a as f64).sum::<f64>())
            .collect();
        let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
        let mut laplacian = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let a_hat = if i == j { 1.0 } else { adjacency[i * n + j] as f64 };
                if a_hat != 0.0 {
                    laplacian[i * n + j] = inv_sqrt[i] * a_hat * inv_sqrt[j];
                }
            }
        }
        // exact symmetry regardless of multiplication order
        for i in 0..n {
            for j in 0..i {
                laplacian[i * n + j] = laplacian[j * n + i];
            }
        }
        Ok(MetroGraph {
            stations,
            index,
            lines: lines.to_vec(),
            adjacency,
            degree,
            laplacian,
        })
    }

    /// Track connectivity only: consecutive stations on each line are adjacent.
    pub fn from_lines(lines: &[Line]) -> Result<Self, GraphError> {
        Self::build(&line_edges(lines), lines)
    }

    pub fn station_count(&self) -> usize {
        self.stations.len()
    }

    pub fn stations(&self) -> &[String] {
        &self.stations
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn station_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.station_count() + j] == 1
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    /// Row-major `s×s` normalized operator.
    pub fn laplacian(&self) -> &[f64] {
        &self.laplacian
    }

    /// Number of lines serving each station.
    pub fn line_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.station_count()];
        for line in &self.lines {
            let unique: HashSet<&String> = line.stations.iter().collect();
            for s in unique {
                counts[self.index[s]] += 1;
            }
        }
        counts
    }

    /// Undirected edge list, each edge once with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.station_count();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.adjacent(i, j))
            .collect()
    }

    /// Hop distances from `src` by breadth-first search; `usize::MAX` when unreachable.
    pub fn hops_from(&self, src: usize) -> Vec<usize> {
        let n = self.station_count();
        let mut dist = vec![usize::MAX; n];
        let mut queue = std::collections::VecDeque::from([src]);
        dist[src] = 0;
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if self.adjacent(u, v) && dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.hops_from(0).iter().all(|&d| d != usize::MAX)
    }

    /// `L · X` for a row-major `s×cols` signal.
    pub fn transform_signal(&self, signal: &[f64], cols: usize) -> Vec<f64> {
        let n = self.station_count();
        assert_eq!(signal.len(), n * cols, "signal must have one row per station");
        let mut out = vec![0.0; n * cols];
        for i in 0..n {
            for k in 0..n {
                let l = self.laplacian[i * n + k];
                if l == 0.0 {
                    continue;
                }
                for c in 0..cols {
                    out[i * cols + c] += l * signal[k * cols + c];
                }
            }
        }
        out
    }

    pub fn laplacian_tensor<T: Scalar>(&self) -> Tensor<T> {
        let n = self.station_count();
        Tensor::from_f64(&[n, n], &self.laplacian).expect("square operator")
    }

    /// Writes `edges.csv` (`station_a,station_b`) and `lines.csv`
    /// (`line_id,station_1,...,station_k`) into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<(), GraphError> {
        let mut w = csv::Writer::from_path(dir.join(EDGES_FILE))?;
        w.write_record(["station_a", "station_b"])?;
        for (i, j) in self.edges() {
            w.write_record([&self.stations[i], &self.stations[j]])?;
        }
        w.flush()?;
        let mut f = File::create(dir.join(LINES_FILE))?;
        for line in &self.lines {
            let mut row = vec![line.id.as_str()];
            row.extend(line.stations.iter().map(String::as_str));
            writeln!(f, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_files(edges_path: &Path, lines_path: &Path) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(edges_path)?;
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(GraphError::Format {
                    path: edges_path.display().to_string(),
                    reason: format!("expected 2 fields, got {}", rec.len()),
                });
            }
            edges.push((rec[0].trim().to_string(), rec[1].trim().to_string()));
        }
        let mut lines = Vec::new();
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(lines_path)?;
        for rec in r.records() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(GraphError::Format {
                    path: lines_path.display().to_string(),
                    reason: "line rows need an id and at least one station".into(),
                });
            }
            lines.push(Line {
                id: rec[0].trim().to_string(),
                stations: rec.iter().skip(1).map(|s| s.trim().to_string()).collect(),
            });
        }
        Self::build(&edges, &lines)
    }
}

pub const EDGES_FILE: &str = "edges.csv";
pub const LINES_FILE: &str = "lines.csv";

pub fn line_edges(lines: &[Line]) -> Vec<(String, String)> {
    lines
        .iter()
        .flat_map(|l| l.stations.windows(2).map(|w| (w[0].clone(), w[1].clone())))
        .filter(|(a, b)| a != b)
        .collect()
}

/// Applies the normalized operator on the tape: `[s, t] → [s, t]`, or
/// batched `[B, s, t] → [B, s, t]`. Differentiable in the signal.
pub fn graph_transform<T: Scalar>(tape: &mut Tape<T>, graph: &MetroGraph, signal: Var) -> Result<Var, TensorError> {
    let shape = tape.shape(signal).to_vec();
    let s = graph.station_count();
    let rows = match shape.as_slice() {
        [r, _] | [_, r, _] => *r,
        _ => return Err(TensorError::dim("graph_transform", &[s, s], &shape)),
    };
    if rows != s {
        return Err(TensorError::dim("graph_transform", &[s, s], &shape));
    }
    let l = tape.constant(graph.laplacian_tensor());
    if shape.len() == 2 {
        return tape.matmul(l, signal);
    }
    let (b, t) = (shape[0], shape[2]);
    let x = tape.permute(signal, &[1, 0, 2])?;
    let x = tape.reshape(x, &[s, b * t])?;
    let y = tape.matmul(l, x)?;
    let y = tape.reshape(y, &[s, b, t])?;
    tape.permute(y, &[1, 0, 2])
}

/// Chains `n_lines` lines of `stations_per_line` stations, merging
/// `n_transfers` stations of later lines with stations of earlier ones.
/// Every line after the first receives at least one transfer, so the result
/// is connected.
pub fn synth_topology(
    n_lines: usize,
    stations_per_line: usize,
    n_transfers: usize,
    seed: u64,
) -> Result<MetroGraph, GraphError> {
    if n_lines == 0 || stations_per_line == 0 {
        return Err(GraphError::Infeasible("need at least one line and one station per line".into()));
    }
    let min = n_lines - 1;
    let max = (n_lines - 1) * stations_per_line;
    if n_transfers < min || n_transfers > max {
        return Err(GraphError::Infeasible(format!(
            "{n_transfers} transfers for {n_lines} lines of {stations_per_line}: need {min}..={max}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_line = vec![0usize; n_lines];
    for k in 0..n_transfers {
        per_line[1 + k % (n_lines - 1).max(1)] += 1;
    }
    let mut lines: Vec<Line> = Vec::with_capacity(n_lines);
    for (l, &transfers) in per_line.iter().enumerate() {
        let mut stations: Vec<String> = (0..stations_per_line).map(|p| format!("L{}S{}", l + 1, p + 1)).collect();
        if transfers > 0 {
            let mut earlier: Vec<String> = {
                let mut seen = HashSet::new();
                lines
                    .iter()
                    .flat_map(|x| x.stations.iter().cloned())
                    .filter(|s| seen.insert(s.clone()))
                    .collect()
            };
            earlier.shuffle(&mut rng);
            let mut positions: Vec<usize> = (0..stations_per_line).collect();
            positions.shuffle(&mut rng);
            for (&pos, shared) in positions.iter().take(transfers).zip(earlier) {
                stations[pos] = shared;
            }
        }
        lines.push(Line {
            id: format!("{}", l + 1),
            stations,
        });
    }
    let earlier_count = |l: usize| -> usize {
        let set: HashSet<&String> = lines[..l].iter().flat_map(|x| x.stations.iter()).collect();
        set.len()
    };
    for (l, &t) in per_line.iter().enumerate().skip(1) {
        if t > earlier_count(l) {
            return Err(GraphError::Infeasible(format!(
                "line {} needs {t} transfers but only {} earlier stations exist",
                l + 1,
                earlier_count(l)
            )));
        }
    }
    MetroGraph::from_lines(&lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, st: &[&str]) -> Line {
        Line {
            id: id.into(),
            stations: st.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn edge(a: &str, b: &str) -> (String, String) {
        (a.into(), b.into())
    }

    #[test]
    fn isolated_station_is_one() {
        let g = MetroGraph::build(&[], &[line("1", &["A"])]).unwrap();
        assert_eq!(g.laplacian(), &[1.0]);
    }

    #[test]
    fn two_station_edge_is_all_half() {
        let g = MetroGraph::build(&[edge("A", "B")], &[line("1", &["A", "B"])]).unwrap();
        for &v in g.laplacian() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn triangle_is_all_third() {
        let edges = [edge("A", "B"), edge("B", "C"), edge("C", "A"), edge("A", "B")];
        let g = MetroGraph::build(&edges, &[line("1", &["A", "B", "C"])]).unwrap();
        assert_eq!(g.edges().len(), 3);
        for &v in g.laplacian() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_station_and_self_loop_rejected() {
        let lines = [line("1", &["A", "B"])];
        assert!(matches!(
            MetroGraph::build(&[edge("A", "Z")], &lines),
            Err(GraphError::UnknownStation(s)) if s == "Z"
        ));
        assert!(matches!(MetroGraph::build(&[edge("A", "A")], &lines), Err(GraphError::SelfLoop(_))));
        assert!(matches!(MetroGraph::build(&[], &[]), Err(GraphError::Empty)));
    }

    #[test]
    fn station_order_follows_lines_and_transfers_merge() {
        let lines = [line("1", &["A", "B", "C"]), line("2", &["D", "B", "E"])];
        let g = MetroGraph::from_lines(&lines).unwrap();
        assert_eq!(g.stations(), &["A", "B", "C", "D", "E"]);
        assert_eq!(g.line_counts(), vec![1, 2, 1, 1, 1]);
        assert!(g.adjacent(1, 3) && g.adjacent(1, 4) && !g.adjacent(0, 2));
    }

    #[test]
    fn transform_cases() {
        let iso = MetroGraph::build(&[], &[line("1", &["A", "B"])]).unwrap();
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(iso.transform_signal(&x, 2), x.to_vec());

        let path = MetroGraph::from_lines(&[line("1", &["A", "B"])]).unwrap();
        let y = path.transform_signal(&[1.0, 3.0], 1);
        assert!((y[0] - 2.0).abs() < 1e-12 && (y[1] - 2.0).abs() < 1e-12);

        let tri = MetroGraph::build(
            &[edge("A", "B"), edge("B", "C"), edge("C", "A")],
            &[line("1", &["A", "B", "C"])],
        )
        .unwrap();
        let y = tri.transform_signal(&[5.0, -1.0, 5.0, -1.0, 5.0, -1.0], 2);
        for (a, b) in y.iter().zip([5.0, -1.0, 5.0, -1.0, 5.0, -1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tape_transform_matches_plain_and_checks_rows() {
        let g = MetroGraph::from_lines(&[line("1", &["A", "B", "C"])]).unwrap();
        let data: Vec<f64> = (0..2 * 3 * 4).map(|i| i as f64 * 0.5 - 3.0).collect();
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[2, 3, 4], &data).unwrap());
        let y = graph_transform(&mut tape, &g, x).unwrap();
        for b in 0..2 {
            let want = g.transform_signal(&data[b * 12..(b + 1) * 12], 4);
            for (a, w) in tape.value(y).data()[b * 12..(b + 1) * 12].iter().zip(&want) {
                assert!((a - w).abs() < 1e-12);
            }
        }
        let bad = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(matches!(graph_transform(&mut tape, &g, bad), Err(TensorError::Dimension { .. })));
    }

    #[test]
    fn synth_single_line_is_path() {
        let g = synth_topology(1, 5, 0, 7).unwrap();
        assert_eq!(g.station_count(), 5);
        assert_eq!(g.edges(), vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
    }

    #[test]
    fn synth_two_lines_one_transfer() {
        let g = synth_topology(2, 4, 1, 3).unwrap();
        assert_eq!(g.station_count(), 7);
        assert!(g.is_connected());
        assert_eq!(g.line_counts().iter().filter(|&&c| c == 2).count(), 1);
    }

    #[test]
    fn synth_is_deterministic_and_validates() {
        let a = synth_topology(3, 5, 3, 11).unwrap();
        let b = synth_topology(3, 5, 3, 11).unwrap();
        assert_eq!(a.adjacency, b.adjacency);
        assert_eq!(a.stations(), b.stations());
        assert!(matches!(synth_topology(3, 5, 1, 0), Err(GraphError::Infeasible(_))));
        assert!(matches!(synth_topology(1, 5, 1, 0), Err(GraphError::Infeasible(_))));
        assert!(matches!(synth_topology(0, 5, 0, 0), Err(GraphError::Infeasible(_))));
    }

    #[test]
    fn files_round_trip() {
        let g = synth_topology(2, 4, 1, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        g.write_files(dir.path()).unwrap();
        let back = MetroGraph::read_files(&dir.path().join(EDGES_FILE), &dir.path().join(LINES_FILE)).unwrap();
        assert_eq!(back.stations(), g.stations());
        assert_eq!(back.laplacian(), g.laplacian());
    }
}
