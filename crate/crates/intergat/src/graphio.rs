//! Dataset ingestion and preparation: CSV adjacency + speed matrices,
//! linear interpolation of missing readings, min/max normalization,
//! sliding-window train/test splitting, and a seeded community-structured
//! synthetic generator for desk-scale runs.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numkern::Mat;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: unparseable number `{token}`")]
    Parse {
        path: String,
        line: usize,
        token: String,
    },
    #[error("adjacency matrix is not square: {rows} rows, {cols} cols")]
    NonSquareAdjacency { rows: usize, cols: usize },
    #[error("{path}:{line}: row has {got} values, expected {want}")]
    RowLength {
        path: String,
        line: usize,
        got: usize,
        want: usize,
    },
    #[error("speed matrix has {cols} columns but the graph has {nodes} nodes")]
    NodeMismatch { cols: usize, nodes: usize },
    #[error("signal is constant ({value}); min/max normalization is degenerate")]
    ConstantSignal { value: f64 },
    #[error("series too short: {total} steps, need at least {required} for n={history} + horizon={horizon}")]
    TooShort {
        total: usize,
        required: usize,
        history: usize,
        horizon: usize,
    },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("history length must be at least 1")]
    ZeroHistory,
    #[error("requested {communities} communities for {nodes} nodes")]
    TooManyCommunities { communities: usize, nodes: usize },
    #[error("need at least 2 communities, got {0}")]
    TooFewCommunities(usize),
    #[error("a node has no observed values to interpolate from")]
    AllMissing,
}

/// Static topology: node count and a nonnegative adjacency matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Graph {
    pub n: usize,
    pub adjacency: Mat,
}

impl Graph {
    pub fn new(adjacency: Mat) -> Result<Self, DataError> {
        if adjacency.rows() != adjacency.cols() {
            return Err(DataError::NonSquareAdjacency {
                rows: adjacency.rows(),
                cols: adjacency.cols(),
            });
        }
        Ok(Graph {
            n: adjacency.rows(),
            adjacency,
        })
    }

    /// Connected components under the `a_ij > 0` edge relation (undirected).
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.n;
        let mut seen = vec![false; n];
        let mut comps = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut stack = vec![start];
            let mut comp = Vec::new();
            seen[start] = true;
            while let Some(i) = stack.pop() {
                comp.push(i);
                for j in 0..n {
                    if !seen[j] && (self.adjacency[(i, j)] > 0.0 || self.adjacency[(j, i)] > 0.0) {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() <= 1
    }
}

/// Time-major node signal: `steps` frames of `nodes` × `features` values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SignalTensor {
    pub steps: usize,
    pub nodes: usize,
    pub features: usize,
    /// Flat layout: value(t, i, f) at index (t*nodes + i)*features + f.
    pub values: Vec<f64>,
}

impl SignalTensor {
    pub fn zeros(steps: usize, nodes: usize, features: usize) -> Self {
        SignalTensor {
            steps,
            nodes,
            features,
            values: vec![0.0; steps * nodes * features],
        }
    }

    pub fn get(&self, t: usize, i: usize, f: usize) -> f64 {
        self.values[(t * self.nodes + i) * self.features + f]
    }

    pub fn set(&mut self, t: usize, i: usize, f: usize, v: f64) {
        self.values[(t * self.nodes + i) * self.features + f] = v;
    }

    /// One frame as an N×F matrix.
    pub fn frame(&self, t: usize) -> Mat {
        Mat::from_fn(self.nodes, self.features, |i, f| self.get(t, i, f))
    }
}

/// min/max record for undoing normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub min: f64,
    pub max: f64,
}

impl NormRecord {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, x: f64) -> f64 {
        x * (self.max - self.min) + self.min
    }

    pub fn scale(&self) -> f64 {
        self.max - self.min
    }
}

/// One supervised example: `history` input frames followed by `horizon`
/// target frames, as indices into the source signal.
#[derive(Clone, Copy, Debug)]
pub struct Window {
    pub start: usize,
    pub history: usize,
    pub horizon: usize,
}

impl Window {
    pub fn input_frames(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.history
    }

    pub fn target_frames(&self) -> std::ops::Range<usize> {
        self.start + self.history..self.start + self.history + self.horizon
    }
}

/// Chronologically split sliding windows over a normalized signal.
#[derive(Clone, Debug)]
pub struct WindowedDataset {
    pub signal: SignalTensor,
    pub history: usize,
    pub horizon: usize,
    pub train: Vec<Window>,
    pub test: Vec<Window>,
    pub norm: NormRecord,
}

impl WindowedDataset {
    pub fn inputs(&self, w: &Window) -> Vec<Mat> {
        w.input_frames().map(|t| self.signal.frame(t)).collect()
    }

    pub fn targets(&self, w: &Window) -> Vec<Mat> {
        w.target_frames().map(|t| self.signal.frame(t)).collect()
    }
}

/// How missing speed readings are flagged in the input files.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Only empty cells are missing (default).
    #[default]
    EmptyCell,
    /// Empty cells and exact zeros are both treated as missing.
    ZeroAsMissing,
}

fn read_numeric_csv(path: &Path, missing: Option<MissingPolicy>) -> Result<Vec<Vec<Option<f64>>>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        let mut bad_token: Option<String> = None;
        for tok in trimmed.split(',') {
            let tok = tok.trim();
            if tok.is_empty() {
                row.push(None);
                continue;
            }
            match tok.parse::<f64>() {
                Ok(v) => {
                    let is_missing = matches!(missing, Some(MissingPolicy::ZeroAsMissing)) && v == 0.0;
                    row.push(if is_missing { None } else { Some(v) });
                }
                Err(_) => {
                    bad_token = Some(tok.to_string());
                    break;
                }
            }
        }
        if let Some(tok) = bad_token {
            // A non-numeric first line is treated as a header and skipped.
            if rows.is_empty() && idx == 0 {
                continue;
            }
            return Err(DataError::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                token: tok,
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Per-node linear interpolation of missing entries; endpoints take the
/// nearest observed value. Observed values are left untouched.
fn interpolate_column(col: &mut [Option<f64>]) -> Result<Vec<f64>, DataError> {
    let observed: Vec<usize> = col
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|_| i))
        .collect();
    if observed.is_empty() {
        return Err(DataError::AllMissing);
    }
    let mut out = vec![0.0; col.len()];
    for t in 0..col.len() {
        if let Some(v) = col[t] {
            out[t] = v;
            continue;
        }
        // nearest observed neighbors on each side
        let prev = observed.iter().rev().find(|&&i| i < t).copied();
        let next = observed.iter().find(|&&i| i > t).copied();
        out[t] = match (prev, next) {
            (Some(p), Some(n)) => {
                let w = (t - p) as f64 / (n - p) as f64;
                col[p].unwrap() * (1.0 - w) + col[n].unwrap() * w
            }
            (Some(p), None) => col[p].unwrap(),
            (None, Some(n)) => col[n].unwrap(),
            (None, None) => unreachable!(),
        };
    }
    Ok(out)
}

/// Load an adjacency CSV and a speeds CSV. Speeds are T rows × N columns;
/// if the orientation is flipped (rows == N, cols != N) the matrix is
/// transposed. Missing entries are linearly interpolated per node.
pub fn load_csv_dataset(
    adjacency_path: &Path,
    speeds_path: &Path,
    missing: MissingPolicy,
) -> Result<(Graph, SignalTensor), DataError> {
    let adj_rows = read_numeric_csv(adjacency_path, None)?;
    let n = adj_rows.len();
    let mut adj = Mat::zeros(n, n);
    for (r, row) in adj_rows.iter().enumerate() {
        if row.len() != n {
            return Err(DataError::NonSquareAdjacency {
                rows: n,
                cols: row.len(),
            });
        }
        for (c, v) in row.iter().enumerate() {
            adj[(r, c)] = v.unwrap_or(0.0);
        }
    }
    let graph = Graph::new(adj)?;

    let mut speed_rows = read_numeric_csv(speeds_path, Some(missing))?;
    let width = speed_rows.first().map(|r| r.len()).unwrap_or(0);
    for (i, row) in speed_rows.iter().enumerate() {
        if row.len() != width {
            return Err(DataError::RowLength {
                path: speeds_path.display().to_string(),
                line: i + 1,
                got: row.len(),
                want: width,
            });
        }
    }
    // Auto-detect orientation: rows should be time steps.
    if width != n && speed_rows.len() == n {
        let t = width;
        let mut flipped = vec![vec![None; n]; t];
        for (i, row) in speed_rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                flipped[j][i] = *v;
            }
        }
        speed_rows = flipped;
    }
    let width = speed_rows.first().map(|r| r.len()).unwrap_or(0);
    if width != n {
        return Err(DataError::NodeMismatch { cols: width, nodes: n });
    }

    let steps = speed_rows.len();
    let mut signal = SignalTensor::zeros(steps, n, 1);
    for node in 0..n {
        let mut col: Vec<Option<f64>> = (0..steps).map(|t| speed_rows[t][node]).collect();
        let filled = interpolate_column(&mut col)?;
        for (t, v) in filled.into_iter().enumerate() {
            signal.set(t, node, 0, v);
        }
    }
    Ok((graph, signal))
}

/// Global min/max normalization to [0,1]. Statistics come from the first
/// `stats_steps` frames (the training portion); the record allows exact
/// inversion for metric computation.
pub fn normalize(signal: &SignalTensor, stats_steps: usize) -> Result<(SignalTensor, NormRecord), DataError> {
    let stats_steps = stats_steps.min(signal.steps).max(1);
    let slice = &signal.values[..stats_steps * signal.nodes * signal.features];
    let min = slice.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return Err(DataError::ConstantSignal { value: min });
    }
    let rec = NormRecord { min, max };
    let mut out = signal.clone();
    for v in out.values.iter_mut() {
        *v = rec.apply(*v);
    }
    Ok((out, rec))
}

/// Sliding windows of `history` input frames + `horizon` target frames,
/// stride 1, split chronologically by target position. The fraction `ratio`
/// of windows (floor) goes to the train side.
pub fn window_split(
    signal: SignalTensor,
    history: usize,
    horizon: usize,
    ratio: f64,
    norm: NormRecord,
) -> Result<WindowedDataset, DataError> {
    if horizon == 0 {
        return Err(DataError::ZeroHorizon);
    }
    if history == 0 {
        return Err(DataError::ZeroHistory);
    }
    let required = history + horizon + 1;
    if signal.steps < required {
        return Err(DataError::TooShort {
            total: signal.steps,
            required,
            history,
            horizon,
        });
    }
    let count = signal.steps - history - horizon;
    let windows: Vec<Window> = (0..count)
        .map(|start| Window {
            start,
            history,
            horizon,
        })
        .collect();
    let n_train = ((count as f64) * ratio).floor() as usize;
    let (train, test) = windows.split_at(n_train.min(count));
    Ok(WindowedDataset {
        signal,
        history,
        horizon,
        train: train.to_vec(),
        test: test.to_vec(),
        norm,
    })
}

/// Stochastic block model adjacency plus per-community phase-shifted
/// sinusoidal signals with small noise, clipped to [0,1]. Deterministic
/// under the seed.
pub fn synth_community_traffic(
    nodes: usize,
    communities: usize,
    steps: usize,
    seed: u64,
) -> Result<(Graph, SignalTensor, Vec<usize>), DataError> {
    if communities < 2 {
        return Err(DataError::TooFewCommunities(communities));
    }
    if communities > nodes {
        return Err(DataError::TooManyCommunities { communities, nodes });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..nodes).map(|i| i * communities / nodes).collect();

    const P_INTRA: f64 = 0.6;
    const P_INTER: f64 = 0.05;
    let mut adj = Mat::zeros(nodes, nodes);
    for i in 0..nodes {
        for j in (i + 1)..nodes {
            let p = if labels[i] == labels[j] { P_INTRA } else { P_INTER };
            if rng.random::<f64>() < p {
                adj[(i, j)] = 1.0;
                adj[(j, i)] = 1.0;
            }
        }
    }
    let graph = Graph::new(adj)?;

    let period = 48.0;
    let mut signal = SignalTensor::zeros(steps, nodes, 1);
    let phase_offsets: Vec<f64> = (0..nodes).map(|_| rng.random_range(-0.15..0.15)).collect();
    for t in 0..steps {
        for i in 0..nodes {
            let phase = 2.0 * std::f64::consts::PI * labels[i] as f64 / communities as f64;
            let base = 0.5
                + 0.35
                    * (2.0 * std::f64::consts::PI * t as f64 / period + phase + phase_offsets[i]).sin();
            let noise = rng.random_range(-0.05..0.05);
            signal.set(t, i, 0, (base + noise).clamp(0.0, 1.0));
        }
    }
    Ok((graph, signal, labels))
}

/// Write a graph + signal back out in the same CSV schema `load_csv_dataset`
/// reads (adjacency: N rows; speeds: T rows × N columns).
pub fn write_csv_dataset(
    graph: &Graph,
    signal: &SignalTensor,
    adjacency_path: &Path,
    speeds_path: &Path,
) -> Result<(), DataError> {
    let io_err = |p: &Path, e: std::io::Error| DataError::Io {
        path: p.display().to_string(),
        source: e,
    };
    let mut adj = String::new();
    for r in 0..graph.n {
        let row: Vec<String> = (0..graph.n).map(|c| format!("{}", graph.adjacency[(r, c)])).collect();
        let _ = writeln!(adj, "{}", row.join(","));
    }
    std::fs::write(adjacency_path, adj).map_err(|e| io_err(adjacency_path, e))?;
    let mut sp = String::new();
    for t in 0..signal.steps {
        let row: Vec<String> = (0..signal.nodes).map(|i| format!("{}", signal.get(t, i, 0))).collect();
        let _ = writeln!(sp, "{}", row.join(","));
    }
    std::fs::write(speeds_path, sp).map_err(|e| io_err(speeds_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmp_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn minimal_well_formed_load() {
        let adj = tmp_file("0,1\n1,0\n");
        let sp = tmp_file("1.0,2.0\n3.0,4.0\n5.0,6.0\n7.0,8.0\n");
        let (g, s) = load_csv_dataset(adj.path(), sp.path(), MissingPolicy::EmptyCell).unwrap();
        assert_eq!(g.n, 2);
        assert_eq!(s.steps, 4);
        assert_eq!(s.get(3, 1, 0), 8.0);
    }

    #[test]
    fn interior_gap_interpolates_to_midpoint() {
        let adj = tmp_file("0,1\n1,0\n");
        let sp = tmp_file("2.0,10.0\n,\n4.0,14.0\n");
        let (_, s) = load_csv_dataset(adj.path(), sp.path(), MissingPolicy::EmptyCell).unwrap();
        assert_eq!(s.get(1, 0, 0), 3.0);
        assert_eq!(s.get(1, 1, 0), 12.0);
        // observed values untouched bit-for-bit
        assert_eq!(s.get(0, 0, 0), 2.0);
        assert_eq!(s.get(2, 1, 0), 14.0);
    }

    #[test]
    fn zeros_as_missing_policy() {
        let adj = tmp_file("0,1\n1,0\n");
        let sp = tmp_file("2.0,10.0\n0,0\n4.0,14.0\n");
        let (_, s) = load_csv_dataset(adj.path(), sp.path(), MissingPolicy::ZeroAsMissing).unwrap();
        assert_eq!(s.get(1, 0, 0), 3.0);
        let (_, s) = load_csv_dataset(adj.path(), sp.path(), MissingPolicy::EmptyCell).unwrap();
        assert_eq!(s.get(1, 0, 0), 0.0);
    }

    #[test]
    fn non_square_adjacency_rejected() {
        let adj = tmp_file("0,1,0\n1,0,1\n");
        let sp = tmp_file("1,2\n");
        assert!(load_csv_dataset(adj.path(), sp.path(), MissingPolicy::EmptyCell).is_err());
    }

    #[test]
    fn parse_error_carries_line_number() {
        let adj = tmp_file("0,1\n1,0\n");
        let sp = tmp_file("1.0,2.0\n1.0,oops\n");
        let err = load_csv_dataset(adj.path(), sp.path(), MissingPolicy::EmptyCell)
            .unwrap_err()
            .to_string();
        assert!(err.contains(":2:"), "{err}");
        assert!(err.contains("oops"), "{err}");
    }

    #[test]
    fn orientation_auto_transpose() {
        // 2 nodes, 3 steps, written node-major (rows == N)
        let adj = tmp_file("0,1\n1,0\n");
        let sp = tmp_file("1,2,3\n4,5,6\n");
        let (_, s) = load_csv_dataset(adj.path(), sp.path(), MissingPolicy::EmptyCell).unwrap();
        assert_eq!(s.steps, 3);
        assert_eq!(s.get(0, 1, 0), 4.0);
        assert_eq!(s.get(2, 0, 0), 3.0);
    }

    #[test]
    fn normalize_basic_and_roundtrip() {
        let mut s = SignalTensor::zeros(3, 1, 1);
        s.set(0, 0, 0, 0.0);
        s.set(1, 0, 0, 5.0);
        s.set(2, 0, 0, 10.0);
        let (n, rec) = normalize(&s, 3).unwrap();
        assert_eq!(n.values, vec![0.0, 0.5, 1.0]);
        for (orig, normed) in s.values.iter().zip(&n.values) {
            assert!((rec.invert(*normed) - orig).abs() <= 1e-9);
        }
    }

    #[test]
    fn normalize_idempotent_on_unit_range() {
        let mut s = SignalTensor::zeros(2, 1, 1);
        s.set(0, 0, 0, 0.0);
        s.set(1, 0, 0, 1.0);
        let (n, rec) = normalize(&s, 2).unwrap();
        assert_eq!(rec, NormRecord { min: 0.0, max: 1.0 });
        assert_eq!(n.values, s.values);
    }

    #[test]
    fn normalize_constant_rejected() {
        let s = SignalTensor::zeros(4, 2, 1);
        assert!(matches!(normalize(&s, 4), Err(DataError::ConstantSignal { .. })));
    }

    #[test]
    fn window_counts_by_enumeration() {
        let s = SignalTensor::zeros(20, 2, 1);
        let ds = window_split(s, 12, 1, 0.8, NormRecord { min: 0.0, max: 1.0 }).unwrap();
        assert_eq!(ds.train.len() + ds.test.len(), 7);
        assert_eq!(ds.train.len(), 5);
        assert_eq!(ds.test.len(), 2);
        // chronological: every train target precedes every test target
        let max_train = ds.train.iter().map(|w| w.target_frames().end).max().unwrap();
        let min_test = ds.test.iter().map(|w| w.target_frames().start).min().unwrap();
        assert!(max_train <= min_test);
    }

    #[test]
    fn window_zero_horizon_rejected() {
        let s = SignalTensor::zeros(20, 2, 1);
        assert!(matches!(
            window_split(s, 12, 0, 0.8, NormRecord { min: 0.0, max: 1.0 }),
            Err(DataError::ZeroHorizon)
        ));
    }

    #[test]
    fn window_too_short_states_minimum() {
        let s = SignalTensor::zeros(10, 2, 1);
        let err = window_split(s, 12, 1, 0.8, NormRecord { min: 0.0, max: 1.0 })
            .unwrap_err()
            .to_string();
        assert!(err.contains("14"), "{err}");
    }

    #[test]
    fn windows_reconstruct_series_segment() {
        let mut s = SignalTensor::zeros(12, 1, 1);
        for t in 0..12 {
            s.set(t, 0, 0, t as f64);
        }
        let ds = window_split(s, 3, 2, 1.0, NormRecord { min: 0.0, max: 1.0 }).unwrap();
        // concatenating each window's frames reproduces the original segment
        for w in &ds.train {
            for (off, t) in w.input_frames().enumerate() {
                assert_eq!(ds.inputs(w)[off][(0, 0)], t as f64);
            }
            for (off, t) in w.target_frames().enumerate() {
                assert_eq!(ds.targets(w)[off][(0, 0)], t as f64);
            }
        }
    }

    #[test]
    fn synth_deterministic_and_bounded() {
        let (g1, s1, l1) = synth_community_traffic(20, 4, 100, 7).unwrap();
        let (g2, s2, l2) = synth_community_traffic(20, 4, 100, 7).unwrap();
        assert_eq!(g1.adjacency, g2.adjacency);
        assert_eq!(s1.values, s2.values);
        assert_eq!(l1, l2);
        assert!(s1.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let (g3, _, _) = synth_community_traffic(20, 4, 100, 8).unwrap();
        assert_ne!(g1.adjacency, g3.adjacency);
    }

    #[test]
    fn synth_intra_density_exceeds_inter() {
        for seed in [1u64, 2, 3, 4, 5] {
            let (g, _, labels) = synth_community_traffic(24, 4, 10, seed).unwrap();
            let (mut intra_e, mut intra_p, mut inter_e, mut inter_p) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..24 {
                for j in (i + 1)..24 {
                    if labels[i] == labels[j] {
                        intra_p += 1.0;
                        intra_e += g.adjacency[(i, j)];
                    } else {
                        inter_p += 1.0;
                        inter_e += g.adjacency[(i, j)];
                    }
                }
            }
            assert!(intra_e / intra_p > inter_e / inter_p, "seed {seed}");
        }
    }

    #[test]
    fn synth_community_bounds() {
        assert!(synth_community_traffic(4, 8, 10, 0).is_err());
        assert!(synth_community_traffic(4, 1, 10, 0).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let (g, s, _) = synth_community_traffic(10, 2, 30, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ap = dir.path().join("adj.csv");
        let sp = dir.path().join("speeds.csv");
        write_csv_dataset(&g, &s, &ap, &sp).unwrap();
        let (g2, s2) = load_csv_dataset(&ap, &sp, MissingPolicy::EmptyCell).unwrap();
        assert_eq!(g.adjacency, g2.adjacency);
        for (a, b) in s.values.iter().zip(&s2.values) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}
