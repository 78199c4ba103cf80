//! Graph representation, masks, synthetic dataset generators, node-feature
//! initialization, quantization, and graph file I/O.
//!
//! All tensors are padded to a per-dataset `n_max` with boolean node masks
//! rather than ragged batching. Edges are undirected: adjacencies are
//! symmetric with zero diagonal, and everything outside the mask is zero.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::GraphError;
use crate::rng::NoiseSource;

/// Padded graph: node features `x` (n_max x f), weighted adjacency `a`
/// (n_max x n_max), node mask, and active node count.
#[derive(Clone, Debug)]
pub struct Graph {
    pub x: Tensor,
    pub a: Tensor,
    pub mask: Vec<bool>,
    pub n: usize,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.mask == other.mask
            && self.x.shape() == other.x.shape()
            && self.a.shape() == other.a.shape()
            && self.x.data() == other.x.data()
            && self.a.data() == other.a.data()
    }
}

impl Graph {
    /// Builds a graph from an unpadded adjacency, padding to `n_max` and
    /// deriving degree-one-hot features of width `f_max`.
    pub fn from_adjacency(adj: &[Vec<f64>], n_max: usize, f_max: usize) -> Result<Self, GraphError> {
        let n = adj.len();
        if n > n_max {
            return Err(GraphError::InvalidGraph(format!("{n} nodes exceed n_max {n_max}")));
        }
        let mut a = vec![0.0; n_max * n_max];
        for (i, row) in adj.iter().enumerate() {
            if row.len() != n {
                return Err(GraphError::InvalidGraph("adjacency not square".into()));
            }
            for (j, &w) in row.iter().enumerate() {
                a[i * n_max + j] = w;
            }
        }
        let mut mask = vec![false; n_max];
        for m in mask.iter_mut().take(n) {
            *m = true;
        }
        let a = Tensor::from_vec(&[n_max, n_max], a)
            .map_err(|e| GraphError::InvalidGraph(e.to_string()))?;
        let x = degree_onehot_features(&a, &mask, f_max)?;
        let g = Graph { x, a, mask, n };
        g.validate()?;
        Ok(g)
    }

    pub fn n_max(&self) -> usize {
        self.mask.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.x.cols()
    }

    /// Count of nonzero-weight neighbors of node `i`.
    pub fn degree(&self, i: usize) -> usize {
        let n_max = self.n_max();
        (0..n_max).filter(|&j| self.a.at(i, j) != 0.0).count()
    }

    /// Checks structural invariants: symmetry, zero diagonal, masked slots
    /// zero, mask/count agreement.
    pub fn validate(&self) -> Result<(), GraphError> {
        let n_max = self.n_max();
        if self.a.shape() != [n_max, n_max] {
            return Err(GraphError::InvalidGraph("adjacency shape".into()));
        }
        if self.x.rows() != n_max {
            return Err(GraphError::InvalidGraph("feature rows".into()));
        }
        if self.n != self.mask.iter().filter(|&&m| m).count() {
            return Err(GraphError::InvalidGraph("mask/count mismatch".into()));
        }
        for i in 0..n_max {
            if self.a.at(i, i) != 0.0 {
                return Err(GraphError::InvalidGraph(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n_max {
                if self.a.at(i, j) != self.a.at(j, i) {
                    return Err(GraphError::InvalidGraph(format!("asymmetry at ({i},{j})")));
                }
                if (!self.mask[i] || !self.mask[j]) && self.a.at(i, j) != 0.0 {
                    return Err(GraphError::InvalidGraph(format!("masked entry ({i},{j})")));
                }
            }
            if !self.mask[i]
                && self.x.data()[i * self.x.cols()..(i + 1) * self.x.cols()]
                    .iter()
                    .any(|v| *v != 0.0)
            {
                return Err(GraphError::InvalidGraph(format!("masked feature row {i}")));
            }
        }
        Ok(())
    }

    /// Applies a node permutation consistently to features, adjacency and
    /// mask: row i of the result is row perm[i] of the input.
    pub fn permute(&self, perm: &[usize]) -> Graph {
        let n_max = self.n_max();
        let f = self.feature_dim();
        let mut x = vec![0.0; n_max * f];
        let mut a = vec![0.0; n_max * n_max];
        let mut mask = vec![false; n_max];
        for i in 0..n_max {
            let pi = perm[i];
            mask[i] = self.mask[pi];
            x[i * f..(i + 1) * f].copy_from_slice(&self.x.data()[pi * f..(pi + 1) * f]);
            for j in 0..n_max {
                a[i * n_max + j] = self.a.at(pi, perm[j]);
            }
        }
        Graph {
            x: Tensor::from_parts(vec![n_max, f], x, None),
            a: Tensor::from_parts(vec![n_max, n_max], a, None),
            mask,
            n: self.n,
        }
    }

    /// Active-node degree multiset, for permutation-invariance checks.
    pub fn degree_multiset(&self) -> Vec<usize> {
        let mut d: Vec<usize> = (0..self.n_max())
            .filter(|&i| self.mask[i])
            .map(|i| self.degree(i))
            .collect();
        d.sort_unstable();
        d
    }
}

/// One-hot degree features: `X[i] = onehot(degree(i))` for active nodes,
/// zero rows otherwise.
pub fn degree_onehot_features(a: &Tensor, mask: &[bool], f_max: usize) -> Result<Tensor, GraphError> {
    let n_max = mask.len();
    let mut x = vec![0.0; n_max * f_max];
    for i in 0..n_max {
        if !mask[i] {
            continue;
        }
        let deg = (0..n_max).filter(|&j| a.at(i, j) != 0.0).count();
        if deg >= f_max {
            return Err(GraphError::DegreeOverflow { degree: deg, f_max });
        }
        x[i * f_max + deg] = 1.0;
    }
    Ok(Tensor::from_parts(vec![n_max, f_max], x, None))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitTag {
    Train,
    Test,
}

/// A set of equally-padded graphs with shared feature dimension and an
/// empirical node-count histogram.
#[derive(Clone, Debug)]
pub struct GraphDataset {
    pub graphs: Vec<Graph>,
    pub f: usize,
    pub n_max: usize,
    /// (node count, occurrences), sorted by node count.
    pub node_count_histogram: Vec<(usize, usize)>,
    /// Split assignment aligned with `graphs`; `None` when unsplit.
    pub split: Option<Vec<SplitTag>>,
}

impl PartialEq for GraphDataset {
    fn eq(&self, other: &Self) -> bool {
        self.graphs == other.graphs && self.f == other.f && self.n_max == other.n_max
    }
}

impl GraphDataset {
    pub fn from_graphs(graphs: Vec<Graph>) -> Self {
        let f = graphs.first().map(|g| g.feature_dim()).unwrap_or(0);
        let n_max = graphs.first().map(|g| g.n_max()).unwrap_or(0);
        let mut hist = std::collections::BTreeMap::new();
        for g in &graphs {
            *hist.entry(g.n).or_insert(0usize) += 1;
        }
        Self { graphs, f, n_max, node_count_histogram: hist.into_iter().collect(), split: None }
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Deterministic 80/20 split: a seeded shuffle assigns tags in place.
    pub fn assign_split(&mut self, seed: u64) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let n_train = (self.len() * 4) / 5;
        let mut tags = vec![SplitTag::Test; self.len()];
        for &i in idx.iter().take(n_train) {
            tags[i] = SplitTag::Train;
        }
        self.split = Some(tags);
    }

    fn view(&self, tag: SplitTag) -> GraphDataset {
        let graphs = match &self.split {
            Some(tags) => self
                .graphs
                .iter()
                .zip(tags)
                .filter(|(_, t)| **t == tag)
                .map(|(g, _)| g.clone())
                .collect(),
            None => self.graphs.clone(),
        };
        let mut ds = GraphDataset::from_graphs(graphs);
        ds.f = self.f;
        ds.n_max = self.n_max;
        ds
    }

    pub fn train_view(&self) -> GraphDataset {
        self.view(SplitTag::Train)
    }

    pub fn test_view(&self) -> GraphDataset {
        self.view(SplitTag::Test)
    }

    /// Draws a node count from the empirical histogram.
    pub fn sample_node_count(&self, noise: &mut dyn NoiseSource) -> usize {
        assert!(!self.is_empty(), "sample_node_count on empty dataset");
        let total: usize = self.node_count_histogram.iter().map(|(_, c)| c).sum();
        let mut u = noise.uniform() * total as f64;
        for (n, c) in &self.node_count_histogram {
            u -= *c as f64;
            if u < 0.0 {
                return *n;
            }
        }
        self.node_count_histogram.last().expect("nonempty").0
    }
}

/// Generator parameters for the two-community dataset. The reference values
/// follow the common lineage of this benchmark and can be overridden.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CommunityParams {
    pub p_intra: f64,
    pub p_inter: f64,
    pub n_min: usize,
    pub n_max: usize,
}

impl Default for CommunityParams {
    fn default() -> Self {
        Self { p_intra: 0.7, p_inter: 0.05, n_min: 12, n_max: 20 }
    }
}

/// Two Erdos-Renyi communities of sizes ceil(n/2) and floor(n/2) with sparse
/// inter-community edges; at least one cross edge is forced.
pub fn generate_community_small(
    count: usize,
    params: &CommunityParams,
    noise: &mut dyn NoiseSource,
) -> Result<GraphDataset, GraphError> {
    let mut raw: Vec<Vec<Vec<f64>>> = Vec::with_capacity(count);
    for _ in 0..count {
        let span = params.n_max - params.n_min + 1;
        let n = params.n_min + (noise.uniform() * span as f64) as usize;
        let n = n.min(params.n_max);
        let n1 = n.div_ceil(2);
        let mut adj = vec![vec![0.0; n]; n];
        for (lo, hi) in [(0, n1), (n1, n)] {
            for i in lo..hi {
                for j in (i + 1)..hi {
                    if noise.uniform() < params.p_intra {
                        adj[i][j] = 1.0;
                        adj[j][i] = 1.0;
                    }
                }
            }
        }
        let mut crossed = false;
        for i in 0..n1 {
            for j in n1..n {
                if noise.uniform() < params.p_inter {
                    adj[i][j] = 1.0;
                    adj[j][i] = 1.0;
                    crossed = true;
                }
            }
        }
        if !crossed {
            let i = ((noise.uniform() * n1 as f64) as usize).min(n1 - 1);
            let j = (n1 + (noise.uniform() * (n - n1) as f64) as usize).min(n - 1);
            adj[i][j] = 1.0;
            adj[j][i] = 1.0;
        }
        raw.push(adj);
    }
    dataset_from_raw(raw)
}

/// 2D lattices with side lengths drawn uniformly from [10, 20].
pub fn generate_grid(count: usize, noise: &mut dyn NoiseSource) -> Result<GraphDataset, GraphError> {
    let mut raw = Vec::with_capacity(count);
    for _ in 0..count {
        let w = (10 + (noise.uniform() * 11.0) as usize).min(20);
        let h = (10 + (noise.uniform() * 11.0) as usize).min(20);
        let n = w * h;
        let mut adj = vec![vec![0.0; n]; n];
        for r in 0..h {
            for c in 0..w {
                let u = r * w + c;
                if c + 1 < w {
                    adj[u][u + 1] = 1.0;
                    adj[u + 1][u] = 1.0;
                }
                if r + 1 < h {
                    adj[u][u + w] = 1.0;
                    adj[u + w][u] = 1.0;
                }
            }
        }
        raw.push(adj);
    }
    dataset_from_raw(raw)
}

fn dataset_from_raw(raw: Vec<Vec<Vec<f64>>>) -> Result<GraphDataset, GraphError> {
    let n_max = raw.iter().map(|a| a.len()).max().unwrap_or(0);
    let max_deg = raw
        .iter()
        .flat_map(|a| a.iter().map(|row| row.iter().filter(|w| **w != 0.0).count()))
        .max()
        .unwrap_or(0);
    let f_max = max_deg + 1;
    let graphs = raw
        .iter()
        .map(|a| Graph::from_adjacency(a, n_max, f_max))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GraphDataset::from_graphs(graphs))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum QuantizeMode {
    /// Entry -> 1 iff > 0.5.
    Binary,
    /// Round to nearest integer with half-integer bin edges, clipped to
    /// [0, k-1].
    Levels(usize),
}

fn quantize_entry(v: f64, mode: QuantizeMode) -> f64 {
    match mode {
        QuantizeMode::Binary => {
            if v > 0.5 {
                1.0
            } else {
                0.0
            }
        }
        QuantizeMode::Levels(k) => (v + 0.5).floor().clamp(0.0, (k - 1) as f64),
    }
}

/// Quantizes a raw real matrix into an adjacency: per-entry quantization,
/// symmetrization by (Q + Q^T)/2 with re-quantization, zero diagonal, mask.
pub fn quantize(a_raw: &Tensor, mode: QuantizeMode, mask: &[bool]) -> Tensor {
    let n = a_raw.rows();
    debug_assert_eq!(a_raw.cols(), n);
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j || !mask[i] || !mask[j] {
                continue;
            }
            let q_ij = quantize_entry(a_raw.at(i, j), mode);
            let q_ji = quantize_entry(a_raw.at(j, i), mode);
            out[i * n + j] = quantize_entry(0.5 * (q_ij + q_ji), mode);
        }
    }
    Tensor::from_parts(vec![n, n], out, None)
}

// ---- edge-list file format ----
//
//   #graphs <count>
//   g <n>
//   e <i> <j> <weight>
//
// Indices are 0-based; weights are written as integers when integral.

pub fn format_edge_list(ds: &GraphDataset) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "#graphs {}", ds.len());
    for g in &ds.graphs {
        let _ = writeln!(s, "g {}", g.n);
        for i in 0..g.n_max() {
            for j in (i + 1)..g.n_max() {
                let w = g.a.at(i, j);
                if w != 0.0 {
                    if w.fract() == 0.0 {
                        let _ = writeln!(s, "e {} {} {}", i, j, w as i64);
                    } else {
                        let _ = writeln!(s, "e {} {} {:?}", i, j, w);
                    }
                }
            }
        }
    }
    s
}

pub fn save_graphs(ds: &GraphDataset, path: &Path) -> Result<(), GraphError> {
    std::fs::write(path, format_edge_list(ds))?;
    Ok(())
}

pub fn parse_edge_list(text: &str) -> Result<GraphDataset, GraphError> {
    let mut raw: Vec<Vec<(usize, usize, f64)>> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    let mut declared: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line_num = lineno + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts[0] {
            "#graphs" => {
                if parts.len() != 2 {
                    return Err(GraphError::ParseError {
                        line: line_num,
                        detail: "expected '#graphs <count>'".into(),
                    });
                }
                declared = Some(parts[1].parse().map_err(|_| GraphError::ParseError {
                    line: line_num,
                    detail: "bad graph count".into(),
                })?);
            }
            "g" => {
                if parts.len() != 2 {
                    return Err(GraphError::ParseError {
                        line: line_num,
                        detail: "expected 'g <n>'".into(),
                    });
                }
                sizes.push(parts[1].parse().map_err(|_| GraphError::ParseError {
                    line: line_num,
                    detail: "bad node count".into(),
                })?);
                raw.push(Vec::new());
            }
            "e" => {
                if parts.len() != 4 {
                    return Err(GraphError::ParseError {
                        line: line_num,
                        detail: format!("expected 'e <i> <j> <weight>', got {} fields", parts.len()),
                    });
                }
                let parse = |s: &str, what: &str| -> Result<usize, GraphError> {
                    s.parse().map_err(|_| GraphError::ParseError {
                        line: line_num,
                        detail: format!("bad {what}"),
                    })
                };
                let i = parse(parts[1], "source index")?;
                let j = parse(parts[2], "target index")?;
                let w: f64 = parts[3].parse().map_err(|_| GraphError::ParseError {
                    line: line_num,
                    detail: "bad weight".into(),
                })?;
                let cur = raw.last_mut().ok_or(GraphError::ParseError {
                    line: line_num,
                    detail: "edge before any 'g' header".into(),
                })?;
                let n = *sizes.last().expect("sizes tracks raw");
                if i >= n || j >= n {
                    return Err(GraphError::ParseError {
                        line: line_num,
                        detail: format!("index out of range for {n}-node graph"),
                    });
                }
                cur.push((i, j, w));
            }
            _ => {
                return Err(GraphError::ParseError {
                    line: line_num,
                    detail: format!("unrecognized record '{}'", parts[0]),
                })
            }
        }
    }
    if let Some(d) = declared {
        if d != raw.len() {
            return Err(GraphError::ParseError {
                line: 1,
                detail: format!("header declares {d} graphs, file has {}", raw.len()),
            });
        }
    }
    if raw.is_empty() {
        return Ok(GraphDataset::from_graphs(vec![]));
    }
    let adjs: Vec<Vec<Vec<f64>>> = raw
        .iter()
        .zip(&sizes)
        .map(|(edges, &n)| {
            let mut a = vec![vec![0.0; n]; n];
            for &(i, j, w) in edges {
                a[i][j] = w;
                a[j][i] = w;
            }
            a
        })
        .collect();
    dataset_from_raw(adjs)
}

pub fn load_edge_list(path: &Path) -> Result<GraphDataset, GraphError> {
    parse_edge_list(&std::fs::read_to_string(path)?)
}

#[derive(Serialize, Deserialize)]
struct JsonGraph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

#[derive(Serialize, Deserialize)]
struct JsonDataset {
    graphs: Vec<JsonGraph>,
}

/// JSON export mirroring the edge-list schema.
pub fn save_graphs_json(ds: &GraphDataset, path: &Path) -> Result<(), GraphError> {
    let out = JsonDataset {
        graphs: ds
            .graphs
            .iter()
            .map(|g| {
                let mut edges = Vec::new();
                for i in 0..g.n_max() {
                    for j in (i + 1)..g.n_max() {
                        if g.a.at(i, j) != 0.0 {
                            edges.push((i, j, g.a.at(i, j)));
                        }
                    }
                }
                JsonGraph { n: g.n, edges }
            })
            .collect(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&out).expect("serializable"))?;
    Ok(())
}
