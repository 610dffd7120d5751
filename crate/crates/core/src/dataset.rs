//! Inductive neighborhood sampling, feature normalization and dataset files.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::GraphDoc;
use crate::stats::{conditioning_vector, ConditioningVector};
use crate::{Error, Graph, Point3, Result, MAX_NODES, NEIGH_MAX, NUM_FEATURES};

/// A small locally re-indexed graph centered at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSample {
    pub graph: Graph,
    /// Node id of the sampling center in the source web; `None` for generated samples.
    pub center: Option<usize>,
    /// `None` when the sample has no edges.
    pub features: Option<ConditioningVector>,
}

impl GraphSample {
    /// Wraps a graph, centering it and computing its features.
    pub fn from_graph(graph: Graph, center: Option<usize>) -> Self {
        let graph = graph.centered();
        let features = conditioning_vector(&graph).ok();
        Self { graph, center, features }
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }
}

/// Hop-limited BFS sample around `center`.
///
/// Nodes are kept layer by layer, in ascending original id within a layer, until `cap`
/// nodes are collected. The induced subgraph is re-indexed in that order and centered at
/// its centroid.
pub fn inductive_sample(g: &Graph, center: usize, depth: usize, cap: usize) -> Result<GraphSample> {
    let n = g.node_count();
    if center >= n {
        return Err(Error::NodeOutOfRange { index: center, len: n });
    }
    let adj = g.adjacency();
    let mut visited = vec![false; n];
    visited[center] = true;
    let mut order = vec![center];
    let mut layer = vec![center];
    for _ in 0..depth {
        if order.len() >= cap {
            break;
        }
        let mut next: Vec<usize> = Vec::new();
        for &v in &layer {
            for &u in &adj[v] {
                if !visited[u] {
                    visited[u] = true;
                    next.push(u);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        next.sort_unstable();
        order.extend_from_slice(&next);
        layer = next;
    }
    order.truncate(cap);
    Ok(GraphSample::from_graph(g.induced_subgraph(&order), Some(center)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub depth: usize,
    pub cap: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { depth: 4, cap: MAX_NODES, train_fraction: 0.9, seed: 0 }
    }
}

/// Samples with their train/test assignment and the scaling fitted on the train portion.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<GraphSample>,
    pub split: Vec<Split>,
    pub scaling: NormalizationParams,
}

impl Dataset {
    pub fn train(&self) -> impl Iterator<Item = &GraphSample> {
        self.samples.iter().zip(&self.split).filter(|(_, s)| **s == Split::Train).map(|(x, _)| x)
    }

    pub fn test(&self) -> impl Iterator<Item = &GraphSample> {
        self.samples.iter().zip(&self.split).filter(|(_, s)| **s == Split::Test).map(|(x, _)| x)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// One sample per node of `g`, ordered by center id.
///
/// Centers whose sample has no edges (isolated nodes) carry no features and are skipped.
pub fn sample_all(g: &Graph, depth: usize, cap: usize) -> Result<Vec<GraphSample>> {
    let mut out = Vec::with_capacity(g.node_count());
    for c in 0..g.node_count() {
        let s = inductive_sample(g, c, depth, cap)?;
        if s.features.is_none() {
            log::warn!("center {c} has no edges within reach; skipped");
            continue;
        }
        out.push(s);
    }
    Ok(out)
}

/// Samples every node, splits, and fits normalization on the train split.
pub fn build_dataset(g: &Graph, cfg: &DatasetConfig) -> Result<Dataset> {
    let violations = g.validate(true);
    if !violations.is_empty() {
        return Err(Error::InvalidGraph(crate::graph::join_violations(&violations)));
    }
    let samples = sample_all(g, cfg.depth, cfg.cap)?;
    let (train_idx, _) = split_indices(samples.len(), cfg.train_fraction, cfg.seed)?;
    let mut split = vec![Split::Test; samples.len()];
    for &i in &train_idx {
        split[i] = Split::Train;
    }
    let train: Vec<&GraphSample> = train_idx.iter().map(|&i| &samples[i]).collect();
    let scaling = NormalizationParams::fit(train.iter().copied())?;
    Ok(Dataset { samples, split, scaling })
}

/// Seeded shuffle of `0..n` cut into `ceil(fraction * n)` train and the remainder test.
/// The test side keeps at least one element.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples to split, got {n}")));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidArgument(format!("train fraction {train_fraction} outside [0,1]")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((train_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n - 1);
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

pub fn split(
    samples: &[GraphSample],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<GraphSample>, Vec<GraphSample>)> {
    let (tr, te) = split_indices(samples.len(), train_fraction, seed)?;
    Ok((
        tr.into_iter().map(|i| samples[i].clone()).collect(),
        te.into_iter().map(|i| samples[i].clone()).collect(),
    ))
}

/// Maps coordinates and conditioning features into `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    /// Shared scale for x, y and z.
    pub coord_scale: f64,
    /// `(min, max)` for each conditioning feature.
    pub feature_ranges: [(f64, f64); NUM_FEATURES],
}

impl NormalizationParams {
    pub fn fit<'a>(train: impl IntoIterator<Item = &'a GraphSample>) -> Result<Self> {
        let mut coord_scale = 0.0f64;
        let mut ranges = [(f64::INFINITY, f64::NEG_INFINITY); NUM_FEATURES];
        let mut count = 0;
        for s in train {
            count += 1;
            for p in s.graph.positions() {
                coord_scale = coord_scale.max(p.x.abs()).max(p.y.abs()).max(p.z.abs());
            }
            if let Some(f) = &s.features {
                for (r, v) in ranges.iter_mut().zip(f.to_array()) {
                    r.0 = r.0.min(v);
                    r.1 = r.1.max(v);
                }
            }
        }
        if count == 0 {
            return Err(Error::InvalidArgument("cannot fit normalization on an empty set".into()));
        }
        for r in &mut ranges {
            if !r.0.is_finite() {
                *r = (0.0, 0.0);
            }
        }
        if coord_scale <= 0.0 {
            coord_scale = 1.0;
        }
        Ok(Self { coord_scale, feature_ranges: ranges })
    }

    pub fn normalize_point(&self, p: Point3) -> Point3 {
        Point3::new(p.x / self.coord_scale, p.y / self.coord_scale, p.z / self.coord_scale)
    }

    pub fn denormalize_point(&self, p: Point3) -> Point3 {
        p * self.coord_scale
    }

    pub fn normalize_feature(&self, i: usize, v: f64) -> f64 {
        let (lo, hi) = self.feature_ranges[i];
        if hi > lo {
            2.0 * (v - lo) / (hi - lo) - 1.0
        } else {
            0.0
        }
    }

    pub fn denormalize_feature(&self, i: usize, v: f64) -> f64 {
        let (lo, hi) = self.feature_ranges[i];
        if hi > lo {
            (v + 1.0) * (hi - lo) / 2.0 + lo
        } else {
            lo
        }
    }

    pub fn normalize_features(&self, c: &ConditioningVector) -> [f64; NUM_FEATURES] {
        let mut out = c.to_array();
        for (i, v) in out.iter_mut().enumerate() {
            *v = self.normalize_feature(i, *v);
        }
        out
    }

    pub fn denormalize_features(&self, v: &[f64; NUM_FEATURES]) -> ConditioningVector {
        let mut out = *v;
        for (i, x) in out.iter_mut().enumerate() {
            *x = self.denormalize_feature(i, *x);
        }
        ConditioningVector::from_array(out)
    }
}

/// Parameters for [`synthetic_web`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWebConfig {
    pub node_target: usize,
    /// Lattice spacing in meters.
    pub spacing: f64,
    /// Per-coordinate jitter as a fraction of `spacing`.
    pub jitter: f64,
    pub seed: u64,
}

/// A random geometric stand-in web.
///
/// Points sit on a jittered cubic lattice filled in raster order. Lattice-neighbor pairs are
/// candidate edges: a shortest-first spanning tree keeps the web connected, and every other
/// candidate no longer than `spacing` is kept as well. Without jitter every lattice edge
/// survives, so interior nodes have degree 6; jitter thins the web unevenly.
pub fn synthetic_web(cfg: &SyntheticWebConfig) -> Result<Graph> {
    let n = cfg.node_target;
    if n < 2 {
        return Err(Error::InvalidArgument(format!("node_target must be >= 2, got {n}")));
    }
    if !(cfg.spacing > 0.0) || !(cfg.jitter >= 0.0) {
        return Err(Error::InvalidArgument("spacing must be > 0 and jitter >= 0".into()));
    }
    let side = (n as f64).cbrt().ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lattice = |i: usize| (i % side, (i / side) % side, i / (side * side));
    let positions: Vec<Point3> = (0..n)
        .map(|i| {
            let (a, b, c) = lattice(i);
            let mut j = || {
                if cfg.jitter > 0.0 {
                    rng.random_range(-cfg.jitter..=cfg.jitter) * cfg.spacing
                } else {
                    0.0
                }
            };
            Point3::new(
                a as f64 * cfg.spacing + j(),
                b as f64 * cfg.spacing + j(),
                c as f64 * cfg.spacing + j(),
            )
        })
        .collect();

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..n {
        for step in [1, side, side * side] {
            let j = i + step;
            if j >= n {
                continue;
            }
            let (a, b, c) = lattice(i);
            let (a2, b2, c2) = lattice(j);
            if a.abs_diff(a2) + b.abs_diff(b2) + c.abs_diff(c2) == 1 {
                candidates.push((positions[i].distance(positions[j]), i, j));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut degree = vec![0usize; n];
    let mut edges = Vec::new();
    for &(len, i, j) in &candidates {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        let tree_edge = ri != rj;
        if tree_edge {
            parent[ri] = rj;
        }
        if (tree_edge || len <= cfg.spacing) && degree[i] < NEIGH_MAX && degree[j] < NEIGH_MAX {
            degree[i] += 1;
            degree[j] += 1;
            edges.push((i, j));
        }
    }
    Graph::new(positions, edges)
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph> {
    let text = fs::read_to_string(path)?;
    parse_graph(&text)
}

pub fn parse_graph(text: &str) -> Result<Graph> {
    let doc: GraphDoc = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    doc.into_graph()
}

pub fn save_graph(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    save_graph_with_meta(g, None, path)
}

pub fn save_graph_with_meta(
    g: &Graph,
    meta: Option<serde_json::Value>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut doc = GraphDoc::from_graph(g);
    doc.meta = meta;
    let mut text = serde_json::to_string(&doc)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum DatasetRecord {
    Header {
        normalization: NormalizationParams,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<serde_json::Value>,
    },
    Sample {
        center: Option<usize>,
        split: Split,
        graph: GraphDoc,
        features: ConditioningVector,
    },
}

/// Writes a dataset as line-delimited JSON: a header record, then one record per sample.
pub fn save_dataset(ds: &Dataset, config: Option<serde_json::Value>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let header = DatasetRecord::Header { normalization: ds.scaling, config };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (s, split) in ds.samples.iter().zip(&ds.split) {
        let features = s
            .features
            .ok_or_else(|| Error::InvalidArgument("dataset sample without features".into()))?;
        let rec = DatasetRecord::Sample {
            center: s.center,
            split: *split,
            graph: GraphDoc::from_graph(&s.graph),
            features,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut scaling = None;
    let mut samples = Vec::new();
    let mut split = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        match rec {
            DatasetRecord::Header { normalization, .. } => scaling = Some(normalization),
            DatasetRecord::Sample { center, split: sp, graph, features } => {
                let graph = graph.into_graph()?;
                samples.push(GraphSample { graph, center, features: Some(features) });
                split.push(sp);
            }
        }
    }
    let scaling = scaling.ok_or_else(|| Error::Parse("dataset has no header record".into()))?;
    Ok(Dataset { samples, split, scaling })
}

/// Draws uniform random conditioning vectors inside the training ranges.
pub fn random_unit_features<R: Rng + ?Sized>(rng: &mut R) -> [f64; NUM_FEATURES] {
    std::array::from_fn(|_| rng.random_range(-1.0..=1.0))
}
