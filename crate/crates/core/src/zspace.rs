//! Matrix encodings of graph samples.
//!
//! Rows are nodes and columns are features. The sparse layout stores each node's
//! coordinates followed by up to [`NEIGH_MAX`] analog neighbor ids; the full layout
//! stores coordinates followed by a `±1` adjacency row. Coordinates are normalized by
//! [`NormalizationParams::coord_scale`].

use std::collections::BTreeMap;

use crate::dataset::{GraphSample, NormalizationParams};
use crate::nn::Tensor;
use crate::{Error, Graph, Point3, Result, MAX_NODES, NEIGH_MAX};

/// Value filling every column of the start token row.
pub const START_TOKEN_VALUE: f64 = 2.0;

/// Maps node ids `0..=N` to `[-1, 1]` and back; id 0 means "no neighbor".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalogIndexCodec {
    pub max_nodes: usize,
}

impl AnalogIndexCodec {
    pub fn new(max_nodes: usize) -> Self {
        Self { max_nodes }
    }

    pub fn encode(&self, v: usize) -> f64 {
        2.0 * v as f64 / self.max_nodes as f64 - 1.0
    }

    /// Nearest id with ties to even, clamped to `0..=N`. Non-finite input decodes to 0.
    pub fn decode(&self, a: f64) -> usize {
        if !a.is_finite() {
            return 0;
        }
        let n = self.max_nodes as f64;
        ((a + 1.0) * n / 2.0).round_ties_even().clamp(0.0, n) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZKind {
    Sparse,
    Full,
}

/// A fixed-size encoding of samples with at most `max_nodes` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZSpace {
    pub kind: ZKind,
    pub max_nodes: usize,
}

/// A fix applied while decoding a noisy matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Repair {
    /// A row listed itself as a neighbor.
    SelfReference { row: usize },
    /// A row listed a padding row (or one beyond the sample).
    DanglingReference { row: usize, target: usize },
    /// Lowest-scoring edges at a node beyond the degree cap were removed.
    DegreeCapped { row: usize, dropped: usize },
    /// A non-padding row lost all its edges and was removed.
    IsolatedDropped { row: usize },
    /// A non-finite coordinate was replaced by 0.
    NonFiniteCoordinate { row: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub sample: GraphSample,
    /// Source row of each decoded node.
    pub rows: Vec<usize>,
    pub repairs: Vec<Repair>,
}

impl ZSpace {
    pub fn sparse(max_nodes: usize) -> Self {
        Self { kind: ZKind::Sparse, max_nodes }
    }

    pub fn full(max_nodes: usize) -> Self {
        Self { kind: ZKind::Full, max_nodes }
    }

    pub fn codec(&self) -> AnalogIndexCodec {
        AnalogIndexCodec::new(self.max_nodes)
    }

    /// Columns per row.
    pub fn width(&self) -> usize {
        match self.kind {
            ZKind::Sparse => 3 + NEIGH_MAX,
            ZKind::Full => 3 + self.max_nodes,
        }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.max_nodes, self.width()]
    }

    /// The canonical padding row: zero coordinates and every slot/flag at -1.
    pub fn padding_row(&self) -> Vec<f64> {
        let mut row = vec![-1.0; self.width()];
        row[..3].fill(0.0);
        row
    }

    /// Encoding of the empty sample.
    pub fn empty(&self) -> Tensor {
        let rows: Vec<Vec<f64>> = (0..self.max_nodes).map(|_| self.padding_row()).collect();
        Tensor::from_rows(&rows).expect("rectangular rows")
    }

    pub fn encode(&self, s: &GraphSample, params: &NormalizationParams) -> Result<Tensor> {
        let g = &s.graph;
        let n = g.node_count();
        if n > self.max_nodes {
            return Err(Error::InvalidArgument(format!(
                "sample has {n} nodes, encoding holds {}",
                self.max_nodes
            )));
        }
        let adj = g.adjacency();
        if let Some((v, nb)) = adj.iter().enumerate().find(|(_, nb)| nb.len() > NEIGH_MAX) {
            return Err(Error::InvalidGraph(format!("degree {} > {NEIGH_MAX} at {v}", nb.len())));
        }
        let codec = self.codec();
        let mut z = self.empty();
        for (j, (p, nb)) in g.positions().iter().zip(&adj).enumerate() {
            let row = z.row_mut(j);
            let q = params.normalize_point(*p);
            row[..3].copy_from_slice(&q.to_array());
            match self.kind {
                ZKind::Sparse => {
                    // adjacency lists are sorted ascending already
                    for (slot, &k) in row[3..].iter_mut().zip(nb) {
                        *slot = codec.encode(k + 1);
                    }
                }
                ZKind::Full => {
                    for &k in nb {
                        row[3 + k] = 1.0;
                    }
                }
            }
        }
        Ok(z)
    }

    pub fn decode(&self, z: &Tensor, params: &NormalizationParams) -> Result<Decoded> {
        if z.shape() != self.shape() {
            return Err(Error::Shape(format!("expected {:?} matrix, got {:?}", self.shape(), z.shape())));
        }
        let mut repairs = Vec::new();
        let mut present = vec![false; self.max_nodes];
        // (a, b) with a < b -> score
        let mut scores: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        match self.kind {
            ZKind::Sparse => {
                let codec = self.codec();
                let slots: Vec<Vec<usize>> =
                    (0..self.max_nodes).map(|r| z.row(r)[3..].iter().map(|&a| codec.decode(a)).collect()).collect();
                for (r, s) in slots.iter().enumerate() {
                    present[r] = s.iter().any(|&v| v != 0);
                }
                for (r, s) in slots.iter().enumerate() {
                    if !present[r] {
                        continue;
                    }
                    for &v in s.iter().filter(|&&v| v != 0) {
                        let t = v - 1;
                        if t == r {
                            repairs.push(Repair::SelfReference { row: r });
                        } else if !present[t] {
                            repairs.push(Repair::DanglingReference { row: r, target: t });
                        } else {
                            *scores.entry((r.min(t), r.max(t))).or_insert(0.0) += 1.0;
                        }
                    }
                }
            }
            ZKind::Full => {
                for j in 0..self.max_nodes {
                    for k in j + 1..self.max_nodes {
                        let s = 0.5 * (z.row(j)[3 + k] + z.row(k)[3 + j]);
                        if s > 0.0 {
                            scores.insert((j, k), s);
                        }
                    }
                }
            }
        }

        // strongest edges first; ties keep the lower index pair
        let mut ranked: Vec<((usize, usize), f64)> = scores.into_iter().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut degree = vec![0usize; self.max_nodes];
        let mut dropped = vec![0usize; self.max_nodes];
        let mut kept = Vec::new();
        for ((a, b), _) in ranked {
            if degree[a] < NEIGH_MAX && degree[b] < NEIGH_MAX {
                degree[a] += 1;
                degree[b] += 1;
                kept.push((a, b));
            } else {
                for v in [a, b] {
                    if degree[v] >= NEIGH_MAX {
                        dropped[v] += 1;
                    }
                }
            }
        }
        for (row, &d) in dropped.iter().enumerate() {
            if d > 0 {
                repairs.push(Repair::DegreeCapped { row, dropped: d });
            }
        }

        let mut rows = Vec::new();
        let mut index = vec![usize::MAX; self.max_nodes];
        for r in 0..self.max_nodes {
            if degree[r] > 0 {
                index[r] = rows.len();
                rows.push(r);
            } else if self.kind == ZKind::Sparse && present[r] {
                repairs.push(Repair::IsolatedDropped { row: r });
            }
        }
        let positions: Vec<Point3> = rows
            .iter()
            .map(|&r| {
                let c = &z.row(r)[..3];
                if c.iter().all(|v| v.is_finite()) {
                    params.denormalize_point(Point3::new(c[0], c[1], c[2]))
                } else {
                    repairs.push(Repair::NonFiniteCoordinate { row: r });
                    let f = |v: f64| if v.is_finite() { v } else { 0.0 };
                    params.denormalize_point(Point3::new(f(c[0]), f(c[1]), f(c[2])))
                }
            })
            .collect();
        let edges: Vec<(usize, usize)> = kept.iter().map(|&(a, b)| (index[a], index[b])).collect();
        let graph = Graph::new(positions, edges)?;
        Ok(Decoded { sample: GraphSample::from_graph(graph, None), rows, repairs })
    }
}

/// Sparse neighbor-list encoding with `N = 64`.
pub fn encode_sparse(s: &GraphSample, params: &NormalizationParams) -> Result<Tensor> {
    ZSpace::sparse(MAX_NODES).encode(s, params)
}

pub fn decode_sparse(z: &Tensor, params: &NormalizationParams) -> Result<Decoded> {
    ZSpace::sparse(MAX_NODES).decode(z, params)
}

/// Full adjacency encoding with `N = 64`.
pub fn encode_full(s: &GraphSample, params: &NormalizationParams) -> Result<Tensor> {
    ZSpace::full(MAX_NODES).encode(s, params)
}

pub fn decode_full(z: &Tensor, params: &NormalizationParams) -> Result<Decoded> {
    ZSpace::full(MAX_NODES).decode(z, params)
}

/// Adds a leading row of [`START_TOKEN_VALUE`].
pub fn prepend_start_token(z: &Tensor) -> Tensor {
    let token = Tensor::full(&[1, z.cols()], START_TOKEN_VALUE);
    Tensor::concat_rows(&[&token, z]).expect("matching widths")
}

/// Removes the start token row, failing if the first row is not a token.
pub fn strip_start_token(z: &Tensor) -> Result<Tensor> {
    if z.rows() == 0 || z.row(0).iter().any(|&v| v != START_TOKEN_VALUE) {
        return Err(Error::InvalidArgument("matrix does not begin with the start token".into()));
    }
    Ok(z.slice_rows(1, z.rows()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_params() -> NormalizationParams {
        NormalizationParams { coord_scale: 1.0, feature_ranges: [(0.0, 1.0); 7] }
    }

    fn unit_edge() -> GraphSample {
        let g = Graph::new(vec![Point3::new(-0.5, 0.0, 0.0), Point3::new(0.5, 0.0, 0.0)], vec![(0, 1)]).unwrap();
        GraphSample::from_graph(g, None)
    }

    #[test]
    fn codec_values() {
        let c = AnalogIndexCodec::new(64);
        assert_eq!(c.encode(0), -1.0);
        assert_eq!(c.encode(64), 1.0);
        for v in 0..=64 {
            assert_eq!(c.decode(c.encode(v)), v);
        }
        // halfway between 1 and 2 and between 2 and 3
        assert_eq!(c.decode(c.encode(1) + 1.0 / 64.0), 2);
        assert_eq!(c.decode(c.encode(2) + 1.0 / 64.0), 2);
        assert_eq!(c.decode(5.0), 64);
        assert_eq!(c.decode(f64::NAN), 0);
    }

    #[test]
    fn unit_edge_sparse_slots() {
        let z = encode_sparse(&unit_edge(), &unit_params()).unwrap();
        let c = AnalogIndexCodec::new(64);
        let slots = |r: usize| z.row(r)[3..].iter().map(|&a| c.decode(a)).collect::<Vec<_>>();
        assert_eq!(slots(0), vec![2, 0, 0, 0, 0, 0]);
        assert_eq!(slots(1), vec![1, 0, 0, 0, 0, 0]);
        assert_eq!(z.row(2), ZSpace::sparse(64).padding_row().as_slice());
    }

    #[test]
    fn empty_round_trips() {
        for zs in [ZSpace::sparse(64), ZSpace::full(64)] {
            let d = zs.decode(&zs.empty(), &unit_params()).unwrap();
            assert_eq!(d.sample.node_count(), 0);
            assert!(d.repairs.is_empty());
        }
    }

    #[test]
    fn one_sided_listing_survives() {
        let zs = ZSpace::sparse(64);
        let c = zs.codec();
        let mut z = zs.empty();
        z.row_mut(0)[3] = c.encode(2);
        z.row_mut(1)[0] = 1.0;
        z.row_mut(1)[3] = c.encode(1);
        z.row_mut(1)[4] = c.encode(2); // self reference
        let d = zs.decode(&z, &unit_params()).unwrap();
        assert_eq!(d.sample.graph.edges(), &[(0, 1)]);
        assert_eq!(d.repairs, vec![Repair::SelfReference { row: 1 }]);
    }

    #[test]
    fn triangle_full() {
        let g = Graph::new(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)],
            vec![(0, 1), (1, 2), (0, 2)],
        )
        .unwrap();
        let s = GraphSample::from_graph(g, None);
        let z = ZSpace::full(8).encode(&s, &unit_params()).unwrap();
        let plus = (0..8).flat_map(|r| z.row(r)[3..].to_vec()).filter(|&v| v == 1.0).count();
        assert_eq!(plus, 6);
        for j in 0..8 {
            for k in 0..8 {
                assert_eq!(z.row(j)[3 + k], z.row(k)[3 + j]);
            }
        }
        let d = ZSpace::full(8).decode(&z, &unit_params()).unwrap();
        assert_eq!(d.sample.graph.edges(), s.graph.edges());
    }

    #[test]
    fn degree_cap_keeps_strongest() {
        let zs = ZSpace::full(10);
        let mut z = zs.empty();
        for k in 1..9 {
            let s = 0.1 * k as f64;
            z.row_mut(0)[3 + k] = s;
            z.row_mut(k)[3] = s;
        }
        let d = zs.decode(&z, &unit_params()).unwrap();
        assert_eq!(d.sample.graph.max_degree(), 6);
        assert_eq!(d.rows, vec![0, 3, 4, 5, 6, 7, 8]);
        assert!(d.repairs.contains(&Repair::DegreeCapped { row: 0, dropped: 2 }));
    }

    #[test]
    fn start_token() {
        let z = ZSpace::full(4).empty();
        let t = prepend_start_token(&z);
        assert_eq!(t.rows(), 5);
        assert!(t.row(0).iter().all(|&v| v == 2.0));
        assert_eq!(strip_start_token(&t).unwrap(), z);
        assert!(strip_start_token(&z).is_err());
    }

    #[test]
    fn rejects_oversized() {
        let g = Graph::new(vec![Point3::ZERO; 5], vec![]).unwrap();
        let s = GraphSample::from_graph(g, None);
        assert!(ZSpace::sparse(4).encode(&s, &unit_params()).is_err());
        assert!(ZSpace::sparse(4).decode(&Tensor::zeros(&[3, 9]), &unit_params()).is_err());
    }
}
