//! Per-graph conditioning features and per-node heterogeneity fields.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::{Error, Graph, Result, NUM_FEATURES};

pub const FEATURE_NAMES: [&str; NUM_FEATURES] =
    ["mean_edge_length", "mean_dx", "mean_dy", "mean_dz", "node_count", "edge_count", "degree_ratio"];

/// The seven geometric features used to steer generation.
///
/// Component means use absolute edge components, so the vector does not depend on the
/// arbitrary orientation of undirected edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditioningVector {
    pub mean_edge_length: f64,
    pub mean_dx: f64,
    pub mean_dy: f64,
    pub mean_dz: f64,
    pub node_count: f64,
    pub edge_count: f64,
    pub degree_ratio: f64,
}

impl ConditioningVector {
    pub fn to_array(&self) -> [f64; NUM_FEATURES] {
        [
            self.mean_edge_length,
            self.mean_dx,
            self.mean_dy,
            self.mean_dz,
            self.node_count,
            self.edge_count,
            self.degree_ratio,
        ]
    }

    pub fn from_array(a: [f64; NUM_FEATURES]) -> Self {
        Self {
            mean_edge_length: a[0],
            mean_dx: a[1],
            mean_dy: a[2],
            mean_dz: a[3],
            node_count: a[4],
            edge_count: a[5],
            degree_ratio: a[6],
        }
    }
}

/// Computes the conditioning vector of a graph.
pub fn conditioning_vector(g: &Graph) -> Result<ConditioningVector> {
    if g.node_count() == 0 {
        return Err(Error::Empty);
    }
    if g.edge_count() == 0 {
        return Err(Error::NoEdges);
    }
    let (mut len, mut dx, mut dy, mut dz) = (0.0, 0.0, 0.0, 0.0);
    for &(a, b) in g.edges() {
        let d = g.position(b) - g.position(a);
        len += d.norm();
        dx += d.x.abs();
        dy += d.y.abs();
        dz += d.z.abs();
    }
    let ne = g.edge_count() as f64;
    let nn = g.node_count() as f64;
    Ok(ConditioningVector {
        mean_edge_length: len / ne,
        mean_dx: dx / ne,
        mean_dy: dy / ne,
        mean_dz: dz / ne,
        node_count: nn,
        edge_count: ne,
        degree_ratio: ne / nn,
    })
}

/// One value per node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeField {
    pub name: &'static str,
    pub values: Vec<f64>,
}

impl NodeField {
    fn new(name: &'static str, values: Vec<f64>) -> Self {
        Self { name, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Mean length of the edges incident to each node; isolated nodes get 0.
pub fn per_node_mean_edge_length(g: &Graph) -> NodeField {
    let adj = g.adjacency();
    let values = adj
        .iter()
        .enumerate()
        .map(|(v, nbrs)| {
            if nbrs.is_empty() {
                log::warn!("node {v} is isolated; mean edge length set to 0");
                return 0.0;
            }
            let p = g.position(v);
            nbrs.iter().map(|&u| g.position(u).distance(p)).sum::<f64>() / nbrs.len() as f64
        })
        .collect();
    NodeField::new("mean_edge_length", values)
}

/// Unweighted local clustering coefficient.
pub fn clustering_coefficient(g: &Graph) -> NodeField {
    let adj = g.adjacency();
    let values = adj
        .iter()
        .map(|nbrs| {
            let k = nbrs.len();
            if k < 2 {
                return 0.0;
            }
            let mut triangles = 0usize;
            for (i, &a) in nbrs.iter().enumerate() {
                for &b in &nbrs[i + 1..] {
                    if adj[a].binary_search(&b).is_ok() {
                        triangles += 1;
                    }
                }
            }
            2.0 * triangles as f64 / (k * (k - 1)) as f64
        })
        .collect();
    NodeField::new("clustering", values)
}

/// Mean neighbor distance divided by neighbor count; low values mean dense neighborhoods.
pub fn reciprocal_neighbor_density(g: &Graph) -> NodeField {
    let adj = g.adjacency();
    let values = adj
        .iter()
        .enumerate()
        .map(|(v, nbrs)| {
            if nbrs.is_empty() {
                return 0.0;
            }
            let p = g.position(v);
            let k = nbrs.len() as f64;
            nbrs.iter().map(|&u| g.position(u).distance(p)).sum::<f64>() / (k * k)
        })
        .collect();
    NodeField::new("reciprocal_density", values)
}

#[derive(Copy, Clone, PartialEq)]
struct HeapEntry {
    cost: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed for a min-heap; node id breaks ties deterministically
        other.cost.total_cmp(&self.cost).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest-path distance from `source` with Euclidean edge weights.
/// Unreachable nodes get `f64::INFINITY`.
pub fn geodesic_field(g: &Graph, source: usize) -> Result<NodeField> {
    let n = g.node_count();
    if source >= n {
        return Err(Error::NodeOutOfRange { index: source, len: n });
    }
    let adj = g.adjacency();
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapEntry { cost: 0.0, node: source });
    while let Some(HeapEntry { cost, node }) = heap.pop() {
        if cost > dist[node] {
            continue;
        }
        let p = g.position(node);
        for &next in &adj[node] {
            let c = cost + g.position(next).distance(p);
            if c < dist[next] {
                dist[next] = c;
                heap.push(HeapEntry { cost: c, node: next });
            }
        }
    }
    Ok(NodeField::new("geodesic", dist))
}

/// The second-smallest eigenpair of the combinatorial Laplacian.
#[derive(Debug, Clone)]
pub struct Fiedler {
    pub eigenvalue: f64,
    pub vector: NodeField,
    pub residual: f64,
    pub iterations: usize,
}

const FIEDLER_TOL: f64 = 1e-8;
const FIEDLER_MAX_ITERS: usize = 10_000;

/// Normalized Fiedler vector, sign-fixed so its first nonzero component is positive.
///
/// Uses block inverse iteration on the complement of the constant vector, with a
/// conjugate-gradient inner solve and a Rayleigh-Ritz step on the block. Blocking keeps
/// convergence fast when the second and third eigenvalues are close.
pub fn fiedler_projection(g: &Graph) -> Result<Fiedler> {
    let n = g.node_count();
    if n < 2 {
        return Err(Error::TooFewNodes { needed: 2, found: n });
    }
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let lap = Laplacian::new(g);
    let block = (n - 1).min(4);

    // deterministic pseudo-random start
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    let mut x: Vec<Vec<f64>> = (0..block)
        .map(|_| {
            (0..n)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect()
        })
        .collect();
    orthonormalize(&mut x);

    let mut residual = f64::INFINITY;
    for iter in 1..=FIEDLER_MAX_ITERS {
        let mut y: Vec<Vec<f64>> = x.iter().map(|col| lap.solve(col)).collect();
        orthonormalize(&mut y);
        // Rayleigh-Ritz on span(y)
        let ly: Vec<Vec<f64>> = y.iter().map(|col| lap.apply(col)).collect();
        let m = y.len();
        let mut h = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in 0..m {
                h[i][j] = dot(&y[i], &ly[j]);
            }
        }
        let (evals, evecs) = jacobi_eigen(h);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| evals[a].total_cmp(&evals[b]));
        x = order
            .iter()
            .map(|&k| {
                let mut v = vec![0.0; n];
                for (j, col) in y.iter().enumerate() {
                    let c = evecs[j][k];
                    for (vi, yi) in v.iter_mut().zip(col) {
                        *vi += c * yi;
                    }
                }
                v
            })
            .collect();
        orthonormalize(&mut x);
        let v = &x[0];
        let lv = lap.apply(v);
        let lambda = dot(v, &lv);
        residual = lv.iter().zip(v).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
        if residual <= FIEDLER_TOL {
            let mut v = x.swap_remove(0);
            let sign = v.iter().find(|c| c.abs() > 1e-10).map_or(1.0, |c| c.signum());
            let norm = dot(&v, &v).sqrt();
            for c in &mut v {
                *c *= sign / norm;
            }
            return Ok(Fiedler {
                eigenvalue: lambda,
                vector: NodeField::new("fiedler", v),
                residual,
                iterations: iter,
            });
        }
    }
    Err(Error::NoConvergence { iterations: FIEDLER_MAX_ITERS, residual })
}

struct Laplacian {
    adj: Vec<Vec<usize>>,
}

impl Laplacian {
    fn new(g: &Graph) -> Self {
        Self { adj: g.adjacency() }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.adj
            .iter()
            .enumerate()
            .map(|(i, nbrs)| nbrs.len() as f64 * x[i] - nbrs.iter().map(|&j| x[j]).sum::<f64>())
            .collect()
    }

    /// Solves `L y = b` on the complement of the constant vector by conjugate gradients.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut r = b.to_vec();
        remove_mean(&mut r);
        let mut y = vec![0.0; n];
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        let target = rr * 1e-30;
        for _ in 0..(10 * n).max(50) {
            if rr <= target || rr == 0.0 {
                break;
            }
            let lp = self.apply(&p);
            let alpha = rr / dot(&p, &lp);
            for i in 0..n {
                y[i] += alpha * p[i];
                r[i] -= alpha * lp[i];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
            rr = rr_new;
        }
        remove_mean(&mut y);
        y
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn remove_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for c in v {
        *c -= mean;
    }
}

/// Modified Gram-Schmidt after projecting out the constant vector.
fn orthonormalize(cols: &mut [Vec<f64>]) {
    for i in 0..cols.len() {
        remove_mean(&mut cols[i]);
        for j in 0..i {
            let (done, rest) = cols.split_at_mut(i);
            let c = dot(&rest[0], &done[j]);
            for (a, b) in rest[0].iter_mut().zip(&done[j]) {
                *a -= c * b;
            }
        }
        let norm = dot(&cols[i], &cols[i]).sqrt();
        if norm > 0.0 {
            for c in &mut cols[i] {
                *c /= norm;
            }
        }
    }
}

/// Cyclic Jacobi eigen-decomposition of a small symmetric matrix.
/// Returns eigenvalues and eigenvectors stored as columns (`vecs[row][col]`).
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = a.len();
    let mut v = vec![vec![0.0; m]; m];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..m).flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..m {
            for q in p + 1..m {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..m {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..m {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..m).map(|i| a[i][i]).collect(), v)
}
