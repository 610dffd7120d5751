//! Undirected graphs with 3D node positions.

use std::collections::HashSet;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, NEIGH_MAX};

/// A point in 3D space, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ZERO: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn dot(self, other: Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, o: Point3) -> Point3 {
        Point3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Point3) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

/// A broken graph invariant, reported by [`Graph::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    SelfLoop { node: usize },
    DuplicateEdge { a: usize, b: usize },
    EdgeOutOfRange { a: usize, b: usize, node_count: usize },
    NonFinitePosition { node: usize },
    DegreeExceeded { node: usize, degree: usize, max: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SelfLoop { node } => write!(f, "self-loop at {node}"),
            Violation::DuplicateEdge { a, b } => write!(f, "duplicate edge ({a},{b})"),
            Violation::EdgeOutOfRange { a, b, node_count } => {
                write!(f, "edge ({a},{b}) out of range for {node_count} nodes")
            }
            Violation::NonFinitePosition { node } => write!(f, "non-finite position at {node}"),
            Violation::DegreeExceeded { node, degree, max } => {
                write!(f, "degree {degree} > {max} at {node}")
            }
        }
    }
}

/// An undirected graph embedded in 3D.
///
/// Edges are stored as `(a, b)` with `a < b`. Values built through [`Graph::new`] are
/// guaranteed valid; [`Graph::from_raw`] keeps whatever it is given so that
/// [`Graph::validate`] can report the problems.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Graph {
    positions: Vec<Point3>,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Builds a validated graph. Edge orientation is canonicalised and edges are sorted.
    pub fn new(positions: Vec<Point3>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let g = Self::from_raw(positions, edges);
        let violations = g.validate(false);
        if !violations.is_empty() {
            return Err(Error::InvalidGraph(join_violations(&violations)));
        }
        let mut g = g;
        g.edges.sort_unstable();
        Ok(g)
    }

    /// Builds a graph without checking invariants. Edge orientation is canonicalised.
    pub fn from_raw(positions: Vec<Point3>, edges: Vec<(usize, usize)>) -> Self {
        let edges = edges
            .into_iter()
            .map(|(a, b)| if a <= b { (a, b) } else { (b, a) })
            .collect();
        Self { positions, edges }
    }

    /// Builds a graph from an edge list that may contain duplicates; duplicates are merged.
    pub fn from_edge_union(
        positions: Vec<Point3>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut set: Vec<(usize, usize)> = edges
            .into_iter()
            .map(|(a, b)| if a <= b { (a, b) } else { (b, a) })
            .collect();
        set.sort_unstable();
        set.dedup();
        Self::new(positions, set)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn position(&self, v: usize) -> Point3 {
        self.positions[v]
    }

    /// Checks every invariant; an empty list means the graph is valid.
    pub fn validate(&self, web_conformant: bool) -> Vec<Violation> {
        let n = self.positions.len();
        let mut out = Vec::new();
        for (i, p) in self.positions.iter().enumerate() {
            if !p.is_finite() {
                out.push(Violation::NonFinitePosition { node: i });
            }
        }
        let mut seen = HashSet::with_capacity(self.edges.len());
        let mut degree = vec![0usize; n];
        for &(a, b) in &self.edges {
            if a >= n || b >= n {
                out.push(Violation::EdgeOutOfRange { a, b, node_count: n });
                continue;
            }
            if a == b {
                out.push(Violation::SelfLoop { node: a });
                continue;
            }
            if !seen.insert((a, b)) {
                out.push(Violation::DuplicateEdge { a, b });
                continue;
            }
            degree[a] += 1;
            degree[b] += 1;
        }
        if web_conformant {
            for (node, &d) in degree.iter().enumerate() {
                if d > NEIGH_MAX {
                    out.push(Violation::DegreeExceeded { node, degree: d, max: NEIGH_MAX });
                }
            }
        }
        out
    }

    pub fn degree(&self, v: usize) -> Result<usize> {
        if v >= self.node_count() {
            return Err(Error::NodeOutOfRange { index: v, len: self.node_count() });
        }
        Ok(self.edges.iter().filter(|&&(a, b)| a == v || b == v).count())
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.node_count()];
        for &(a, b) in &self.edges {
            d[a] += 1;
            d[b] += 1;
        }
        d
    }

    pub fn max_degree(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0)
    }

    /// Sorted neighbor lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn edge_length(&self, e: (usize, usize)) -> f64 {
        self.positions[e.0].distance(self.positions[e.1])
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.edges.binary_search(&key).is_ok()
    }

    /// Relabels nodes: node `i` becomes node `p(i)`.
    pub fn permute(&self, p: &Permutation) -> Result<Graph> {
        if p.len() != self.node_count() {
            return Err(Error::PermutationSize { expected: self.node_count(), got: p.len() });
        }
        let mut positions = vec![Point3::ZERO; self.node_count()];
        for (i, &pos) in self.positions.iter().enumerate() {
            positions[p.apply(i)] = pos;
        }
        let edges = self.edges.iter().map(|&(a, b)| (p.apply(a), p.apply(b))).collect();
        let mut g = Graph::from_raw(positions, edges);
        g.edges.sort_unstable();
        Ok(g)
    }

    pub fn translate(&self, d: Point3) -> Graph {
        Graph {
            positions: self.positions.iter().map(|&p| p + d).collect(),
            edges: self.edges.clone(),
        }
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.positions.is_empty() {
            return None;
        }
        let sum = self.positions.iter().fold(Point3::ZERO, |acc, &p| acc + p);
        Some(sum * (1.0 / self.positions.len() as f64))
    }

    /// Translates the graph so its centroid sits at the origin.
    pub fn centered(&self) -> Graph {
        match self.centroid() {
            Some(c) => self.translate(-c),
            None => self.clone(),
        }
    }

    pub fn scaled(&self, s: f64) -> Graph {
        Graph {
            positions: self.positions.iter().map(|&p| p * s).collect(),
            edges: self.edges.clone(),
        }
    }

    /// Largest distance of any node from the centroid.
    pub fn bounding_radius(&self) -> f64 {
        let Some(c) = self.centroid() else { return 0.0 };
        self.positions.iter().map(|p| p.distance(c)).fold(0.0, f64::max)
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.positions.first()?;
        Some(self.positions.iter().fold((first, first), |(lo, hi), p| {
            (
                Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z)),
                Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z)),
            )
        }))
    }

    /// Subgraph induced by `nodes`, re-indexed in the order given.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Graph {
        let mut local = vec![usize::MAX; self.node_count()];
        for (i, &v) in nodes.iter().enumerate() {
            local[v] = i;
        }
        let positions = nodes.iter().map(|&v| self.positions[v]).collect();
        let mut edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .filter(|&&(a, b)| local[a] != usize::MAX && local[b] != usize::MAX)
            .map(|&(a, b)| {
                let (la, lb) = (local[a], local[b]);
                if la < lb { (la, lb) } else { (lb, la) }
            })
            .collect();
        edges.sort_unstable();
        Graph { positions, edges }
    }

    /// Number of connected components (isolated nodes count as components).
    pub fn component_count(&self) -> usize {
        let n = self.node_count();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut components = n;
        for &(a, b) in &self.edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra] = rb;
                components -= 1;
            }
        }
        components
    }

    pub fn is_connected(&self) -> bool {
        self.component_count() <= 1
    }
}

pub(crate) fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// A bijection on node indices `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &m in &map {
            if m >= map.len() || seen[m] {
                return Err(Error::NotBijective(format!("{map:?}")));
            }
            seen[m] = true;
        }
        Ok(Self { map })
    }

    pub fn identity(n: usize) -> Self {
        Self { map: (0..n).collect() }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Self { map }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.map[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.map.len()];
        for (i, &m) in self.map.iter().enumerate() {
            inv[m] = i;
        }
        Permutation { map: inv }
    }
}

/// The graph text document: `{"nodes": [[x,y,z],...], "edges": [[a,b],...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDoc {
    pub nodes: Vec<[f64; 3]>,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

impl GraphDoc {
    pub fn from_graph(g: &Graph) -> Self {
        Self {
            nodes: g.positions.iter().map(|p| p.to_array()).collect(),
            edges: g.edges.iter().map(|&(a, b)| [a, b]).collect(),
            meta: None,
        }
    }

    /// Converts to a graph, rejecting documents that violate graph invariants.
    pub fn into_graph(self) -> Result<Graph> {
        let positions = self.nodes.into_iter().map(Point3::from_array).collect();
        let edges = self.edges.into_iter().map(|[a, b]| (a, b)).collect();
        Graph::new(positions, edges).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn triangle() -> Graph {
        Graph::new(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)],
            vec![(0, 1), (1, 2), (2, 0)],
        )
        .unwrap()
    }

    fn star(leaves: usize) -> Graph {
        let mut pos = vec![Point3::ZERO];
        let mut edges = Vec::new();
        for i in 0..leaves {
            let a = i as f64;
            pos.push(Point3::new(a.cos(), a.sin(), 0.0));
            edges.push((0, i + 1));
        }
        Graph::from_raw(pos, edges)
    }

    #[test]
    fn triangle_is_valid() {
        assert!(triangle().validate(true).is_empty());
    }

    #[test]
    fn self_loop_reported() {
        let g = Graph::from_raw(vec![Point3::ZERO; 3], vec![(0, 1), (2, 2)]);
        let v = g.validate(false);
        assert_eq!(v, vec![Violation::SelfLoop { node: 2 }]);
        assert_eq!(v[0].to_string(), "self-loop at 2");
        assert!(Graph::new(vec![Point3::ZERO; 3], vec![(2, 2)]).is_err());
    }

    #[test]
    fn duplicate_and_out_of_range() {
        let g = Graph::from_raw(vec![Point3::ZERO; 3], vec![(0, 1), (1, 0), (1, 5)]);
        let v = g.validate(false);
        assert!(v.contains(&Violation::DuplicateEdge { a: 0, b: 1 }));
        assert!(v.contains(&Violation::EdgeOutOfRange { a: 1, b: 5, node_count: 3 }));
    }

    #[test]
    fn seven_leaf_star_exceeds_degree() {
        let g = star(7);
        assert!(g.validate(false).is_empty());
        assert_eq!(
            g.validate(true),
            vec![Violation::DegreeExceeded { node: 0, degree: 7, max: 6 }]
        );
        assert!(star(6).validate(true).is_empty());
    }

    #[test]
    fn degrees() {
        let iso = Graph::new(vec![Point3::ZERO], vec![]).unwrap();
        assert_eq!(iso.degree(0).unwrap(), 0);
        let t = triangle();
        for v in 0..3 {
            assert_eq!(t.degree(v).unwrap(), 2);
        }
        let path = Graph::new(vec![Point3::ZERO; 4], vec![(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(path.degree(1).unwrap(), 2);
        assert_eq!(path.degree(0).unwrap(), 1);
        assert!(matches!(path.degree(4), Err(Error::NodeOutOfRange { .. })));
    }

    #[test]
    fn identity_permutation_is_noop() {
        let t = triangle();
        assert_eq!(t.permute(&Permutation::identity(3)).unwrap(), t);
    }

    #[test]
    fn permuted_triangle_relabels_back() {
        let t = triangle();
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        let q = t.permute(&p).unwrap();
        assert_eq!(q.edges(), &[(0, 1), (0, 2), (1, 2)]);
        assert_eq!(q.permute(&p.inverse()).unwrap(), t);
        assert!(q.validate(true).is_empty());
    }

    #[test]
    fn permutation_size_mismatch() {
        let t = triangle();
        assert!(matches!(
            t.permute(&Permutation::identity(4)),
            Err(Error::PermutationSize { expected: 3, got: 4 })
        ));
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
    }

    #[test]
    fn translation() {
        let g = Graph::new(vec![Point3::ZERO], vec![]).unwrap();
        assert_eq!(g.translate(Point3::ZERO), g);
        assert_eq!(g.translate(Point3::new(1.0, 2.0, 3.0)).position(0), Point3::new(1.0, 2.0, 3.0));
        let t = triangle();
        let d = Point3::new(0.3, -1.7, 2.9);
        let back = t.translate(d).translate(-d);
        for (a, b) in back.positions().iter().zip(t.positions()) {
            assert!(a.distance(*b) < 1e-12);
        }
    }

    #[test]
    fn random_permutation_preserves_violation_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = star(8);
        let p = Permutation::random(9, &mut rng);
        assert_eq!(g.permute(&p).unwrap().validate(true).len(), g.validate(true).len());
    }

    #[test]
    fn components() {
        let g = Graph::new(vec![Point3::ZERO; 5], vec![(0, 1), (2, 3)]).unwrap();
        assert_eq!(g.component_count(), 3);
        assert!(triangle().is_connected());
    }
}
