//! Random graph generators shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use spinneret::dataset::GraphSample;
use spinneret::{Graph, Point3, NEIGH_MAX};

pub fn random_point<R: Rng>(scale: f64, rng: &mut R) -> Point3 {
    Point3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

/// Erdos-Renyi graph with edge probability `p`; may be disconnected or edgeless.
pub fn random_graph<R: Rng>(n: usize, p: f64, rng: &mut R) -> Graph {
    let positions = (0..n).map(|_| random_point(1.0, rng)).collect();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(p) {
                edges.push((a, b));
            }
        }
    }
    Graph::new(positions, edges).unwrap()
}

/// Connected graph with every degree at most 6: a random tree plus up to `extra`
/// additional edges.
pub fn random_web_graph<R: Rng>(n: usize, extra: usize, scale: f64, rng: &mut R) -> Graph {
    let positions = (0..n).map(|_| random_point(scale, rng)).collect();
    let mut degree = vec![0usize; n];
    let mut edges = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for t in 1..n {
        let open: Vec<usize> = order[..t].iter().copied().filter(|&v| degree[v] < NEIGH_MAX).collect();
        let parent = open[rng.random_range(0..open.len())];
        let child = order[t];
        edges.push((parent.min(child), parent.max(child)));
        degree[parent] += 1;
        degree[child] += 1;
    }
    for _ in 0..extra {
        if n < 2 {
            break;
        }
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let e = (a.min(b), a.max(b));
        if a != b && degree[a] < NEIGH_MAX && degree[b] < NEIGH_MAX && !edges.contains(&e) {
            edges.push(e);
            degree[a] += 1;
            degree[b] += 1;
        }
    }
    Graph::new(positions, edges).unwrap()
}

/// A centered, web-conformant sample with between 2 and `max_nodes` nodes.
pub fn random_sample<R: Rng>(max_nodes: usize, rng: &mut R) -> GraphSample {
    let n = rng.random_range(2..=max_nodes);
    let extra = rng.random_range(0..=n);
    GraphSample::from_graph(random_web_graph(n, extra, 0.02, rng), None)
}

pub fn sorted_edges(g: &Graph) -> Vec<(usize, usize)> {
    let mut e = g.edges().to_vec();
    e.sort_unstable();
    e
}
