//! Independent brute-force references for the graph statistics.
#![allow(dead_code)]

use nalgebra::DMatrix;
use spinneret::Graph;

/// Local clustering by enumerating every node triple.
pub fn brute_force_clustering(g: &Graph) -> Vec<f64> {
    let n = g.node_count();
    (0..n)
        .map(|v| {
            let k = g.degree(v).unwrap();
            if k < 2 {
                return 0.0;
            }
            let mut closed = 0;
            for a in 0..n {
                for b in a + 1..n {
                    if a != v && b != v && g.has_edge(v, a) && g.has_edge(v, b) && g.has_edge(a, b) {
                        closed += 1;
                    }
                }
            }
            2.0 * closed as f64 / (k * (k - 1)) as f64
        })
        .collect()
}

/// All-pairs shortest paths with Euclidean edge weights.
pub fn floyd_warshall(g: &Graph) -> Vec<Vec<f64>> {
    let n = g.node_count();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for &(a, b) in g.edges() {
        let w = g.edge_length((a, b));
        d[a][b] = d[a][b].min(w);
        d[b][a] = d[b][a].min(w);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

/// Dense combinatorial Laplacian.
pub fn laplacian(g: &Graph) -> DMatrix<f64> {
    let n = g.node_count();
    let mut l = DMatrix::zeros(n, n);
    for &(a, b) in g.edges() {
        l[(a, b)] -= 1.0;
        l[(b, a)] -= 1.0;
        l[(a, a)] += 1.0;
        l[(b, b)] += 1.0;
    }
    l
}
