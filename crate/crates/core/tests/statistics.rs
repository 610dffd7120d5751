//! Brute-force oracles for the graph statistics and invariance of the conditioning vector.

mod common;
#[path = "support/oracles.rs"]
mod oracles;

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spinneret::stats::{clustering_coefficient, conditioning_vector, fiedler_projection, geodesic_field};
use oracles::{brute_force_clustering, floyd_warshall, laplacian};
use spinneret::{Permutation, Point3};

#[test]
fn clustering_matches_triangle_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..1000 {
        let n = rng.random_range(1..=8);
        let p = rng.random_range(0.0..1.0);
        let g = common::random_graph(n, p, &mut rng);
        let got = clustering_coefficient(&g).values;
        assert_eq!(got, brute_force_clustering(&g), "case {case}");
    }
}

#[test]
fn geodesics_match_floyd_warshall() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..500 {
        let n = rng.random_range(1..=10);
        let g = common::random_graph(n, rng.random_range(0.1..0.8), &mut rng);
        let all = floyd_warshall(&g);
        for s in 0..n {
            let got = geodesic_field(&g, s).unwrap().values;
            for (t, (&a, &b)) in got.iter().zip(&all[s]).enumerate() {
                if b.is_infinite() {
                    assert!(a.is_infinite(), "case {case}: {s}->{t} should be unreachable");
                } else {
                    assert!((a - b).abs() <= 1e-9, "case {case}: {s}->{t} {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn fiedler_pair_matches_dense_eigensolve() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut checked_vectors = 0;
    for case in 0..500 {
        let n = rng.random_range(2..=10);
        let g = common::random_web_graph(n, rng.random_range(0..2 * n), 1.0, &mut rng);
        let f = fiedler_projection(&g).unwrap();
        let l = laplacian(&g);
        let v = nalgebra::DVector::from_column_slice(&f.vector.values);
        let residual = (&l * &v - &v * f.eigenvalue).norm();
        assert!(residual <= 1e-6, "case {case}: residual {residual:e}");
        assert!((v.norm() - 1.0).abs() <= 1e-9);
        assert!(v.sum().abs() <= 1e-9, "case {case}: not orthogonal to the constant vector");

        let eig = SymmetricEigen::new(l);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let lambda2 = eig.eigenvalues[order[1]];
        assert!((f.eigenvalue - lambda2).abs() <= 1e-6, "case {case}: {} vs {lambda2}", f.eigenvalue);
        let simple = n == 2 || eig.eigenvalues[order[2]] - lambda2 > 1e-3;
        if simple {
            let reference = eig.eigenvectors.column(order[1]);
            let overlap = v.dot(&reference).abs();
            assert!((overlap - 1.0).abs() <= 1e-6, "case {case}: overlap {overlap}");
            checked_vectors += 1;
        }
    }
    assert!(checked_vectors > 400, "too few simple spectra: {checked_vectors}");
}

#[test]
fn conditioning_is_permutation_and_translation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..500 {
        let n = rng.random_range(2..=64);
        let g = common::random_web_graph(n, n, 0.05, &mut rng);
        let base = conditioning_vector(&g).unwrap().to_array();

        let p = Permutation::random(n, &mut rng);
        let permuted = conditioning_vector(&g.permute(&p).unwrap()).unwrap().to_array();
        for (k, (a, b)) in base.iter().zip(&permuted).enumerate() {
            assert!((a - b).abs() <= 1e-9, "case {case}: feature {k} changed under permutation");
        }

        let d = common::random_point(1.0, &mut rng);
        let moved = conditioning_vector(&g.translate(d)).unwrap().to_array();
        for (k, (a, b)) in base.iter().zip(&moved).enumerate() {
            assert!((a - b).abs() <= 1e-12, "case {case}: feature {k} changed by {:e}", (a - b).abs());
        }
    }
}

#[test]
fn translation_by_zero_is_identity() {
    let g = common::random_web_graph(5, 2, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(g.translate(Point3::ZERO), g);
}
