//! Stacking arithmetic, placement curves and assembled-graph connectivity.

mod common;

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spinneret::assembly::{
    assemble, random_conditioning, stack, GraphSource, Merge, Placement, StackPolicy,
};
use spinneret::dataset::{build_dataset, synthetic_web, DatasetConfig, SyntheticWebConfig};
use spinneret::Point3;

#[test]
fn stack_node_count_and_edge_union() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..500 {
        let n_acc = rng.random_range(1..=20);
        let n_new = rng.random_range(1..=20);
        let acc = common::random_web_graph(n_acc, n_acc / 2, 1.0, &mut rng);
        let new = common::random_web_graph(n_new, n_new / 2, 1.0, &mut rng);
        let block_len = rng.random_range(0..=n_acc);
        let block: Vec<usize> = (n_acc - block_len..n_acc).collect();
        let k = rng.random_range(0..=block_len.min(n_new));
        let merge = if case % 2 == 0 { Merge::Average } else { Merge::TakeSecond };
        let offset = common::random_point(2.0, &mut rng);
        let (g, map) = stack(&acc, &block, &new, k, merge, offset).unwrap();

        assert_eq!(g.node_count(), n_acc + n_new - k, "case {case}");
        let shared = &block[block_len - k..];
        let expected_map: Vec<usize> = (0..n_new).map(|t| if t < k { shared[t] } else { n_acc + t - k }).collect();
        assert_eq!(map, expected_map, "case {case}");

        let mut union: BTreeSet<(usize, usize)> = acc.edges().iter().copied().collect();
        for &(a, b) in new.edges() {
            let (x, y) = (map[a], map[b]);
            union.insert((x.min(y), x.max(y)));
        }
        assert_eq!(common::sorted_edges(&g), union.into_iter().collect::<Vec<_>>(), "case {case}");

        for (t, p) in new.positions().iter().enumerate() {
            let shifted = *p + offset;
            let got = g.position(map[t]);
            let want = match (t < k, merge) {
                (true, Merge::Average) => (acc.position(map[t]) + shifted) * 0.5,
                _ => shifted,
            };
            assert!(got.distance(want) <= 1e-12, "case {case}: node {t}");
        }
    }
}

#[test]
fn helix_starts_on_the_x_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let radius = rng.random_range(0.001..10.0);
        let h = Placement::Helix { radius, dphi: rng.random_range(0.0..PI), slope: rng.random_range(0.0..1.0) };
        assert_eq!(h.eval(0).unwrap(), Point3::new(radius, 0.0, 0.0));
    }
}

#[test]
fn helix_advances_by_slope_per_step() {
    let h = Placement::Helix { radius: 2.0, dphi: PI / 6.0, slope: 0.3 };
    let p = h.eval(12).unwrap();
    assert!(p.distance(Point3::new(2.0, 0.0, 3.6)) < 1e-12);
}

#[test]
fn parametric_curve_closes_at_four_pi() {
    let t = 4.0 * PI / 100.0;
    for scale in [1.0, 0.02, 7.5] {
        let p = Placement::Parametric { a: 2.0, b: 1.5, t_step: t, scale };
        let start = p.eval(0).unwrap();
        assert!(start.distance(Point3::new(3.0 * scale, 0.0, 0.0)) < 1e-12);
        let end = p.eval(100).unwrap();
        assert!(end.distance(start) <= 1e-6 * scale.max(1.0), "scale {scale}: gap {}", end.distance(start));
    }
}

#[test]
fn default_parametric_path_has_251_steps() {
    assert_eq!(Placement::parametric_steps(0.05), 251);
    let p = Placement::default_parametric(1.0);
    assert!(p.eval(250).is_ok());
    assert!(p.eval(252).is_err());
    let g = common::random_web_graph(4, 0, 0.1, &mut ChaCha8Rng::seed_from_u64(3));
    let a = assemble(&mut GraphSource::Fixed(g), &p, 251, &StackPolicy::default()).unwrap();
    assert_eq!(a.graph.node_count(), 4 * 251);
    assert_eq!(*a.provenance.last().unwrap(), 250);
}

#[test]
fn overlapping_assembly_of_connected_samples_is_connected() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..50 {
        let samples: Vec<_> = (0..rng.random_range(1..=4))
            .map(|_| {
                let n = rng.random_range(3..=12);
                common::random_web_graph(n, n / 3, 0.5, &mut rng)
            })
            .collect();
        let k = rng.random_range(1..=3);
        let steps = rng.random_range(1..=15);
        let policy = StackPolicy {
            overlap: k,
            merge: Merge::Average,
            shuffle_seed: (case % 3 == 0).then_some(case as u64),
        };
        let place = Placement::default_helix(0.5);
        let a = assemble(&mut GraphSource::Cycle(samples.clone()), &place, steps, &policy).unwrap();
        assert!(a.graph.is_connected(), "case {case}");
        let expected: usize = (0..steps).map(|i| samples[i % samples.len()].node_count()).sum::<usize>() - k * (steps - 1);
        assert_eq!(a.graph.node_count(), expected, "case {case}");
        assert_eq!(a.provenance.len(), expected);
    }
}

#[test]
fn random_conditioning_has_a_consistent_degree_ratio() {
    let web = synthetic_web(&SyntheticWebConfig { node_target: 400, spacing: 0.01, jitter: 0.3, seed: 2 }).unwrap();
    let ds = build_dataset(&web, &DatasetConfig::default()).unwrap();
    let params = ds.scaling;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let c = random_conditioning(&params, &mut rng);
        assert!(c.iter().all(|v| (-1.0..=1.0).contains(v)));
        let nodes = params.denormalize_feature(4, c[4]);
        let edges = params.denormalize_feature(5, c[5]);
        assert!((nodes - nodes.round()).abs() < 1e-9 && (edges - edges.round()).abs() < 1e-9);
        let ratio = params.normalize_feature(6, edges.round() / nodes.round());
        if ratio.abs() <= 1.0 {
            assert!((c[6] - ratio).abs() < 1e-12);
        }
    }
}
