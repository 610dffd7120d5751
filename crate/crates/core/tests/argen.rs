//! Autoregressive decoder: loss identities, rollout consistency and decoded validity.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spinneret::argen::{ArGen, ArGenConfig};
use spinneret::dataset::{GraphSample, NormalizationParams};
use spinneret::diffusion::{Preset, TrainItem};
use spinneret::NUM_FEATURES;

fn small_config(max_nodes: usize) -> ArGenConfig {
    let mut cfg = ArGenConfig::preset(Preset::Desk, max_nodes);
    cfg.d_model = 16;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.d_c = 8;
    cfg
}

fn random_cond(rng: &mut ChaCha8Rng) -> [f64; NUM_FEATURES] {
    std::array::from_fn(|_| rng.random_range(-1.0..1.0))
}

fn items(model: &ArGen, count: usize, rng: &mut ChaCha8Rng) -> (Vec<TrainItem>, NormalizationParams) {
    let samples: Vec<GraphSample> = (0..count).map(|_| common::random_sample(model.cfg.max_nodes, rng)).collect();
    let params = NormalizationParams::fit(&samples).unwrap();
    let refs: Vec<&GraphSample> = samples.iter().collect();
    (model.items(&refs, &params).unwrap(), params)
}

#[test]
fn zero_output_loss_is_mean_squared_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut model = ArGen::new(small_config(16), &mut rng).unwrap();
    let ids: Vec<_> = model.store.ids().filter(|&i| model.store.name(i).starts_with("ar.output.")).collect();
    assert_eq!(ids.len(), 2);
    for id in ids {
        model.store.get_mut(id).data_mut().fill(0.0);
    }
    let (items, _) = items(&model, 20, &mut rng);
    let expected = items
        .iter()
        .map(|it| it.z0.data().iter().map(|v| v * v).sum::<f64>() / it.z0.len() as f64)
        .sum::<f64>()
        / items.len() as f64;
    assert!((model.loss(&items).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn teacher_forcing_on_a_rollout_reproduces_it() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = ArGen::new(small_config(12), &mut rng).unwrap();
    for _ in 0..10 {
        let cond = random_cond(&mut rng);
        let trace = model.rollout(&cond).unwrap();
        let forced = model.teacher_forced(&model.store, &trace.rows, &cond).unwrap();
        let err = forced.data().iter().zip(trace.rows.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-12, "teacher forcing diverges from rollout by {err:e}");
        assert_eq!(trace.residuals.len(), 12);
    }
}

#[test]
fn distinct_conditions_give_distinct_tokens() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = ArGen::new(small_config(8), &mut rng).unwrap();
    for _ in 0..100 {
        let a = random_cond(&mut rng);
        let b = random_cond(&mut rng);
        let ta = model.encode_condition(&model.store, &a).unwrap();
        let tb = model.encode_condition(&model.store, &b).unwrap();
        assert_ne!(ta.tokens(), tb.tokens());
    }
}

#[test]
fn decoded_rollouts_are_valid_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = ArGen::new(small_config(64), &mut rng).unwrap();
    let params = NormalizationParams { coord_scale: 0.05, feature_ranges: [(0.0, 1.0); NUM_FEATURES] };
    for k in 0..100 {
        let (d, _) = model.generate(&random_cond(&mut rng), &params).unwrap();
        let violations = d.sample.graph.validate(true);
        assert!(violations.is_empty(), "rollout {k}: {violations:?}");
    }
}

#[test]
fn training_lowers_the_loss_on_a_fixed_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = ArGen::new(small_config(16), &mut rng).unwrap();
    let (items, _) = items(&model, 4, &mut rng);
    let before = model.loss(&items).unwrap();
    for _ in 0..200 {
        model.train_step(&items).unwrap();
    }
    let after = model.loss(&items).unwrap();
    assert!(after < 0.5 * before, "{before} -> {after}");
}
