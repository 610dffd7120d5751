//! Softmax normalization and causal masking, from a single attention call up to the
//! full autoregressive decoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spinneret::argen::{ArGen, ArGenConfig};
use spinneret::nn::attention::{scaled_dot_product_attention, AttentionConfig, MaskMode, MultiHeadAttention};
use spinneret::nn::blocks::AttnBlock;
use spinneret::nn::{AdamConfig, ParameterStore, Tensor};
use spinneret::zspace::START_TOKEN_VALUE;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn perturb_row(x: &Tensor, row: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut y = x.clone();
    for v in y.row_mut(row) {
        *v += rng.random_range(-1.0..1.0);
    }
    y
}

fn assert_prefix_unchanged(a: &Tensor, b: &Tensor, j: usize, case: usize) {
    for i in 0..=j {
        for (p, q) in a.row(i).iter().zip(b.row(i)) {
            assert!((p - q).abs() <= 1e-12, "case {case}: row {i} <= {j} moved by {:e}", (p - q).abs());
        }
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..100 {
        let heads = rng.random_range(1..=4);
        let d = heads * rng.random_range(1..=6);
        let n = rng.random_range(1..=16);
        let m = rng.random_range(1..=16);
        let mask = if case % 2 == 0 { MaskMode::None } else { MaskMode::Causal };
        let cfg = AttentionConfig::new(d, heads, mask).unwrap();
        let q = random(&[n, d], &mut rng);
        let k = random(&[m, d], &mut rng);
        let v = random(&[m, d], &mut rng);
        let (_, probs) = scaled_dot_product_attention(&q, &k, &v, &cfg).unwrap();
        assert_eq!(probs.len(), heads);
        for p in &probs {
            for i in 0..n {
                let row = p.row(i);
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6, "case {case}");
                assert!(row.iter().all(|&w| w >= 0.0));
                if mask == MaskMode::Causal {
                    assert!(row[(i + 1).min(m)..].iter().all(|&w| w == 0.0), "case {case}: future weight");
                }
            }
        }
    }
}

#[test]
fn causal_attention_ignores_future_tokens() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..100 {
        let heads = rng.random_range(1..=4);
        let d = heads * rng.random_range(1..=4);
        let n = rng.random_range(2..=12);
        let mut ps = ParameterStore::new();
        let cfg = AttentionConfig::new(d, heads, MaskMode::Causal).unwrap();
        let mha = MultiHeadAttention::new(&mut ps, "a", cfg, d, &mut rng);
        let x = random(&[n, d], &mut rng);
        let j = rng.random_range(0..n - 1);
        let y = perturb_row(&x, j + 1, &mut rng);
        let a = mha.forward(&ps, &x, None).unwrap().0;
        let b = mha.forward(&ps, &y, None).unwrap().0;
        assert_prefix_unchanged(&a, &b, j, case);
    }
}

#[test]
fn causal_block_ignores_future_tokens() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..100 {
        let d = 8;
        let n = rng.random_range(2..=10);
        let mut ps = ParameterStore::new();
        let block = AttnBlock::new(&mut ps, "b", d, 6, 2, MaskMode::Causal, 2.0, &mut rng).unwrap();
        let ctx = random(&[7, 6], &mut rng);
        let x = random(&[n, d], &mut rng);
        let j = rng.random_range(0..n - 1);
        let y = perturb_row(&x, j + 1, &mut rng);
        let a = block.forward(&ps, &x, &ctx).unwrap().0;
        let b = block.forward(&ps, &y, &ctx).unwrap().0;
        assert_prefix_unchanged(&a, &b, j, case);
    }
}

#[test]
fn decoder_predictions_ignore_future_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = ArGenConfig {
        max_nodes: 12,
        d_model: 16,
        depth: 2,
        heads: 4,
        ff_mult: 2.0,
        d_c: 8,
        adam: AdamConfig::default(),
        batch_size: 1,
    };
    let model = ArGen::new(cfg.clone(), &mut rng).unwrap();
    let width = cfg.width();
    for case in 0..100 {
        let cond: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tokens = model.encode_condition(&model.store, &cond).unwrap().tokens().clone();
        let n = rng.random_range(2..=cfg.max_nodes + 1);
        let mut prefix = random(&[n, width], &mut rng);
        prefix.row_mut(0).fill(START_TOKEN_VALUE);
        let j = rng.random_range(0..n - 1);
        let edited = perturb_row(&prefix, j + 1, &mut rng);
        let a = model.decoder_forward(&model.store, &prefix, &tokens).unwrap().0;
        let b = model.decoder_forward(&model.store, &edited, &tokens).unwrap().0;
        assert_prefix_unchanged(&a, &b, j, case);
    }
}
