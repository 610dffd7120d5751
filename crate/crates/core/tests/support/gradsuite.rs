//! Finite-difference cases for every layer, shared by the gradient tests and the
//! acceptance run.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spinneret::diffusion::{UNet, UNetConfig};
use spinneret::nn::attention::{AttentionConfig, MaskMode, MultiHeadAttention};
use spinneret::nn::blocks::{AttnBlock, ResBlock};
use spinneret::nn::gradcheck::{grad_check, grad_check_params, GradCheckReport};
use spinneret::nn::layers::{silu, silu_backward, Conv1d, FeedForward, LayerNorm, Linear};
use spinneret::nn::{Grads, ParameterStore, Tensor};

pub const H: f64 = 1e-5;
pub const LAYER_TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn weighted(y: &Tensor, w: &Tensor) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Checks parameter and input gradients of `f(ps, x) -> y` under `L = sum(w * y)`.
fn check_layer(
    ps: &mut ParameterStore,
    x: &Tensor,
    rng: &mut ChaCha8Rng,
    forward: impl Fn(&ParameterStore, &Tensor) -> Tensor,
    backward: impl Fn(&ParameterStore, &Tensor, &Tensor, &mut Grads) -> Tensor,
) -> GradCheckReport {
    let y = forward(ps, x);
    let w = random(y.shape(), rng);
    let mut grads = ps.zero_grads();
    let dx = backward(ps, x, &w, &mut grads);
    let mut report = grad_check_params(ps, &grads, |p| weighted(&forward(p, x), &w), H, 64);
    let shape = x.shape().to_vec();
    let input = grad_check(
        |v| weighted(&forward(ps, &Tensor::from_vec(&shape, v.to_vec()).unwrap()), &w),
        x.data(),
        dx.data(),
        H,
    );
    report.merge(&input);
    report
}

/// One named check and the tolerance it must meet.
pub struct Case {
    pub name: String,
    pub report: GradCheckReport,
    pub tol: f64,
}

impl Case {
    fn new(name: &str, report: GradCheckReport, tol: f64) -> Self {
        Self { name: name.to_string(), report, tol }
    }

    pub fn passes(&self) -> bool {
        self.report.passes(self.tol)
    }
}

/// Every case, in a fixed order.
pub fn all() -> Vec<Case> {
    [linear(), conv(), layernorm_and_silu(), feedforward(), attention(), block(), unet_miniature(), transformer_miniature()]
        .into_iter()
        .flatten()
        .collect()
}

pub fn linear() -> Vec<Case> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ps = ParameterStore::new();
    let lin = Linear::new(&mut ps, "l", 5, 3, true, &mut rng);
    let x = random(&[4, 5], &mut rng);
    let r = check_layer(&mut ps, &x, &mut rng, |p, x| lin.forward(p, x).unwrap(), |p, x, dy, g| {
        lin.backward(p, x, dy, g)
    });
    out.push(Case::new("linear", r, LAYER_TOL));
    out
}

pub fn conv() -> Vec<Case> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for stride in [1, 4] {
        let mut ps = ParameterStore::new();
        let conv = Conv1d::new(&mut ps, "c", 3, 4, 3, stride, &mut rng);
        let x = random(&[16, 3], &mut rng);
        let r = check_layer(&mut ps, &x, &mut rng, |p, x| conv.forward(p, x).unwrap(), |p, x, dy, g| {
            conv.backward(p, x, dy, g)
        });
        out.push(Case::new(&format!("conv stride {stride}"), r, LAYER_TOL));
    }
    out
}

pub fn layernorm_and_silu() -> Vec<Case> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ps = ParameterStore::new();
    let ln = LayerNorm::new(&mut ps, "ln", 6);
    for v in ps.get_mut(ln.gamma).data_mut() {
        *v = 1.0 + 0.3 * (*v - 0.5);
    }
    let x = random(&[3, 6], &mut rng);
    let r = check_layer(&mut ps, &x, &mut rng, |p, x| ln.forward(p, x).unwrap(), |p, x, dy, g| {
        ln.backward(p, x, dy, g)
    });
    out.push(Case::new("layernorm", r, LAYER_TOL));

    let mut empty = ParameterStore::new();
    let r = check_layer(&mut empty, &x, &mut rng, |_, x| silu(x), |_, x, dy, _| silu_backward(x, dy));
    out.push(Case::new("silu", r, LAYER_TOL));
    out
}

pub fn feedforward() -> Vec<Case> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ps = ParameterStore::new();
    let ff = FeedForward::new(&mut ps, "ff", 4, 2.0, &mut rng);
    let x = random(&[3, 4], &mut rng);
    let r = check_layer(&mut ps, &x, &mut rng, |p, x| ff.forward(p, x).unwrap().0, |p, x, dy, g| {
        let (_, c) = ff.forward(p, x).unwrap();
        ff.backward(p, x, &c, dy, g)
    });
    out.push(Case::new("feedforward", r, LAYER_TOL));
    out
}

pub fn attention() -> Vec<Case> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for mask in [MaskMode::None, MaskMode::Causal] {
        let mut ps = ParameterStore::new();
        let cfg = AttentionConfig::new(6, 2, mask).unwrap();
        let mha = MultiHeadAttention::new(&mut ps, "a", cfg, 6, &mut rng);
        let x = random(&[5, 6], &mut rng);
        let r = check_layer(&mut ps, &x, &mut rng, |p, x| mha.forward(p, x, None).unwrap().0, |p, x, dy, g| {
            let (_, c) = mha.forward(p, x, None).unwrap();
            mha.backward(p, x, None, &c, dy, g).0
        });
        out.push(Case::new(&format!("self-attention {mask:?}"), r, LAYER_TOL));
    }

    // cross-attention: check the context gradient too
    let mut ps = ParameterStore::new();
    let cfg = AttentionConfig::new(4, 2, MaskMode::None).unwrap();
    let mha = MultiHeadAttention::new(&mut ps, "x", cfg, 3, &mut rng);
    let x = random(&[4, 4], &mut rng);
    let ctx = random(&[7, 3], &mut rng);
    let r = check_layer(&mut ps, &x, &mut rng, |p, x| mha.forward(p, x, Some(&ctx)).unwrap().0, |p, x, dy, g| {
        let (_, c) = mha.forward(p, x, Some(&ctx)).unwrap();
        mha.backward(p, x, Some(&ctx), &c, dy, g).0
    });
    out.push(Case::new("cross-attention", r, LAYER_TOL));
    let r = check_layer(
        &mut ps,
        &ctx,
        &mut rng,
        |p, c| mha.forward(p, &x, Some(c)).unwrap().0,
        |p, c, dy, g| {
            let (_, cache) = mha.forward(p, &x, Some(c)).unwrap();
            mha.backward(p, &x, Some(c), &cache, dy, g).1.unwrap()
        },
    );
    out.push(Case::new("cross-attention context", r, LAYER_TOL));
    out
}

pub fn block() -> Vec<Case> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ps = ParameterStore::new();
    let rb = ResBlock::new(&mut ps, "rb", 3, 4, 5, &mut rng);
    let pooled = random(&[1, 5], &mut rng);
    let x = random(&[8, 3], &mut rng);
    let r = check_layer(&mut ps, &x, &mut rng, |p, x| rb.forward(p, x, &pooled).unwrap().0, |p, x, dy, g| {
        let (_, c) = rb.forward(p, x, &pooled).unwrap();
        rb.backward(p, x, &pooled, &c, dy, g).0
    });
    out.push(Case::new("resblock", r, LAYER_TOL));
    let r = check_layer(&mut ps, &pooled, &mut rng, |p, e| rb.forward(p, &x, e).unwrap().0, |p, e, dy, g| {
        let (_, c) = rb.forward(p, &x, e).unwrap();
        rb.backward(p, &x, e, &c, dy, g).1
    });
    out.push(Case::new("resblock conditioning", r, LAYER_TOL));

    let mut ps = ParameterStore::new();
    let ab = AttnBlock::new(&mut ps, "ab", 4, 6, 2, MaskMode::Causal, 2.0, &mut rng).unwrap();
    let ctx = random(&[3, 6], &mut rng);
    let x = random(&[5, 4], &mut rng);
    let r = check_layer(&mut ps, &x, &mut rng, |p, x| ab.forward(p, x, &ctx).unwrap().0, |p, x, dy, g| {
        let (_, c) = ab.forward(p, x, &ctx).unwrap();
        ab.backward(p, x, &ctx, &c, dy, g).0
    });
    out.push(Case::new("attention block", r, LAYER_TOL));
    out
}

fn miniature_unet_config() -> UNetConfig {
    UNetConfig {
        length: 16,
        in_channels: 2,
        channels: 2,
        multipliers: vec![1, 2, 4],
        factors: vec![4, 4],
        res_blocks: vec![1, 1],
        attn_depths: vec![1, 1],
        heads: 2,
        d_c: 4,
        ff_mult: 2.0,
    }
}

pub fn unet_miniature() -> Vec<Case> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ps = ParameterStore::new();
    let unet = UNet::new(&mut ps, miniature_unet_config(), &mut rng).unwrap();
    let cond = [0.1, -0.3, 0.5, 0.0, 0.9, -1.0, 0.2];
    let x = random(&[16, 2], &mut rng);
    let r = check_layer(&mut ps, &x, &mut rng, |p, x| unet.forward(p, x, &cond, 7).unwrap().0, |p, x, dy, g| {
        let (_, c) = unet.forward(p, x, &cond, 7).unwrap();
        unet.backward(p, &c, dy, g)
    });
    out.push(Case::new("u-net miniature", r, 1e-3));
    out
}

pub fn transformer_miniature() -> Vec<Case> {
    let mut out = Vec::new();
    use spinneret::argen::{ArGen, ArGenConfig};
    use spinneret::diffusion::{Preset, TrainItem};
    use spinneret::nn::mse;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = ArGenConfig { d_model: 8, depth: 2, heads: 2, d_c: 4, ..ArGenConfig::preset(Preset::Desk, 5) };
    let model = ArGen::new(cfg, &mut rng).unwrap();
    let items: Vec<TrainItem> = (0..2)
        .map(|_| TrainItem {
            z0: random(&[5, 8], &mut rng),
            cond: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
        })
        .collect();
    let (_, grads) = model.batch_gradients(&items).unwrap();
    let mut ps = model.store.clone();
    let r = grad_check_params(
        &mut ps,
        &grads,
        |p| {
            items.iter().map(|it| mse(&model.teacher_forced(p, &it.z0, &it.cond).unwrap(), &it.z0).0).sum::<f64>()
                / items.len() as f64
        },
        H,
        64,
    );
    out.push(Case::new("transformer miniature", r, LAYER_TOL));
    out
}
