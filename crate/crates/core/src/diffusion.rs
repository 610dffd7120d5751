//! Conditional analog diffusion over z-space matrices with a 1D U-Net denoiser.
//!
//! The forward chain adds independent Gaussian steps, `z_i = z_0 + sum_{k<=i} eps_k` with
//! `eps_k ~ N(0, sigma_k^2)`. The network predicts the cumulative noise `z_i - z_0`; a
//! reverse step removes the part of it attributable to step `i`,
//! `eps'_i = (sigma_i^2 / S_i) * eps_hat` with `S_i = sum_{k<=i} sigma_k^2`, which is the
//! posterior mean of `eps_i` given the cumulative noise. Because `sigma_1^2 / S_1 = 1`, an
//! exact cumulative-noise oracle returns `z_0` after the last step.
//!
//! The network output `F` is preconditioned with a skip term, as in Karras et al. (2022):
//! `eps_hat = S/(S + s_d^2) * z_i - sqrt(S) s_d / sqrt(S + s_d^2) * F(z_i / sqrt(S + s_d^2))`,
//! so a narrow network never has to copy its input through to the output. A learned
//! per-channel gain `a` moves the skip coefficient from `c_skip` (`a = 0`) towards 1
//! (pure `z_0` prediction, `a = 1`): `c_skip + (1 - c_skip) a`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{GraphSample, NormalizationParams};
use crate::nn::blocks::{AttnBlock, AttnBlockCache, ResBlock, ResBlockCache};
use crate::nn::embed::{fourier_embed, sinusoidal_positions};
use crate::nn::layers::{silu, silu_backward, upsample_rows, upsample_rows_backward, Conv1d, Linear};
use crate::nn::{adam_step, mse, AdamConfig, Grads, MaskMode, ParamId, ParameterStore, Tensor};
use crate::zspace::{Decoded, ZKind, ZSpace};
use crate::{Error, Result, NUM_FEATURES};

/// Scale applied to normalized conditioning values before the Fourier embedding, so
/// that differences of order 0.01 reach the higher frequencies.
pub const COND_EMBED_SCALE: f64 = 100.0;

/// Largest magnitude of a sampled entry.
pub const OUTPUT_CLAMP: f64 = 1.05;

/// Per-step noise standard deviations `sigma_1..sigma_F`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
    cumulative: Vec<f64>,
    sigma_data: f64,
}

/// Scalars of the preconditioned predictor at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precond {
    /// Multiplies the network input.
    pub c_in: f64,
    /// Coefficient of `z_i` in the noise estimate.
    pub c_skip: f64,
    /// Coefficient of the network output in the noise estimate (applied with a minus sign).
    pub c_out: f64,
}

fn default_sigma_data() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Assumed RMS of a clean entry; normalized layouts sit near 1.
    #[serde(default = "default_sigma_data")]
    pub sigma_data: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 96, sigma_min: 0.01, sigma_max: 1.0, sigma_data: 1.0 }
    }
}

impl NoiseSchedule {
    /// `sigma_i = sigma_max * (sigma_min / sigma_max)^((F - i) / (F - 1))`.
    pub fn geometric(cfg: &ScheduleConfig) -> Result<Self> {
        let ScheduleConfig { steps, sigma_min, sigma_max, sigma_data } = *cfg;
        if steps == 0 || !(sigma_min > 0.0 && sigma_max >= sigma_min && sigma_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "schedule needs steps >= 1 and 0 < sigma_min <= sigma_max, got {cfg:?}"
            )));
        }
        if !(sigma_data > 0.0 && sigma_data.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma_data must be positive, got {sigma_data}")));
        }
        let sigmas = (1..=steps)
            .map(|i| {
                if steps == 1 {
                    sigma_max
                } else {
                    sigma_max * (sigma_min / sigma_max).powf((steps - i) as f64 / (steps - 1) as f64)
                }
            })
            .collect();
        Ok(Self::from_sigmas(sigmas)?.with_sigma_data(sigma_data))
    }

    /// Any nonnegative sequence; zeros are allowed for testing the noiseless limit.
    pub fn from_sigmas(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() || sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidArgument("sigmas must be finite and nonnegative".into()));
        }
        let mut cumulative = Vec::with_capacity(sigmas.len() + 1);
        cumulative.push(0.0);
        let mut acc = 0.0;
        for s in &sigmas {
            acc += s * s;
            cumulative.push(acc);
        }
        Ok(Self { sigmas, cumulative, sigma_data: default_sigma_data() })
    }

    pub fn with_sigma_data(mut self, sigma_data: f64) -> Self {
        self.sigma_data = sigma_data;
        self
    }

    pub fn steps(&self) -> usize {
        self.sigmas.len()
    }

    /// `sigma_i` for `1 <= i <= F`.
    pub fn sigma(&self, i: usize) -> f64 {
        self.sigmas[i - 1]
    }

    /// `S_i = sum_{k<=i} sigma_k^2`, with `S_0 = 0`.
    pub fn cumulative_variance(&self, i: usize) -> f64 {
        self.cumulative[i]
    }

    /// Mean of `S_i` over uniformly drawn steps; the loss of a model that predicts zero.
    pub fn mean_cumulative_variance(&self) -> f64 {
        self.cumulative[1..].iter().sum::<f64>() / self.steps() as f64
    }

    pub fn sigma_data(&self) -> f64 {
        self.sigma_data
    }

    /// Preconditioning scalars at step `i`.
    pub fn precond(&self, i: usize) -> Precond {
        let s = self.cumulative_variance(i);
        let d2 = self.sigma_data * self.sigma_data;
        let norm = (s + d2).sqrt();
        Precond { c_in: 1.0 / norm, c_skip: s / (s + d2), c_out: s.sqrt() * self.sigma_data / norm }
    }

    fn check_step(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.steps() {
            return Err(Error::InvalidArgument(format!("step {i} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

fn gaussian<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            x * std
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches")
}

/// Result of noising `z_0` to step `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Noised {
    pub z: Tensor,
    /// `z_i - z_0`, the training target.
    pub cumulative: Tensor,
    /// The step-`i` increment `eps_i`.
    pub last: Tensor,
}

/// Samples `z_i`. The first `i - 1` increments are drawn jointly as one Gaussian of
/// variance `S_{i-1}`, which has the same law as summing them one by one.
pub fn forward_noise<R: Rng + ?Sized>(z0: &Tensor, i: usize, schedule: &NoiseSchedule, rng: &mut R) -> Result<Noised> {
    schedule.check_step(i)?;
    let before = gaussian(z0.shape(), schedule.cumulative_variance(i - 1).sqrt(), rng);
    let last = gaussian(z0.shape(), schedule.sigma(i), rng);
    let cumulative = before.zip_map(&last, |a, b| a + b);
    let z = z0.zip_map(&cumulative, |a, b| a + b);
    Ok(Noised { z, cumulative, last })
}

/// Anything that estimates the cumulative noise `z_i - z_0` of a noisy matrix.
pub trait NoisePredictor {
    fn predict_noise(&self, z: &Tensor, step: usize, cond: &[f64; NUM_FEATURES]) -> Result<Tensor>;
}

/// Runs the reverse chain from `z_F ~ N(0, S_F I)` down to step 0.
///
/// Each step subtracts `eps'_i` and, for `i > 1`, adds the posterior spread
/// `sqrt(sigma_i^2 S_{i-1} / S_i)` of the removed increment. The result is clamped to
/// `[-1.05, 1.05]`.
pub fn denoise_sample<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    model: &P,
    cond: &[f64; NUM_FEATURES],
    schedule: &NoiseSchedule,
    shape: &[usize],
    rng: &mut R,
) -> Result<Tensor> {
    let f = schedule.steps();
    let mut z = gaussian(shape, schedule.cumulative_variance(f).sqrt(), rng);
    for i in (1..=f).rev() {
        let s = schedule.cumulative_variance(i);
        if s == 0.0 {
            continue;
        }
        let eps_hat = model.predict_noise(&z, i, cond)?;
        if eps_hat.shape() != z.shape() {
            return Err(Error::Shape(format!("predictor returned {:?} for {:?}", eps_hat.shape(), z.shape())));
        }
        let var = schedule.sigma(i).powi(2);
        let coef = var / s;
        let spread = (var * schedule.cumulative_variance(i - 1) / s).sqrt();
        let noise = if spread > 0.0 { Some(gaussian(shape, spread, rng)) } else { None };
        z = z.zip_map(&eps_hat, |a, e| a - coef * e);
        if let Some(n) = noise {
            z.add_assign(&n);
        }
        z.check_finite("diffusion sample")?;
    }
    Ok(z.map(|v| v.clamp(-OUTPUT_CLAMP, OUTPUT_CLAMP)))
}

/// Architecture of the 1D U-Net. Level 0 runs at full length with `channels *
/// multipliers[0]` channels; each further level downsamples by `factors[l-1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Sequence length (node axis).
    pub length: usize,
    /// Row width of the representation.
    pub in_channels: usize,
    pub channels: usize,
    pub multipliers: Vec<usize>,
    pub factors: Vec<usize>,
    /// Residual blocks per downsampled level.
    pub res_blocks: Vec<usize>,
    /// Attention blocks per downsampled level.
    pub attn_depths: Vec<usize>,
    pub heads: usize,
    /// Conditioning embedding width.
    pub d_c: usize,
    pub ff_mult: f64,
}

impl UNetConfig {
    fn level_channels(&self) -> Vec<usize> {
        self.multipliers.iter().map(|m| m * self.channels).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let levels = self.factors.len();
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.multipliers.len() != levels + 1 || self.res_blocks.len() != levels || self.attn_depths.len() != levels
        {
            return bad(format!(
                "u-net needs {} multipliers and {levels} res/attn entries, got {:?}/{:?}/{:?}",
                levels + 1,
                self.multipliers,
                self.res_blocks,
                self.attn_depths
            ));
        }
        let total: usize = self.factors.iter().product();
        if self.length == 0 || total == 0 || self.length % total != 0 {
            return bad(format!("length {} not divisible by factors {:?}", self.length, self.factors));
        }
        let c0 = self.channels * self.multipliers[0];
        if c0 == 0 || c0 % 2 != 0 || self.d_c % 2 != 0 || self.d_c == 0 {
            return bad("level-0 channels and d_c must be positive and even".into());
        }
        for (l, c) in self.level_channels().iter().enumerate().skip(1) {
            if self.attn_depths[l - 1] > 0 && c % self.heads != 0 {
                return bad(format!("level {l} width {c} not divisible by {} heads", self.heads));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Level {
    down: Conv1d,
    res: Vec<ResBlock>,
    attn: Vec<AttnBlock>,
}

#[derive(Debug, Clone)]
struct UpLevel {
    res: Vec<ResBlock>,
    attn: Vec<AttnBlock>,
    factor: usize,
    conv: Conv1d,
}

/// Conditional U-Net over `[length, in_channels]` matrices.
#[derive(Debug, Clone)]
pub struct UNet {
    pub cfg: UNetConfig,
    conv_in: Conv1d,
    positions: Tensor,
    type_emb: ParamId,
    ctx_proj: Linear,
    down: Vec<Level>,
    mid: ResBlock,
    up: Vec<UpLevel>,
    conv_out: Conv1d,
}

struct ContextCache {
    emb: Tensor,
    pre: Tensor,
    ctx: Tensor,
    pooled: Tensor,
}

type Trace<C> = Vec<(Tensor, C)>;

struct DownCache {
    down_in: Tensor,
    res: Trace<ResBlockCache>,
    attn: Trace<AttnBlockCache>,
}

struct UpCache {
    res: Trace<ResBlockCache>,
    attn: Trace<AttnBlockCache>,
    up: Tensor,
}

pub struct UNetCache {
    context: ContextCache,
    input: Tensor,
    down: Vec<DownCache>,
    mid: (Tensor, ResBlockCache),
    up: Vec<UpCache>,
    skip_widths: Vec<usize>,
    final_cat: Tensor,
    final_act: Tensor,
}

const CONTEXT_TOKENS: usize = NUM_FEATURES + 1;

impl UNet {
    pub fn new<R: Rng + ?Sized>(store: &mut ParameterStore, cfg: UNetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let ch = cfg.level_channels();
        let d_c = cfg.d_c;
        let conv_in = Conv1d::new(store, "unet.conv_in", cfg.in_channels, ch[0], 3, 1, rng);
        let positions = sinusoidal_positions(cfg.length, ch[0])?;
        let type_emb = store.add_uniform("unet.ctx.type_emb", &[CONTEXT_TOKENS, d_c], 0.1, rng);
        let ctx_proj = Linear::new(store, "unet.ctx.proj", d_c, d_c, true, rng);
        let mut down = Vec::new();
        for l in 1..ch.len() {
            let name = format!("unet.down{l}");
            let conv = Conv1d::new(store, &format!("{name}.conv"), ch[l - 1], ch[l], 3, cfg.factors[l - 1], rng);
            let res = (0..cfg.res_blocks[l - 1])
                .map(|b| ResBlock::new(store, &format!("{name}.res{b}"), ch[l], ch[l], d_c, rng))
                .collect();
            let attn = (0..cfg.attn_depths[l - 1])
                .map(|b| {
                    AttnBlock::new(
                        store,
                        &format!("{name}.attn{b}"),
                        ch[l],
                        d_c,
                        cfg.heads,
                        MaskMode::None,
                        cfg.ff_mult,
                        rng,
                    )
                })
                .collect::<Result<_>>()?;
            down.push(Level { down: conv, res, attn });
        }
        let top = *ch.last().expect("at least one level");
        let mid = ResBlock::new(store, "unet.mid", top, top, d_c, rng);
        let mut up = Vec::new();
        for l in (1..ch.len()).rev() {
            let name = format!("unet.up{l}");
            let res = (0..cfg.res_blocks[l - 1])
                .map(|b| {
                    let c_in = if b == 0 { 2 * ch[l] } else { ch[l] };
                    ResBlock::new(store, &format!("{name}.res{b}"), c_in, ch[l], d_c, rng)
                })
                .collect::<Vec<_>>();
            let res = if res.is_empty() {
                vec![ResBlock::new(store, &format!("{name}.res0"), 2 * ch[l], ch[l], d_c, rng)]
            } else {
                res
            };
            let attn = (0..cfg.attn_depths[l - 1])
                .map(|b| {
                    AttnBlock::new(
                        store,
                        &format!("{name}.attn{b}"),
                        ch[l],
                        d_c,
                        cfg.heads,
                        MaskMode::None,
                        cfg.ff_mult,
                        rng,
                    )
                })
                .collect::<Result<_>>()?;
            let conv = Conv1d::new(store, &format!("{name}.conv"), ch[l], ch[l - 1], 3, 1, rng);
            up.push(UpLevel { res, attn, factor: cfg.factors[l - 1], conv });
        }
        let conv_out = Conv1d::new(store, "unet.conv_out", 2 * ch[0], cfg.in_channels, 3, 1, rng);
        Ok(Self { cfg, conv_in, positions, type_emb, ctx_proj, down, mid, up, conv_out })
    }

    fn context_forward(&self, ps: &ParameterStore, cond: &[f64; NUM_FEATURES], step: usize) -> Result<ContextCache> {
        let mut values: Vec<f64> = cond.iter().map(|c| c * COND_EMBED_SCALE).collect();
        values.push((step - 1) as f64);
        let mut emb = fourier_embed(&values, self.cfg.d_c)?;
        emb.add_assign(ps.get(self.type_emb));
        let pre = self.ctx_proj.forward(ps, &emb)?;
        let ctx = silu(&pre);
        let pooled = Tensor::from_vec(
            &[1, self.cfg.d_c],
            ctx.column_sums().into_iter().map(|s| s / CONTEXT_TOKENS as f64).collect(),
        )?;
        Ok(ContextCache { emb, pre, ctx, pooled })
    }

    /// Raw network output for an already scaled input at `step` (1-based).
    pub fn forward(
        &self,
        ps: &ParameterStore,
        x: &Tensor,
        cond: &[f64; NUM_FEATURES],
        step: usize,
    ) -> Result<(Tensor, UNetCache)> {
        if x.shape() != [self.cfg.length, self.cfg.in_channels] {
            return Err(Error::Shape(format!(
                "u-net expects [{}, {}], got {:?}",
                self.cfg.length,
                self.cfg.in_channels,
                x.shape()
            )));
        }
        if step == 0 {
            return Err(Error::InvalidArgument("diffusion steps are 1-based".into()));
        }
        let context = self.context_forward(ps, cond, step)?;
        let (ctx, pooled) = (&context.ctx, &context.pooled);
        let mut h = self.conv_in.forward(ps, x)?;
        h.add_assign(&self.positions);
        let mut skips = vec![h.clone()];
        let mut down = Vec::new();
        for level in &self.down {
            let down_in = h;
            h = level.down.forward(ps, &down_in)?;
            let mut res = Vec::new();
            for rb in &level.res {
                let (y, c) = rb.forward(ps, &h, pooled)?;
                res.push((std::mem::replace(&mut h, y), c));
            }
            let mut attn = Vec::new();
            for ab in &level.attn {
                let (y, c) = ab.forward(ps, &h, ctx)?;
                attn.push((std::mem::replace(&mut h, y), c));
            }
            skips.push(h.clone());
            down.push(DownCache { down_in, res, attn });
        }
        let (y, mc) = self.mid.forward(ps, &h, pooled)?;
        let mid = (std::mem::replace(&mut h, y), mc);
        let skip_widths: Vec<usize> = skips.iter().map(|s| s.cols()).collect();
        let mut up = Vec::new();
        for (level, skip) in self.up.iter().zip(skips[1..].iter().rev()) {
            h = Tensor::concat_cols(&h, skip)?;
            let mut res = Vec::new();
            for rb in &level.res {
                let (y, c) = rb.forward(ps, &h, pooled)?;
                res.push((std::mem::replace(&mut h, y), c));
            }
            let mut attn = Vec::new();
            for ab in &level.attn {
                let (y, c) = ab.forward(ps, &h, ctx)?;
                attn.push((std::mem::replace(&mut h, y), c));
            }
            let upsampled = upsample_rows(&h, level.factor);
            h = level.conv.forward(ps, &upsampled)?;
            up.push(UpCache { res, attn, up: upsampled });
        }
        let final_cat = Tensor::concat_cols(&h, &skips[0])?;
        let final_act = silu(&final_cat);
        let out = self.conv_out.forward(ps, &final_act)?;
        out.check_finite("u-net output")?;
        Ok((out, UNetCache { context, input: x.clone(), down, mid, up, skip_widths, final_cat, final_act }))
    }

    /// Accumulates parameter gradients and returns the gradient for the input.
    pub fn backward(&self, ps: &ParameterStore, cache: &UNetCache, dout: &Tensor, grads: &mut Grads) -> Tensor {
        let ctx = &cache.context.ctx;
        let pooled = &cache.context.pooled;
        let mut dctx = Tensor::zeros(ctx.shape());
        let mut dpooled = Tensor::zeros(pooled.shape());
        let mut dskips: Vec<Option<Tensor>> = vec![None; cache.skip_widths.len()];

        let dact = self.conv_out.backward(ps, &cache.final_act, dout, grads);
        let dcat = silu_backward(&cache.final_cat, &dact);
        let (mut dh, ds0) = dcat.split_cols(dcat.cols() - cache.skip_widths[0]);
        dskips[0] = Some(ds0);

        let levels = self.up.len();
        for (k, (level, uc)) in self.up.iter().zip(&cache.up).enumerate().rev() {
            let dup = level.conv.backward(ps, &uc.up, &dh, grads);
            dh = upsample_rows_backward(&dup, level.factor);
            for (ab, (inp, c)) in level.attn.iter().zip(&uc.attn).rev() {
                let (dx, dc) = ab.backward(ps, inp, ctx, c, &dh, grads);
                dctx.add_assign(&dc);
                dh = dx;
            }
            for (rb, (inp, c)) in level.res.iter().zip(&uc.res).rev() {
                let (dx, dp) = rb.backward(ps, inp, pooled, c, &dh, grads);
                dpooled.add_assign(&dp);
                dh = dx;
            }
            // the k-th decoder level consumed skip index `levels - k`
            let skip_idx = levels - k;
            let (dprev, dskip) = dh.split_cols(dh.cols() - cache.skip_widths[skip_idx]);
            dskips[skip_idx] = Some(dskip);
            dh = dprev;
        }

        let (dx, dp) = self.mid.backward(ps, &cache.mid.0, pooled, &cache.mid.1, &dh, grads);
        dpooled.add_assign(&dp);
        dh = dx;

        for (l, (level, dc)) in self.down.iter().zip(&cache.down).enumerate().rev() {
            dh.add_assign(dskips[l + 1].as_ref().expect("decoder visited every skip"));
            for (ab, (inp, c)) in level.attn.iter().zip(&dc.attn).rev() {
                let (dx, dcx) = ab.backward(ps, inp, ctx, c, &dh, grads);
                dctx.add_assign(&dcx);
                dh = dx;
            }
            for (rb, (inp, c)) in level.res.iter().zip(&dc.res).rev() {
                let (dx, dp) = rb.backward(ps, inp, pooled, c, &dh, grads);
                dpooled.add_assign(&dp);
                dh = dx;
            }
            dh = level.down.backward(ps, &dc.down_in, &dh, grads);
        }
        dh.add_assign(dskips[0].as_ref().expect("final skip"));
        let dx = self.conv_in.backward(ps, &cache.input, &dh, grads);

        // context: pooled is the row mean of ctx
        let inv = 1.0 / CONTEXT_TOKENS as f64;
        let dp: Vec<f64> = dpooled.data().iter().map(|v| v * inv).collect();
        dctx.add_row_vector(&dp);
        let dpre = silu_backward(&cache.context.pre, &dctx);
        let demb = self.ctx_proj.backward(ps, &cache.context.emb, &dpre, grads);
        grads.get_mut(self.type_emb).add_assign(&demb);
        dx
    }
}

/// Everything needed to rebuild a diffusion model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub kind: ZKind,
    pub max_nodes: usize,
    pub unet: UNetConfig,
    pub schedule: ScheduleConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Small enough to train in minutes on one CPU core.
    Desk,
    /// Table-sized models.
    Paper,
}

impl DiffusionConfig {
    pub fn preset(kind: ZKind, preset: Preset, max_nodes: usize) -> Self {
        let zs = ZSpace { kind, max_nodes };
        let unet = match preset {
            Preset::Desk => UNetConfig {
                length: max_nodes,
                in_channels: zs.width(),
                channels: 32,
                multipliers: vec![1, 2, 4],
                factors: vec![4, 4],
                res_blocks: vec![1, 1],
                attn_depths: vec![1, 1],
                heads: 4,
                d_c: 64,
                ff_mult: 2.0,
            },
            Preset::Paper => UNetConfig {
                length: max_nodes,
                in_channels: zs.width(),
                channels: if kind == ZKind::Sparse { 128 } else { 256 },
                multipliers: vec![1, 2, 4],
                factors: vec![4, 4],
                res_blocks: if kind == ZKind::Sparse { vec![2, 2] } else { vec![3, 3] },
                attn_depths: vec![1, 1],
                heads: 8,
                d_c: 256,
                ff_mult: 2.0,
            },
        };
        Self {
            kind,
            max_nodes,
            unet,
            schedule: ScheduleConfig::default(),
            adam: AdamConfig::default(),
            batch_size: match preset {
                Preset::Desk => 8,
                Preset::Paper => 32,
            },
        }
    }

    pub fn zspace(&self) -> ZSpace {
        ZSpace { kind: self.kind, max_nodes: self.max_nodes }
    }
}

/// A trainable diffusion model over one z-space layout.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    pub cfg: DiffusionConfig,
    pub store: ParameterStore,
    pub unet: UNet,
    pub schedule: NoiseSchedule,
    skip_gain: ParamId,
}

/// One training example: an encoded sample and its normalized features.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub z0: Tensor,
    pub cond: [f64; NUM_FEATURES],
}

impl DiffusionModel {
    pub fn new<R: Rng + ?Sized>(cfg: DiffusionConfig, rng: &mut R) -> Result<Self> {
        let zs = cfg.zspace();
        if cfg.unet.length != zs.max_nodes || cfg.unet.in_channels != zs.width() {
            return Err(Error::InvalidArgument(format!(
                "u-net shape [{}, {}] does not match the {:?} layout {:?}",
                cfg.unet.length,
                cfg.unet.in_channels,
                cfg.kind,
                zs.shape()
            )));
        }
        let schedule = NoiseSchedule::geometric(&cfg.schedule)?;
        let mut store = ParameterStore::new();
        let unet = UNet::new(&mut store, cfg.unet.clone(), rng)?;
        let skip_gain = store.add("skip_gain", Tensor::zeros(&[cfg.unet.in_channels]));
        Ok(Self { cfg, store, unet, schedule, skip_gain })
    }

    /// Per-channel skip coefficients of the noise estimate at step `i`.
    fn skip_coefficients(&self, i: usize) -> Vec<f64> {
        let c = self.schedule.precond(i).c_skip;
        self.store.get(self.skip_gain).data().iter().map(|a| c + (1.0 - c) * a).collect()
    }

    /// `eps_hat = skip * z - c_out * out`, row by row.
    fn combine(&self, z: &Tensor, out: &Tensor, i: usize) -> Tensor {
        let skip = self.skip_coefficients(i);
        let c_out = self.schedule.precond(i).c_out;
        let w = skip.len();
        let mut pred = z.clone();
        for (k, (p, f)) in pred.data_mut().iter_mut().zip(out.data()).enumerate() {
            *p = skip[k % w] * *p - c_out * f;
        }
        pred
    }

    /// Loss and gradients for a batch, each item at its own (step, noise) draw.
    pub fn batch_gradients<R: Rng + ?Sized>(&self, batch: &[TrainItem], rng: &mut R) -> Result<(f64, Grads)> {
        let mut grads = self.store.zero_grads();
        let mut total = 0.0;
        for item in batch {
            let i = rng.random_range(1..=self.schedule.steps());
            let noised = forward_noise(&item.z0, i, &self.schedule, rng)?;
            let pc = self.schedule.precond(i);
            let x = noised.z.map(|v| v * pc.c_in);
            let (out, cache) = self.unet.forward(&self.store, &x, &item.cond, i)?;
            let pred = self.combine(&noised.z, &out, i);
            let (loss, dpred) = mse(&pred, &noised.cumulative);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("diffusion loss {loss} at step {i}")));
            }
            total += loss;
            let dout = dpred.map(|v| -v * pc.c_out);
            self.unet.backward(&self.store, &cache, &dout, &mut grads);
            let dgain = grads.get_mut(self.skip_gain).data_mut();
            let w = dgain.len();
            for (k, (d, z)) in dpred.data().iter().zip(noised.z.data()).enumerate() {
                dgain[k % w] += (1.0 - pc.c_skip) * d * z;
            }
        }
        let n = batch.len() as f64;
        grads.scale(1.0 / n);
        Ok((total / n, grads))
    }

    /// One Adam step on a batch; returns the batch loss before the update.
    pub fn train_step<R: Rng + ?Sized>(&mut self, batch: &[TrainItem], rng: &mut R) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty training batch".into()));
        }
        let (loss, grads) = self.batch_gradients(batch, rng)?;
        adam_step(&mut self.store, &grads, &self.cfg.adam)?;
        Ok(loss)
    }

    /// Draws a normalized matrix for normalized features `cond`.
    pub fn sample<R: Rng + ?Sized>(&self, cond: &[f64; NUM_FEATURES], rng: &mut R) -> Result<Tensor> {
        denoise_sample(self, cond, &self.schedule, &self.cfg.zspace().shape(), rng)
    }

    /// Samples and decodes a graph in SI units.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        cond: &[f64; NUM_FEATURES],
        params: &NormalizationParams,
        rng: &mut R,
    ) -> Result<Decoded> {
        let z = self.sample(cond, rng)?;
        self.cfg.zspace().decode(&z, params)
    }

    /// Encodes samples with features into training items.
    pub fn items(&self, samples: &[&GraphSample], params: &NormalizationParams) -> Result<Vec<TrainItem>> {
        encode_items(self.cfg.zspace(), samples, params)
    }
}

pub(crate) fn encode_items(
    zs: ZSpace,
    samples: &[&GraphSample],
    params: &NormalizationParams,
) -> Result<Vec<TrainItem>> {
    samples
        .iter()
        .filter_map(|s| s.features.as_ref().map(|f| (s, f)))
        .map(|(s, f)| Ok(TrainItem { z0: zs.encode(s, params)?, cond: params.normalize_features(f) }))
        .collect()
}

impl NoisePredictor for DiffusionModel {
    fn predict_noise(&self, z: &Tensor, step: usize, cond: &[f64; NUM_FEATURES]) -> Result<Tensor> {
        let pc = self.schedule.precond(step);
        let x = z.map(|v| v * pc.c_in);
        let (out, _) = self.unet.forward(&self.store, &x, cond, step)?;
        Ok(self.combine(z, &out, step))
    }
}

/// Mean training loss of `model` over `items`, with the same step/noise sampling as
/// training but no parameter update.
pub fn denoising_loss<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    model: &P,
    items: &[TrainItem],
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("no items to evaluate".into()));
    }
    let mut total = 0.0;
    for item in items {
        let i = rng.random_range(1..=schedule.steps());
        let noised = forward_noise(&item.z0, i, schedule, rng)?;
        let pred = model.predict_noise(&noised.z, i, &item.cond)?;
        total += mse(&pred, &noised.cumulative).0;
    }
    Ok(total / items.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_endpoints() {
        let s = NoiseSchedule::geometric(&ScheduleConfig::default()).unwrap();
        assert_eq!(s.steps(), 96);
        assert!((s.sigma(1) - 0.01).abs() < 1e-15);
        assert!((s.sigma(96) - 1.0).abs() < 1e-15);
        for i in 2..=96 {
            assert!(s.sigma(i) > s.sigma(i - 1));
        }
        assert!(NoiseSchedule::geometric(&ScheduleConfig { steps: 4, sigma_min: 0.0, sigma_max: 1.0, sigma_data: 1.0 }).is_err());
    }

    #[test]
    fn zero_sigmas_keep_data() {
        let s = NoiseSchedule::from_sigmas(vec![0.0; 5]).unwrap();
        let z0 = Tensor::from_vec(&[2, 2], vec![0.1, -0.2, 0.3, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(forward_noise(&z0, 5, &s, &mut rng).unwrap().z, z0);
        assert!(forward_noise(&z0, 6, &s, &mut rng).is_err());
    }

    struct Oracle(Tensor);

    impl NoisePredictor for Oracle {
        fn predict_noise(&self, z: &Tensor, _: usize, _: &[f64; NUM_FEATURES]) -> Result<Tensor> {
            Ok(z.zip_map(&self.0, |a, b| a - b))
        }
    }

    #[test]
    fn oracle_telescopes() {
        let s = NoiseSchedule::geometric(&ScheduleConfig::default()).unwrap();
        let z0 = Tensor::from_vec(&[3, 2], vec![0.5, -1.0, 0.0, 0.25, 1.0, -0.75]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = denoise_sample(&Oracle(z0.clone()), &[0.0; 7], &s, &[3, 2], &mut rng).unwrap();
        assert!(out.max_abs_diff(&z0) < 1e-10);
    }

    #[test]
    fn config_validation() {
        let mut cfg = DiffusionConfig::preset(ZKind::Sparse, Preset::Desk, 64).unet;
        assert!(cfg.validate().is_ok());
        cfg.length = 60;
        assert!(cfg.validate().is_err());
    }
}
