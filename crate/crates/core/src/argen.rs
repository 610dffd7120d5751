//! Decoder-only autoregressive transformer over full-adjacency rows.
//!
//! The sequence is `[T, z_1, ..., z_N]` where `T` is the start token. Position `j` predicts
//! row `j + 1` with causal self-attention over earlier rows and cross-attention to seven
//! conditioning tokens. Rows are regressed with an L2 loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{GraphSample, NormalizationParams};
use crate::diffusion::{encode_items, Preset, TrainItem};
use crate::nn::blocks::{AttnBlock, AttnBlockCache};
use crate::nn::embed::sinusoidal_positions;
use crate::nn::layers::{silu, silu_backward, LayerNorm, Linear};
use crate::nn::{adam_step, mse, AdamConfig, Grads, MaskMode, ParamId, ParameterStore, Tensor};
use crate::zspace::{prepend_start_token, Decoded, ZSpace, START_TOKEN_VALUE};
use crate::{Error, Result, NUM_FEATURES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArGenConfig {
    pub max_nodes: usize,
    pub d_model: usize,
    pub depth: usize,
    pub heads: usize,
    pub ff_mult: f64,
    /// Width of each conditioning token.
    pub d_c: usize,
    pub adam: AdamConfig,
    pub batch_size: usize,
}

impl ArGenConfig {
    pub fn preset(preset: Preset, max_nodes: usize) -> Self {
        match preset {
            Preset::Desk => Self {
                max_nodes,
                d_model: 64,
                depth: 2,
                heads: 4,
                ff_mult: 4.0,
                d_c: 64,
                // 2e-4 collapses rollouts to a few nodes at this size and step budget
                adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
                batch_size: 8,
            },
            Preset::Paper => Self {
                max_nodes,
                d_model: 512,
                depth: 12,
                heads: 16,
                ff_mult: 4.0,
                d_c: 64,
                adam: AdamConfig::default(),
                batch_size: 32,
            },
        }
    }

    pub fn zspace(&self) -> ZSpace {
        ZSpace::full(self.max_nodes)
    }

    /// Row width `3 + N`.
    pub fn width(&self) -> usize {
        self.zspace().width()
    }
}

#[derive(Debug, Clone)]
pub struct ArGen {
    pub cfg: ArGenConfig,
    pub store: ParameterStore,
    cond_scale: ParamId,
    cond_shift: ParamId,
    cond_proj: Linear,
    input: Linear,
    positions: Tensor,
    blocks: Vec<AttnBlock>,
    norm: LayerNorm,
    output: Linear,
}

pub struct ConditionCache {
    cond: [f64; NUM_FEATURES],
    pre: Tensor,
    act: Tensor,
    tokens: Tensor,
}

impl ConditionCache {
    /// The `[7, d_c]` conditioning tokens.
    pub fn tokens(&self) -> &Tensor {
        &self.tokens
    }
}

pub struct DecoderCache {
    prefix: Tensor,
    inputs: Vec<Tensor>,
    blocks: Vec<AttnBlockCache>,
    last: Tensor,
    normed: Tensor,
}

/// Rows emitted by [`ArGen::rollout`] and how far each row's adjacency entries are from
/// clean `±1` values (mean of `| |a| - 1 |`).
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTrace {
    pub rows: Tensor,
    pub residuals: Vec<f64>,
}

impl ArGen {
    pub fn new<R: Rng + ?Sized>(cfg: ArGenConfig, rng: &mut R) -> Result<Self> {
        if cfg.d_model % 2 != 0 || cfg.max_nodes == 0 {
            return Err(Error::InvalidArgument(format!(
                "d_model must be even and N positive, got {} and {}",
                cfg.d_model, cfg.max_nodes
            )));
        }
        let mut store = ParameterStore::new();
        let width = cfg.width();
        let cond_scale = store.add_uniform("ar.cond.scale", &[NUM_FEATURES, cfg.d_c], 1.0, rng);
        let cond_shift = store.add_uniform("ar.cond.shift", &[NUM_FEATURES, cfg.d_c], 1.0, rng);
        let cond_proj = Linear::new(&mut store, "ar.cond.proj", cfg.d_c, cfg.d_c, true, rng);
        let input = Linear::new(&mut store, "ar.input", width, cfg.d_model, true, rng);
        let positions = sinusoidal_positions(cfg.max_nodes + 1, cfg.d_model)?;
        let blocks = (0..cfg.depth)
            .map(|b| {
                AttnBlock::new(
                    &mut store,
                    &format!("ar.block{b}"),
                    cfg.d_model,
                    cfg.d_c,
                    cfg.heads,
                    MaskMode::Causal,
                    cfg.ff_mult,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        let norm = LayerNorm::new(&mut store, "ar.norm", cfg.d_model);
        let output = Linear::new(&mut store, "ar.output", cfg.d_model, width, true, rng);
        Ok(Self { cfg, store, cond_scale, cond_shift, cond_proj, input, positions, blocks, norm, output })
    }

    /// Expands the 7 normalized features into `[7, d_c]` tokens: feature `k` becomes
    /// `silu(c_k * a_k + b_k)` followed by a shared linear map.
    pub fn encode_condition(&self, ps: &ParameterStore, cond: &[f64]) -> Result<ConditionCache> {
        let cond: [f64; NUM_FEATURES] = cond
            .try_into()
            .map_err(|_| Error::Shape(format!("conditioning needs {NUM_FEATURES} values, got {}", cond.len())))?;
        let (a, b) = (ps.get(self.cond_scale), ps.get(self.cond_shift));
        let mut pre = b.clone();
        for (k, &c) in cond.iter().enumerate() {
            for (p, &s) in pre.row_mut(k).iter_mut().zip(a.row(k)) {
                *p += c * s;
            }
        }
        let act = silu(&pre);
        let tokens = self.cond_proj.forward(ps, &act)?;
        Ok(ConditionCache { cond, pre, act, tokens })
    }

    fn condition_backward(&self, ps: &ParameterStore, cache: &ConditionCache, dtokens: &Tensor, grads: &mut Grads) {
        let dact = self.cond_proj.backward(ps, &cache.act, dtokens, grads);
        let dpre = silu_backward(&cache.pre, &dact);
        let ga = grads.get_mut(self.cond_scale);
        for (k, &c) in cache.cond.iter().enumerate() {
            for (g, &d) in ga.row_mut(k).iter_mut().zip(dpre.row(k)) {
                *g += c * d;
            }
        }
        grads.get_mut(self.cond_shift).add_assign(&dpre);
    }

    /// Predicts the next row at every position of a prefix that begins with the start token.
    pub fn decoder_forward(&self, ps: &ParameterStore, prefix: &Tensor, tokens: &Tensor) -> Result<(Tensor, DecoderCache)> {
        let width = self.cfg.width();
        if prefix.cols() != width || prefix.rows() == 0 || prefix.rows() > self.cfg.max_nodes + 1 {
            return Err(Error::Shape(format!(
                "prefix must be [1..={}, {width}], got {:?}",
                self.cfg.max_nodes + 1,
                prefix.shape()
            )));
        }
        if prefix.row(0).iter().any(|&v| v != START_TOKEN_VALUE) {
            return Err(Error::InvalidArgument("prefix does not begin with the start token".into()));
        }
        let mut h = self.input.forward(ps, prefix)?;
        h.add_assign(&self.positions.slice_rows(0, prefix.rows()));
        let mut inputs = Vec::with_capacity(self.blocks.len());
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, c) = block.forward(ps, &h, tokens)?;
            inputs.push(std::mem::replace(&mut h, y));
            caches.push(c);
        }
        let normed = self.norm.forward(ps, &h)?;
        let out = self.output.forward(ps, &normed)?;
        out.check_finite("transformer output")?;
        Ok((out, DecoderCache { prefix: prefix.clone(), inputs, blocks: caches, last: h, normed }))
    }

    /// Returns gradients for the prefix and for the conditioning tokens.
    pub fn decoder_backward(
        &self,
        ps: &ParameterStore,
        tokens: &Tensor,
        cache: &DecoderCache,
        dout: &Tensor,
        grads: &mut Grads,
    ) -> (Tensor, Tensor) {
        let dnormed = self.output.backward(ps, &cache.normed, dout, grads);
        let mut dh = self.norm.backward(ps, &cache.last, &dnormed, grads);
        let mut dtokens = Tensor::zeros(tokens.shape());
        for ((block, inp), c) in self.blocks.iter().zip(&cache.inputs).zip(&cache.blocks).rev() {
            let (dx, dt) = block.backward(ps, inp, tokens, c, &dh, grads);
            dtokens.add_assign(&dt);
            dh = dx;
        }
        let dprefix = self.input.backward(ps, &cache.prefix, &dh, grads);
        (dprefix, dtokens)
    }

    /// Teacher-forced predictions for a full `[N, 3 + N]` matrix: the input is the start
    /// token followed by rows `1..N-1`.
    pub fn teacher_forced(&self, ps: &ParameterStore, z: &Tensor, cond: &[f64]) -> Result<Tensor> {
        let cc = self.encode_condition(ps, cond)?;
        let input = teacher_input(z);
        Ok(self.decoder_forward(ps, &input, &cc.tokens)?.0)
    }

    /// Loss and gradients of one batch.
    pub fn batch_gradients(&self, batch: &[TrainItem]) -> Result<(f64, Grads)> {
        let mut grads = self.store.zero_grads();
        let mut total = 0.0;
        for item in batch {
            let cc = self.encode_condition(&self.store, &item.cond)?;
            let input = teacher_input(&item.z0);
            let (pred, cache) = self.decoder_forward(&self.store, &input, &cc.tokens)?;
            let (loss, dpred) = mse(&pred, &item.z0);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("transformer loss {loss}")));
            }
            total += loss;
            let (_, dtokens) = self.decoder_backward(&self.store, &cc.tokens, &cache, &dpred, &mut grads);
            self.condition_backward(&self.store, &cc, &dtokens, &mut grads);
        }
        let n = batch.len() as f64;
        grads.scale(1.0 / n);
        Ok((total / n, grads))
    }

    /// One Adam step; returns the batch loss before the update.
    pub fn train_step(&mut self, batch: &[TrainItem]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty training batch".into()));
        }
        let (loss, grads) = self.batch_gradients(batch)?;
        adam_step(&mut self.store, &grads, &self.cfg.adam)?;
        Ok(loss)
    }

    /// Mean teacher-forced loss without updating.
    pub fn loss(&self, items: &[TrainItem]) -> Result<f64> {
        if items.is_empty() {
            return Err(Error::InvalidArgument("no items to evaluate".into()));
        }
        let mut total = 0.0;
        for item in items {
            let pred = self.teacher_forced(&self.store, &item.z0, &item.cond)?;
            total += mse(&pred, &item.z0).0;
        }
        Ok(total / items.len() as f64)
    }

    /// Greedy rollout: starting from the start token, append each predicted row until
    /// `N` rows are emitted.
    pub fn rollout(&self, cond: &[f64; NUM_FEATURES]) -> Result<GenerationTrace> {
        let cc = self.encode_condition(&self.store, cond)?;
        let width = self.cfg.width();
        let n = self.cfg.max_nodes;
        let mut seq = Tensor::full(&[1, width], START_TOKEN_VALUE);
        let mut residuals = Vec::with_capacity(n);
        for _ in 0..n {
            let (pred, _) = self.decoder_forward(&self.store, &seq, &cc.tokens)?;
            let row = pred.slice_rows(pred.rows() - 1, pred.rows());
            let adj = &row.data()[3..];
            residuals.push(adj.iter().map(|a| (a.abs() - 1.0).abs()).sum::<f64>() / adj.len() as f64);
            seq = Tensor::concat_rows(&[&seq, &row])?;
        }
        Ok(GenerationTrace { rows: seq.slice_rows(1, n + 1), residuals })
    }

    /// Rolls out and decodes a graph in SI units.
    pub fn generate(&self, cond: &[f64; NUM_FEATURES], params: &NormalizationParams) -> Result<(Decoded, GenerationTrace)> {
        let trace = self.rollout(cond)?;
        let decoded = self.cfg.zspace().decode(&trace.rows, params)?;
        Ok((decoded, trace))
    }

    pub fn items(&self, samples: &[&GraphSample], params: &NormalizationParams) -> Result<Vec<TrainItem>> {
        encode_items(self.cfg.zspace(), samples, params)
    }
}

/// `[T, z_1, ..., z_{N-1}]`.
pub fn teacher_input(z: &Tensor) -> Tensor {
    let with_token = prepend_start_token(z);
    with_token.slice_rows(0, z.rows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ArGen {
        let cfg = ArGenConfig { d_model: 8, depth: 1, heads: 2, d_c: 4, ..ArGenConfig::preset(Preset::Desk, 6) };
        ArGen::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn condition_shape() {
        let m = tiny();
        let c = m.encode_condition(&m.store, &[0.0; 7]).unwrap();
        assert_eq!(c.tokens().shape(), &[7, 4]);
        assert!(m.encode_condition(&m.store, &[0.0; 6]).is_err());
    }

    #[test]
    fn start_token_only() {
        let m = tiny();
        let c = m.encode_condition(&m.store, &[0.1; 7]).unwrap();
        let prefix = Tensor::full(&[1, 9], START_TOKEN_VALUE);
        let (out, _) = m.decoder_forward(&m.store, &prefix, c.tokens()).unwrap();
        assert_eq!(out.shape(), &[1, 9]);
        assert!(m.decoder_forward(&m.store, &Tensor::zeros(&[1, 9]), c.tokens()).is_err());
    }

    #[test]
    fn rollout_length() {
        let m = tiny();
        let t = m.rollout(&[0.2; 7]).unwrap();
        assert_eq!(t.rows.shape(), &[6, 9]);
        assert_eq!(t.residuals.len(), 6);
    }
}
