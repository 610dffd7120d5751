//! Composite blocks shared by the U-Net and the autoregressive decoder.

use rand::Rng;

use super::attention::{AttentionCache, AttentionConfig, MaskMode, MultiHeadAttention};
use super::layers::{silu, silu_backward, Conv1d, FeedForward, FeedForwardCache, LayerNorm, Linear};
use super::{Grads, ParameterStore, Tensor};
use crate::Result;

/// Pre-norm residual conv block over `[length, channels]` with an additive
/// projection of a pooled conditioning vector after the first convolution.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub norm1: LayerNorm,
    pub conv1: Conv1d,
    pub emb: Linear,
    pub norm2: LayerNorm,
    pub conv2: Conv1d,
    /// Channel-changing shortcut when `c_in != c_out`.
    pub skip: Option<Linear>,
}

pub struct ResBlockCache {
    h1: Tensor,
    a1: Tensor,
    c1: Tensor,
    h2: Tensor,
    a2: Tensor,
}

impl ResBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        d_ctx: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), c_in),
            conv1: Conv1d::new(store, &format!("{name}.conv1"), c_in, c_out, 3, 1, rng),
            emb: Linear::new(store, &format!("{name}.emb"), d_ctx, c_out, true, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), c_out),
            conv2: Conv1d::new(store, &format!("{name}.conv2"), c_out, c_out, 3, 1, rng),
            skip: (c_in != c_out).then(|| Linear::new(store, &format!("{name}.skip"), c_in, c_out, false, rng)),
        }
    }

    /// `pooled` is a `[1, d_ctx]` row.
    pub fn forward(&self, ps: &ParameterStore, x: &Tensor, pooled: &Tensor) -> Result<(Tensor, ResBlockCache)> {
        let h1 = self.norm1.forward(ps, x)?;
        let a1 = silu(&h1);
        let mut c1 = self.conv1.forward(ps, &a1)?;
        let e = self.emb.forward(ps, pooled)?;
        c1.add_row_vector(e.data());
        let h2 = self.norm2.forward(ps, &c1)?;
        let a2 = silu(&h2);
        let mut y = self.conv2.forward(ps, &a2)?;
        match &self.skip {
            Some(s) => y.add_assign(&s.forward(ps, x)?),
            None => y.add_assign(x),
        }
        Ok((y, ResBlockCache { h1, a1, c1, h2, a2 }))
    }

    /// Returns gradients for `x` and for `pooled`.
    pub fn backward(
        &self,
        ps: &ParameterStore,
        x: &Tensor,
        pooled: &Tensor,
        cache: &ResBlockCache,
        dy: &Tensor,
        grads: &mut Grads,
    ) -> (Tensor, Tensor) {
        let da2 = self.conv2.backward(ps, &cache.a2, dy, grads);
        let dh2 = silu_backward(&cache.h2, &da2);
        let dc1 = self.norm2.backward(ps, &cache.c1, &dh2, grads);
        let de = Tensor::from_vec(&[1, dc1.cols()], dc1.column_sums()).expect("row shape");
        let dpooled = self.emb.backward(ps, pooled, &de, grads);
        let da1 = self.conv1.backward(ps, &cache.a1, &dc1, grads);
        let dh1 = silu_backward(&cache.h1, &da1);
        let mut dx = self.norm1.backward(ps, x, &dh1, grads);
        match &self.skip {
            Some(s) => dx.add_assign(&s.backward(ps, x, dy, grads)),
            None => dx.add_assign(dy),
        }
        (dx, dpooled)
    }
}

/// Pre-norm transformer block: self-attention, cross-attention on a context, feed-forward,
/// each wrapped in a residual connection.
#[derive(Debug, Clone)]
pub struct AttnBlock {
    pub norm1: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm3: LayerNorm,
    pub ff: FeedForward,
}

pub struct AttnBlockCache {
    n1: Tensor,
    sa: AttentionCache,
    x1: Tensor,
    n2: Tensor,
    ca: AttentionCache,
    x2: Tensor,
    n3: Tensor,
    ff: FeedForwardCache,
}

impl AttnBlockCache {
    pub fn self_attention(&self) -> &AttentionCache {
        &self.sa
    }
}

impl AttnBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        dim: usize,
        d_ctx: usize,
        heads: usize,
        mask: MaskMode,
        ff_mult: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let self_cfg = AttentionConfig::new(dim, heads, mask)?;
        let cross_cfg = AttentionConfig::new(dim, heads, MaskMode::None)?;
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self"), self_cfg, dim, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross"), cross_cfg, d_ctx, rng),
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), dim),
            ff: FeedForward::new(store, &format!("{name}.ff"), dim, ff_mult, rng),
        })
    }

    pub fn forward(&self, ps: &ParameterStore, x: &Tensor, ctx: &Tensor) -> Result<(Tensor, AttnBlockCache)> {
        let n1 = self.norm1.forward(ps, x)?;
        let (mut x1, sa) = self.self_attn.forward(ps, &n1, None)?;
        x1.add_assign(x);
        let n2 = self.norm2.forward(ps, &x1)?;
        let (mut x2, ca) = self.cross_attn.forward(ps, &n2, Some(ctx))?;
        x2.add_assign(&x1);
        let n3 = self.norm3.forward(ps, &x2)?;
        let (mut y, ff) = self.ff.forward(ps, &n3)?;
        y.add_assign(&x2);
        Ok((y, AttnBlockCache { n1, sa, x1, n2, ca, x2, n3, ff }))
    }

    /// Returns gradients for `x` and for `ctx`.
    pub fn backward(
        &self,
        ps: &ParameterStore,
        x: &Tensor,
        ctx: &Tensor,
        cache: &AttnBlockCache,
        dy: &Tensor,
        grads: &mut Grads,
    ) -> (Tensor, Tensor) {
        let dn3 = self.ff.backward(ps, &cache.n3, &cache.ff, dy, grads);
        let mut dx2 = self.norm3.backward(ps, &cache.x2, &dn3, grads);
        dx2.add_assign(dy);
        let (dn2, dctx) = self.cross_attn.backward(ps, &cache.n2, Some(ctx), &cache.ca, &dx2, grads);
        let mut dx1 = self.norm2.backward(ps, &cache.x1, &dn2, grads);
        dx1.add_assign(&dx2);
        let (dn1, _) = self.self_attn.backward(ps, &cache.n1, None, &cache.sa, &dx1, grads);
        let mut dx = self.norm1.backward(ps, x, &dn1, grads);
        dx.add_assign(&dx1);
        (dx, dctx.expect("cross-attention yields a context gradient"))
    }
}
