//! Scaled dot-product and multi-head attention.

use rand::Rng;

use super::layers::Linear;
use super::tensor::{gemm, MatRef};
use super::{Grads, ParameterStore, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MaskMode {
    None,
    /// Query `i` may only attend to keys `j <= i`.
    Causal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub heads: usize,
    pub mask: MaskMode,
}

impl AttentionConfig {
    pub fn new(d_model: usize, heads: usize, mask: MaskMode) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "d_model {d_model} is not divisible by {heads} heads"
            )));
        }
        Ok(Self { d_model, heads, mask })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Per-head `softmax(Q K^T / sqrt(d_k) + M) V` on already projected inputs.
///
/// `q` is `[n, d_model]`, `k` and `v` are `[m, d_model]`; heads split the columns.
/// Returns the concatenated head outputs and each head's attention matrix.
pub fn scaled_dot_product_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    cfg: &AttentionConfig,
) -> Result<(Tensor, Vec<Tensor>)> {
    let d = cfg.d_model;
    if q.cols() != d || k.cols() != d || v.cols() != d || k.rows() != v.rows() {
        return Err(Error::Shape(format!(
            "attention q {:?}, k {:?}, v {:?} with d_model {d}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let (n, m) = (q.rows(), k.rows());
    if n > 0 && m == 0 {
        return Err(Error::Shape("attention over an empty key set".into()));
    }
    let dk = cfg.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut out = Tensor::zeros(&[n, d]);
    let mut probs = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let off = h * dk;
        let mut s = Tensor::zeros(&[n, m]);
        gemm(
            n,
            dk,
            m,
            scale,
            MatRef::new(&q.data()[off..], d, 1),
            MatRef::new(&k.data()[off..], d, 1).t(),
            0.0,
            s.data_mut(),
            m,
        );
        for i in 0..n {
            let allowed = match cfg.mask {
                MaskMode::None => m,
                MaskMode::Causal => (i + 1).min(m),
            };
            let row = s.row_mut(i);
            let max = row[..allowed].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in &mut row[..allowed] {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in &mut row[..allowed] {
                *x /= total;
            }
            row[allowed..].fill(0.0);
        }
        gemm(
            n,
            m,
            dk,
            1.0,
            MatRef::new(s.data(), m, 1),
            MatRef::new(&v.data()[off..], d, 1),
            0.0,
            &mut out.data_mut()[off..],
            d,
        );
        probs.push(s);
    }
    Ok((out, probs))
}

/// Gradients of [`scaled_dot_product_attention`] with respect to `q`, `k` and `v`.
pub fn scaled_dot_product_attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    probs: &[Tensor],
    cfg: &AttentionConfig,
    dout: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let d = cfg.d_model;
    let (n, m) = (q.rows(), k.rows());
    let dk = cfg.head_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut dq = Tensor::zeros(&[n, d]);
    let mut dkt = Tensor::zeros(&[m, d]);
    let mut dv = Tensor::zeros(&[m, d]);
    for (h, p) in probs.iter().enumerate() {
        let off = h * dk;
        let mut dp = Tensor::zeros(&[n, m]);
        gemm(
            n,
            dk,
            m,
            1.0,
            MatRef::new(&dout.data()[off..], d, 1),
            MatRef::new(&v.data()[off..], d, 1).t(),
            0.0,
            dp.data_mut(),
            m,
        );
        gemm(
            m,
            n,
            dk,
            1.0,
            MatRef::new(p.data(), m, 1).t(),
            MatRef::new(&dout.data()[off..], d, 1),
            0.0,
            &mut dv.data_mut()[off..],
            d,
        );
        // softmax backward, folded with the 1/sqrt(d_k) scale
        let mut ds = dp;
        for i in 0..n {
            let pr = p.row(i);
            let row = ds.row_mut(i);
            let inner: f64 = row.iter().zip(pr).map(|(a, b)| a * b).sum();
            for (x, &pv) in row.iter_mut().zip(pr) {
                *x = pv * (*x - inner) * scale;
            }
        }
        gemm(
            n,
            m,
            dk,
            1.0,
            MatRef::new(ds.data(), m, 1),
            MatRef::new(&k.data()[off..], d, 1),
            0.0,
            &mut dq.data_mut()[off..],
            d,
        );
        gemm(
            m,
            n,
            dk,
            1.0,
            MatRef::new(ds.data(), m, 1).t(),
            MatRef::new(&q.data()[off..], d, 1),
            0.0,
            &mut dkt.data_mut()[off..],
            d,
        );
    }
    (dq, dkt, dv)
}

/// Multi-head attention with learned projections. With no context it is self-attention;
/// with a context, queries come from `x` and keys/values from the context.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub cfg: AttentionConfig,
    pub d_ctx: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

pub struct AttentionCache {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    probs: Vec<Tensor>,
    heads_out: Tensor,
}

impl AttentionCache {
    pub fn probs(&self) -> &[Tensor] {
        &self.probs
    }
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        cfg: AttentionConfig,
        d_ctx: usize,
        rng: &mut R,
    ) -> Self {
        let d = cfg.d_model;
        Self {
            cfg,
            d_ctx,
            q: Linear::new(store, &format!("{name}.q"), d, d, false, rng),
            k: Linear::new(store, &format!("{name}.k"), d_ctx, d, false, rng),
            v: Linear::new(store, &format!("{name}.v"), d_ctx, d, false, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, true, rng),
        }
    }

    pub fn forward(
        &self,
        ps: &ParameterStore,
        x: &Tensor,
        ctx: Option<&Tensor>,
    ) -> Result<(Tensor, AttentionCache)> {
        let src = ctx.unwrap_or(x);
        let q = self.q.forward(ps, x)?;
        let k = self.k.forward(ps, src)?;
        let v = self.v.forward(ps, src)?;
        let (heads_out, probs) = scaled_dot_product_attention(&q, &k, &v, &self.cfg)?;
        let y = self.o.forward(ps, &heads_out)?;
        Ok((y, AttentionCache { q, k, v, probs, heads_out }))
    }

    /// Returns the gradient for `x` and, for cross-attention, for the context.
    pub fn backward(
        &self,
        ps: &ParameterStore,
        x: &Tensor,
        ctx: Option<&Tensor>,
        cache: &AttentionCache,
        dy: &Tensor,
        grads: &mut Grads,
    ) -> (Tensor, Option<Tensor>) {
        let dheads = self.o.backward(ps, &cache.heads_out, dy, grads);
        let (dq, dk, dv) = scaled_dot_product_attention_backward(
            &cache.q,
            &cache.k,
            &cache.v,
            &cache.probs,
            &self.cfg,
            &dheads,
        );
        let src = ctx.unwrap_or(x);
        let mut dx = self.q.backward(ps, x, &dq, grads);
        let mut dsrc = self.k.backward(ps, src, &dk, grads);
        dsrc.add_assign(&self.v.backward(ps, src, &dv, grads));
        match ctx {
            Some(_) => (dx, Some(dsrc)),
            None => {
                dx.add_assign(&dsrc);
                (dx, None)
            }
        }
    }
}
