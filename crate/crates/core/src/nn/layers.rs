//! Layers with explicit forward and backward passes.
//!
//! Each layer's `backward` takes the same input its `forward` saw plus the upstream
//! gradient, accumulates parameter gradients into a [`Grads`] and returns the gradient
//! with respect to the input.

use rand::Rng;

use super::tensor::{gemm, MatRef};
use super::{Grads, ParamId, ParameterStore, Tensor};
use crate::{Error, Result};

/// `y = x W + b` over the rows of `x`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let w = store.add_uniform(format!("{name}.w"), &[d_in, d_out], bound, rng);
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[d_out])));
        Self { w, b, d_in, d_out }
    }

    pub fn forward(&self, ps: &ParameterStore, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.d_in {
            return Err(Error::Shape(format!("linear expects [n, {}], got {:?}", self.d_in, x.shape())));
        }
        let n = x.rows();
        let mut y = Tensor::zeros(&[n, self.d_out]);
        if let Some(b) = self.b {
            for row in y.data_mut().chunks_mut(self.d_out) {
                row.copy_from_slice(ps.get(b).data());
            }
        }
        gemm(
            n,
            self.d_in,
            self.d_out,
            1.0,
            MatRef::new(x.data(), self.d_in, 1),
            MatRef::new(ps.get(self.w).data(), self.d_out, 1),
            if self.b.is_some() { 1.0 } else { 0.0 },
            y.data_mut(),
            self.d_out,
        );
        Ok(y)
    }

    pub fn backward(&self, ps: &ParameterStore, x: &Tensor, dy: &Tensor, grads: &mut Grads) -> Tensor {
        let n = x.rows();
        gemm(
            self.d_in,
            n,
            self.d_out,
            1.0,
            MatRef::new(x.data(), self.d_in, 1).t(),
            MatRef::new(dy.data(), self.d_out, 1),
            1.0,
            grads.get_mut(self.w).data_mut(),
            self.d_out,
        );
        if let Some(b) = self.b {
            let sums = dy.column_sums();
            for (g, s) in grads.get_mut(b).data_mut().iter_mut().zip(sums) {
                *g += s;
            }
        }
        let mut dx = Tensor::zeros(&[n, self.d_in]);
        gemm(
            n,
            self.d_out,
            self.d_in,
            1.0,
            MatRef::new(dy.data(), self.d_out, 1),
            MatRef::new(ps.get(self.w).data(), self.d_out, 1).t(),
            0.0,
            dx.data_mut(),
            self.d_in,
        );
        dx
    }
}

/// 1D convolution (cross-correlation) over a `[length, channels]` sequence with
/// zero "same" padding of `kernel / 2` on each side.
///
/// Output position `o` covers inputs `o * stride + j - kernel / 2` for `j < kernel`,
/// so stride 4 maps length 64 to 16.
#[derive(Debug, Clone)]
pub struct Conv1d {
    /// Weights laid out `[kernel * c_in, c_out]`, tap-major.
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1 && stride >= 1);
        let bound = 1.0 / ((kernel * c_in) as f64).sqrt();
        let w = store.add_uniform(format!("{name}.w"), &[kernel * c_in, c_out], bound, rng);
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[c_out]));
        Self { w, b, c_in, c_out, kernel, stride }
    }

    pub fn output_len(&self, len: usize) -> usize {
        let pad = self.kernel / 2;
        (len + 2 * pad - self.kernel) / self.stride + 1
    }

    fn im2col(&self, x: &Tensor) -> Tensor {
        let len = x.rows();
        let out_len = self.output_len(len);
        let pad = self.kernel / 2;
        let width = self.kernel * self.c_in;
        let mut cols = Tensor::zeros(&[out_len, width]);
        for o in 0..out_len {
            let dst = cols.row_mut(o);
            for j in 0..self.kernel {
                let pos = (o * self.stride + j) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < len {
                    dst[j * self.c_in..(j + 1) * self.c_in].copy_from_slice(x.row(pos as usize));
                }
            }
        }
        cols
    }

    pub fn forward(&self, ps: &ParameterStore, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.c_in || x.rows() == 0 {
            return Err(Error::Shape(format!("conv1d expects [len, {}], got {:?}", self.c_in, x.shape())));
        }
        let cols = self.im2col(x);
        let out_len = cols.rows();
        let mut y = Tensor::zeros(&[out_len, self.c_out]);
        for row in y.data_mut().chunks_mut(self.c_out) {
            row.copy_from_slice(ps.get(self.b).data());
        }
        let width = self.kernel * self.c_in;
        gemm(
            out_len,
            width,
            self.c_out,
            1.0,
            MatRef::new(cols.data(), width, 1),
            MatRef::new(ps.get(self.w).data(), self.c_out, 1),
            1.0,
            y.data_mut(),
            self.c_out,
        );
        Ok(y)
    }

    pub fn backward(&self, ps: &ParameterStore, x: &Tensor, dy: &Tensor, grads: &mut Grads) -> Tensor {
        let cols = self.im2col(x);
        let out_len = cols.rows();
        let width = self.kernel * self.c_in;
        gemm(
            width,
            out_len,
            self.c_out,
            1.0,
            MatRef::new(cols.data(), width, 1).t(),
            MatRef::new(dy.data(), self.c_out, 1),
            1.0,
            grads.get_mut(self.w).data_mut(),
            self.c_out,
        );
        for (g, s) in grads.get_mut(self.b).data_mut().iter_mut().zip(dy.column_sums()) {
            *g += s;
        }
        let mut dcols = Tensor::zeros(&[out_len, width]);
        gemm(
            out_len,
            self.c_out,
            width,
            1.0,
            MatRef::new(dy.data(), self.c_out, 1),
            MatRef::new(ps.get(self.w).data(), self.c_out, 1).t(),
            0.0,
            dcols.data_mut(),
            width,
        );
        let len = x.rows();
        let pad = self.kernel / 2;
        let mut dx = Tensor::zeros(&[len, self.c_in]);
        for o in 0..out_len {
            let src = dcols.row(o);
            for j in 0..self.kernel {
                let pos = (o * self.stride + j) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < len {
                    let dst = dx.row_mut(pos as usize);
                    for (d, s) in dst.iter_mut().zip(&src[j * self.c_in..(j + 1) * self.c_in]) {
                        *d += s;
                    }
                }
            }
        }
        dx
    }
}

/// Layer normalization over the last dimension, with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParameterStore, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[dim]));
        Self { gamma, beta, dim, eps: 1e-5 }
    }

    fn stats(&self, row: &[f64]) -> (f64, f64) {
        let n = row.len() as f64;
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, 1.0 / (var + self.eps).sqrt())
    }

    pub fn forward(&self, ps: &ParameterStore, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.dim {
            return Err(Error::Shape(format!("layernorm expects width {}, got {:?}", self.dim, x.shape())));
        }
        let (g, b) = (ps.get(self.gamma).data(), ps.get(self.beta).data());
        let mut y = x.clone();
        for i in 0..x.rows() {
            let (mean, inv) = self.stats(x.row(i));
            for (j, v) in y.row_mut(i).iter_mut().enumerate() {
                *v = (*v - mean) * inv * g[j] + b[j];
            }
        }
        Ok(y)
    }

    pub fn backward(&self, ps: &ParameterStore, x: &Tensor, dy: &Tensor, grads: &mut Grads) -> Tensor {
        let g = ps.get(self.gamma).data().to_vec();
        let n = self.dim as f64;
        let mut dx = Tensor::zeros(x.shape());
        let mut dgamma = vec![0.0; self.dim];
        let mut dbeta = vec![0.0; self.dim];
        for i in 0..x.rows() {
            let row = x.row(i);
            let (mean, inv) = self.stats(row);
            let dyr = dy.row(i);
            let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
            let dxhat: Vec<f64> = dyr.iter().zip(&g).map(|(d, g)| d * g).collect();
            let mean_d = dxhat.iter().sum::<f64>() / n;
            let mean_dx = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
            for (j, d) in dx.row_mut(i).iter_mut().enumerate() {
                *d = inv * (dxhat[j] - mean_d - xhat[j] * mean_dx);
                dgamma[j] += dyr[j] * xhat[j];
                dbeta[j] += dyr[j];
            }
        }
        for (a, b) in grads.get_mut(self.gamma).data_mut().iter_mut().zip(dgamma) {
            *a += b;
        }
        for (a, b) in grads.get_mut(self.beta).data_mut().iter_mut().zip(dbeta) {
            *a += b;
        }
        dx
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x * sigmoid(x)`.
pub fn silu(x: &Tensor) -> Tensor {
    x.map(|v| v * sigmoid(v))
}

pub fn silu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    x.zip_map(dy, |v, d| {
        let s = sigmoid(v);
        d * (s + v * s * (1.0 - s))
    })
}

/// Nearest-neighbor upsampling along rows.
pub fn upsample_rows(x: &Tensor, factor: usize) -> Tensor {
    let c = x.cols();
    let mut data = Vec::with_capacity(x.len() * factor);
    for i in 0..x.rows() {
        for _ in 0..factor {
            data.extend_from_slice(x.row(i));
        }
    }
    Tensor::from_vec(&[x.rows() * factor, c], data).expect("consistent shape")
}

pub fn upsample_rows_backward(dy: &Tensor, factor: usize) -> Tensor {
    let c = dy.cols();
    let rows = dy.rows() / factor;
    let mut dx = Tensor::zeros(&[rows, c]);
    for i in 0..dy.rows() {
        let src = dy.row(i);
        for (d, s) in dx.row_mut(i / factor).iter_mut().zip(src) {
            *d += s;
        }
    }
    dx
}

/// Position-wise feed-forward block `Linear -> SiLU -> Linear`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct FeedForwardCache {
    h: Tensor,
    a: Tensor,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParameterStore,
        name: &str,
        dim: usize,
        mult: f64,
        rng: &mut R,
    ) -> Self {
        let hidden = ((dim as f64) * mult).round() as usize;
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, hidden, true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, dim, true, rng),
        }
    }

    pub fn forward(&self, ps: &ParameterStore, x: &Tensor) -> Result<(Tensor, FeedForwardCache)> {
        let h = self.fc1.forward(ps, x)?;
        let a = silu(&h);
        let y = self.fc2.forward(ps, &a)?;
        Ok((y, FeedForwardCache { h, a }))
    }

    pub fn backward(
        &self,
        ps: &ParameterStore,
        x: &Tensor,
        cache: &FeedForwardCache,
        dy: &Tensor,
        grads: &mut Grads,
    ) -> Tensor {
        let da = self.fc2.backward(ps, &cache.a, dy, grads);
        let dh = silu_backward(&cache.h, &da);
        self.fc1.backward(ps, x, &dh, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_linear() {
        let mut ps = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new(&mut ps, "l", 3, 3, true, &mut rng);
        let eye = ps.get_mut(lin.w);
        eye.data_mut().fill(0.0);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let x = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap();
        assert_eq!(lin.forward(&ps, &x).unwrap(), x);
        assert!(lin.forward(&ps, &Tensor::zeros(&[2, 4])).is_err());
    }

    #[test]
    fn scalar_linear_gradient() {
        let mut ps = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new(&mut ps, "l", 1, 1, true, &mut rng);
        ps.get_mut(lin.w).data_mut()[0] = 2.0;
        let x = Tensor::from_vec(&[1, 1], vec![3.5]).unwrap();
        let mut g = ps.zero_grads();
        let dx = lin.backward(&ps, &x, &Tensor::full(&[1, 1], 1.0), &mut g);
        assert_eq!(g.get(lin.w).data(), &[3.5]);
        assert_eq!(g.get(lin.b.unwrap()).data(), &[1.0]);
        assert_eq!(dx.data(), &[2.0]);
    }

    fn conv_with_kernel(k: [f64; 3]) -> (ParameterStore, Conv1d) {
        let mut ps = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv1d::new(&mut ps, "c", 1, 1, 3, 1, &mut rng);
        ps.get_mut(conv.w).data_mut().copy_from_slice(&k);
        (ps, conv)
    }

    #[test]
    fn conv_identity_kernel() {
        let (ps, conv) = conv_with_kernel([0.0, 1.0, 0.0]);
        let x = Tensor::from_vec(&[5, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(conv.forward(&ps, &x).unwrap(), x);
    }

    #[test]
    fn conv_box_kernel_on_constant() {
        let (ps, conv) = conv_with_kernel([1.0, 1.0, 1.0]);
        let c = 2.5;
        let y = conv.forward(&ps, &Tensor::full(&[6, 1], c)).unwrap();
        assert_eq!(y.data(), &[2.0 * c, 3.0 * c, 3.0 * c, 3.0 * c, 3.0 * c, 2.0 * c]);
    }

    #[test]
    fn strided_conv_lengths() {
        let mut ps = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv1d::new(&mut ps, "c", 2, 3, 3, 4, &mut rng);
        assert_eq!(conv.output_len(64), 16);
        assert_eq!(conv.output_len(16), 4);
        assert_eq!(conv.forward(&ps, &Tensor::zeros(&[64, 2])).unwrap().shape(), &[16, 3]);
    }

    #[test]
    fn layernorm_normalizes() {
        let mut ps = ParameterStore::new();
        let ln = LayerNorm::new(&mut ps, "ln", 4);
        let x = Tensor::from_vec(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = ln.forward(&ps, &x).unwrap();
        assert!(y.sum().abs() < 1e-12);
        assert!((y.sum_squares() / 4.0 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn upsample_round_trip_sums() {
        let x = Tensor::from_vec(&[2, 1], vec![1.0, 2.0]).unwrap();
        let up = upsample_rows(&x, 4);
        assert_eq!(up.data(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        assert_eq!(upsample_rows_backward(&up, 4).data(), &[4.0, 8.0]);
    }
}
