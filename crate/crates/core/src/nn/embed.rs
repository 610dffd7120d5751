//! Sinusoidal (Fourier) embeddings of scalars.

use super::Tensor;
use crate::{Error, Result};

const BASE: f64 = 10_000.0;

/// Frequency of the `k`-th sin/cos pair for an embedding of width `dim`.
pub fn fourier_frequency(k: usize, dim: usize) -> f64 {
    BASE.powf(-(2.0 * k as f64) / dim as f64)
}

/// Embeds each value as interleaved `[sin(v f_0), cos(v f_0), sin(v f_1), ...]` with
/// frequencies spaced geometrically from 1 down to about `1/10000`.
///
/// Returns a `[values.len(), dim]` matrix.
pub fn fourier_embed(values: &[f64], dim: usize) -> Result<Tensor> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!("fourier embedding width must be even, got {dim}")));
    }
    let mut out = Tensor::zeros(&[values.len(), dim]);
    for (i, &v) in values.iter().enumerate() {
        let row = out.row_mut(i);
        for k in 0..dim / 2 {
            let a = v * fourier_frequency(k, dim);
            row[2 * k] = a.sin();
            row[2 * k + 1] = a.cos();
        }
    }
    Ok(out)
}

/// Derivative of [`fourier_embed`] with respect to each input value, same layout.
pub fn fourier_embed_derivative(values: &[f64], dim: usize) -> Result<Tensor> {
    let mut out = fourier_embed(values, dim)?;
    for (i, &v) in values.iter().enumerate() {
        let row = out.row_mut(i);
        for k in 0..dim / 2 {
            let f = fourier_frequency(k, dim);
            let a = v * f;
            row[2 * k] = f * a.cos();
            row[2 * k + 1] = -f * a.sin();
        }
    }
    Ok(out)
}

/// Fixed positional table for positions `0..len`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Result<Tensor> {
    let positions: Vec<f64> = (0..len).map(|i| i as f64).collect();
    fourier_embed(&positions, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input() {
        let e = fourier_embed(&[0.0], 8).unwrap();
        assert_eq!(e.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(fourier_embed(&[0.0], 7).is_err());
    }

    #[test]
    fn derivative_bounded_by_frequency() {
        let dim = 16;
        let xs: Vec<f64> = (0..200).map(|i| -50.0 + i as f64 * 0.5).collect();
        let d = fourier_embed_derivative(&xs, dim).unwrap();
        for i in 0..xs.len() {
            for (j, v) in d.row(i).iter().enumerate() {
                assert!(v.abs() <= fourier_frequency(j / 2, dim) + 1e-15);
            }
        }
        // matches central differences
        let h = 1e-6;
        let plus = fourier_embed(&[3.0 + h], dim).unwrap();
        let minus = fourier_embed(&[3.0 - h], dim).unwrap();
        let d3 = fourier_embed_derivative(&[3.0], dim).unwrap();
        for j in 0..dim {
            let fd = (plus.data()[j] - minus.data()[j]) / (2.0 * h);
            assert!((fd - d3.data()[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn timesteps_are_distinct() {
        let e = sinusoidal_positions(96, 64).unwrap();
        for i in 0..96 {
            for j in 0..i {
                let dist: f64 = e.row(i).iter().zip(e.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
                assert!(dist > 1e-6, "steps {i} and {j} collide");
            }
        }
    }
}
