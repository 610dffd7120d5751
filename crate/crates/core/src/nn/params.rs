use rand::Rng;

use super::Tensor;
use crate::{Error, Result};

/// Handle to a tensor in a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Named trainable tensors plus Adam state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    params: Vec<Param>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        let n = value.len();
        self.params.push(Param { name, value, m: vec![0.0; n], v: vec![0.0; n] });
        ParamId(self.params.len() - 1)
    }

    /// Adds a tensor initialised uniformly in `[-bound, bound]`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, Tensor::from_vec(shape, data).expect("shape matches data"))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn first_moment(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].m
    }

    pub fn second_moment(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].v
    }

    /// Zero gradients shaped like every parameter.
    pub fn zero_grads(&self) -> Grads {
        Grads { tensors: self.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect() }
    }

    /// Rounds every parameter to single precision, the precision checkpoints store.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            for x in p.value.data_mut() {
                *x = *x as f32 as f64;
            }
        }
    }

    /// Replaces parameter values by name; every stored parameter must be provided.
    pub fn load_values(&mut self, values: &[(String, Tensor)]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameter blobs for a model with {}",
                values.len(),
                self.params.len()
            )));
        }
        for p in &mut self.params {
            let (_, t) = values
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}

/// Gradient buffers aligned with a [`ParameterStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    tensors: Vec<Tensor>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.scale_assign(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
    }

    /// Flattened copy of all gradients in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }
}

/// Adam hyperparameters. The learning rate defaults to 2e-4.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(store: &mut ParameterStore, grads: &Grads, cfg: &AdamConfig) -> Result<()> {
    if grads.tensors.len() != store.params.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameters",
            grads.tensors.len(),
            store.params.len()
        )));
    }
    for (p, g) in store.params.iter().zip(&grads.tensors) {
        if p.value.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient {:?} for parameter {} of shape {:?}",
                g.shape(),
                p.name,
                p.value.shape()
            )));
        }
        g.check_finite(&format!("gradient of {}", p.name))?;
    }
    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (p, g) in store.params.iter_mut().zip(&grads.tensors) {
        let Param { value, m, v, .. } = p;
        for (((w, m), v), &g) in value.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
