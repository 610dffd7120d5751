//! Minibatch training loop and model-level evaluation shared by the CLI and tests.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Model;
use crate::dataset::NormalizationParams;
use crate::diffusion::TrainItem;
use crate::eval::{evaluate, EvalReport};
use crate::{Error, Result, NUM_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub seed: u64,
    /// Log the running loss every this many steps; 0 disables logging.
    pub log_every: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    /// Batch loss before each step's update.
    pub losses: Vec<f64>,
}

impl TrainLog {
    /// Mean of the first `window` losses.
    pub fn head_mean(&self, window: usize) -> f64 {
        mean(&self.losses[..window.min(self.losses.len())])
    }

    /// Mean of the last `window` losses.
    pub fn tail_mean(&self, window: usize) -> f64 {
        mean(&self.losses[self.losses.len().saturating_sub(window)..])
    }

    /// `1 - tail / head` over windows of `window` steps.
    pub fn reduction(&self, window: usize) -> f64 {
        1.0 - self.tail_mean(window) / self.head_mean(window)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Trains on `items` in reshuffled epochs with the model's configured batch size.
pub fn train(model: &mut Model, items: &[TrainItem], cfg: &TrainConfig) -> Result<TrainLog> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("no training items".into()));
    }
    let batch_size = model.config().batch_size().max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut log = TrainLog { losses: Vec::with_capacity(cfg.steps) };
    let mut batch = Vec::with_capacity(batch_size);
    for step in 0..cfg.steps {
        batch.clear();
        while batch.len() < batch_size {
            if order.is_empty() {
                order = (0..items.len()).collect();
                order.shuffle(&mut rng);
            }
            batch.push(items[order.pop().expect("refilled above")].clone());
        }
        let loss = model.train_step(&batch, &mut rng)?;
        log.losses.push(loss);
        if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
            log::info!("step {} loss {:.5}", step + 1, log.tail_mean(cfg.log_every));
        }
    }
    Ok(log)
}

/// Generates one graph per target with a seeded sampler and scores it.
pub fn evaluate_model(
    model: &Model,
    targets: &[[f64; NUM_FEATURES]],
    params: &NormalizationParams,
    seed: u64,
) -> Result<EvalReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    evaluate(targets, params, |c| model.generate(c, params, &mut rng).map(|d| d.sample.graph))
}
