use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::model::ModelParams;
use crate::error::{Error, Result};
use crate::vector::UpdateVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub shuffle_seed: u64,
}

impl Default for LocalTrainConfig {
    fn default() -> Self {
        LocalTrainConfig {
            epochs: 5,
            batch_size: 128,
            learning_rate: 0.05,
            shuffle_seed: 0,
        }
    }
}

impl LocalTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Runs `cfg.epochs` of mini-batch SGD from `w` and returns `w_after - w_before`.
///
/// Each epoch visits the samples in a fresh seeded permutation. When one batch
/// covers the whole dataset the natural order is kept, so full-batch training
/// is plain gradient descent.
pub fn local_train(w: &ModelParams, data: &Dataset, cfg: &LocalTrainConfig) -> Result<UpdateVector> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("local_train"));
    }
    let n = data.len();
    let mut model = w.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..n).collect();
    let full_batch = cfg.batch_size >= n;

    for _ in 0..cfg.epochs {
        if full_batch {
            let g = model.gradient(data)?;
            model.weights_mut().axpy(-cfg.learning_rate, &g)?;
        } else {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let batch = data.subset(chunk)?;
                let g = model.gradient(&batch)?;
                model.weights_mut().axpy(-cfg.learning_rate, &g)?;
            }
        }
        if !model.weights().is_finite() {
            return Err(Error::NonFinite("local_train weights"));
        }
    }
    model.weights().try_sub(w.weights())
}
