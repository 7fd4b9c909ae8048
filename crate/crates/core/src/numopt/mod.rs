//! Numerical kernel: losses, affine/MLP models with hand-derived gradients,
//! and seeded mini-batch SGD.
//!
//! Models expose their parameters as ordered blocks through [`Parameters`];
//! gradients use the same type as the model so that an update is a blockwise
//! `θ ← θ - η·g`. Training data and loss are bundled in an [`Objective`].

mod loss;
mod network;
mod objective;

pub use loss::{euclidean_loss, sigmoid, sigmoid_ce_loss, smoothed_hinge, smoothed_multilabel_hinge, softplus};
pub use network::{mlp_backward, mlp_forward, Affine, LinearModel, MlpActivations, MlpRiskHead, HIDDEN_WIDTH};
pub use objective::{LossKind, MultiLabelObjective, RegressionObjective};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NumoptError {
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("smoothing gamma must be positive, got {0}")]
    NonPositiveGamma(f64),
    #[error("invalid SGD configuration: {0}")]
    BadConfig(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("loss diverged (non-finite) in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
}

pub struct ParamBlock<'a> {
    pub values: &'a [f64],
    /// Whether the L2 penalty applies (weights yes, biases no).
    pub regularized: bool,
}

pub struct ParamBlockMut<'a> {
    pub values: &'a mut [f64],
    pub regularized: bool,
}

/// A model whose parameters can be visited as flat blocks in a fixed order.
pub trait Parameters: Clone {
    /// Same shapes, all zeros. Used as a gradient accumulator.
    fn zeros_like(&self) -> Self;
    fn blocks(&self) -> Vec<ParamBlock<'_>>;
    fn blocks_mut(&mut self) -> Vec<ParamBlockMut<'_>>;

    fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.values.len()).sum()
    }

    /// `Σ w²` over regularized blocks.
    fn l2_norm_sq(&self) -> f64 {
        self.blocks()
            .iter()
            .filter(|b| b.regularized)
            .flat_map(|b| b.values.iter())
            .map(|w| w * w)
            .sum()
    }

    /// All parameters concatenated in block order.
    fn flatten(&self) -> Vec<f64> {
        self.blocks()
            .iter()
            .flat_map(|b| b.values.iter().copied())
            .collect()
    }

    /// Overwrite parameters from a flat vector produced by [`Parameters::flatten`].
    fn assign_flat(&mut self, flat: &[f64]) -> Result<(), NumoptError> {
        let expected = self.num_params();
        if flat.len() != expected {
            return Err(NumoptError::LengthMismatch {
                expected,
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for b in self.blocks_mut() {
            let n = b.values.len();
            b.values.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// Per-example loss over a fixed training set.
pub trait Objective<M: Parameters> {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Loss of example `index`.
    fn loss(&self, model: &M, index: usize) -> f64;

    /// Add the gradient of example `index` to `grads` and return its loss.
    fn accumulate(&self, model: &M, index: usize, grads: &mut M) -> f64;

    /// Mean loss over all examples.
    fn mean_loss(&self, model: &M) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (0..self.len()).map(|i| self.loss(model, i)).sum::<f64>() / self.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2_weight: f64,
    pub seed: u64,
    /// Smoothing width of the hinge loss.
    pub gamma: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 32,
            epochs: 50,
            l2_weight: 0.0,
            seed: 0,
            gamma: 1.0,
        }
    }
}

impl SgdConfig {
    /// A zero learning rate or zero epochs is accepted and leaves the model untouched.
    pub fn validate(&self) -> Result<(), NumoptError> {
        let bad = |m: &str| Err(NumoptError::BadConfig(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.l2_weight.is_finite() && self.l2_weight >= 0.0) {
            return bad("l2_weight must be finite and non-negative");
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(NumoptError::NonPositiveGamma(self.gamma));
        }
        Ok(())
    }
}

/// Full objective `mean loss + λ‖W‖²`.
pub fn regularized_loss<M: Parameters, O: Objective<M>>(model: &M, objective: &O, l2_weight: f64) -> f64 {
    let penalty = if l2_weight > 0.0 {
        l2_weight * model.l2_norm_sq()
    } else {
        0.0
    };
    objective.mean_loss(model) + penalty
}

/// Mini-batch SGD.
///
/// Each epoch visits the examples in an order drawn from a ChaCha8 stream
/// seeded once with `config.seed`; every batch applies
/// `θ ← θ - η·(mean batch gradient + 2λW)`. After each epoch the full
/// regularized loss is recorded and `after_epoch(epoch, model, loss)` is
/// called (epochs are 1-based). Returns the per-epoch loss trace.
pub fn sgd_train<M, O, F>(
    model: &mut M,
    objective: &O,
    config: &SgdConfig,
    mut after_epoch: F,
) -> Result<Vec<f64>, NumoptError>
where
    M: Parameters,
    O: Objective<M>,
    F: FnMut(usize, &M, f64),
{
    config.validate()?;
    if objective.is_empty() {
        return Err(NumoptError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..objective.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut grads = model.zeros_like();
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += objective.accumulate(model, i, &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(NumoptError::DivergedLoss { epoch });
            }
            let scale = 1.0 / batch.len() as f64;
            let lr = config.learning_rate;
            let l2 = config.l2_weight;
            for (p, g) in model.blocks_mut().into_iter().zip(grads.blocks()) {
                let decay = if p.regularized { 2.0 * l2 } else { 0.0 };
                for (w, &gw) in p.values.iter_mut().zip(g.values) {
                    *w -= lr * (gw * scale + decay * *w);
                }
            }
        }
        let loss = regularized_loss(model, objective, config.l2_weight);
        if !loss.is_finite() {
            return Err(NumoptError::DivergedLoss { epoch });
        }
        trace.push(loss);
        after_epoch(epoch, model, loss);
    }
    Ok(trace)
}
