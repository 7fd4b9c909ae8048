//! Concrete training objectives for the attribute scorer and the risk head.

use serde::{Deserialize, Serialize};

use super::loss::{euclidean_loss, sigmoid_ce_loss, smoothed_multilabel_hinge};
use super::network::{LinearModel, MlpRiskHead};
use super::{NumoptError, Objective};

/// Loss used to train the multi-label attribute scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SigmoidCe,
    SmoothedHinge,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::SigmoidCe => "sigmoid_ce",
            LossKind::SmoothedHinge => "smoothed_hinge",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sigmoid_ce" | "ce" => Some(LossKind::SigmoidCe),
            "smoothed_hinge" | "hinge" => Some(LossKind::SmoothedHinge),
            _ => None,
        }
    }

    pub fn eval(self, scores: &[f64], targets: &[bool], gamma: f64) -> Result<(f64, Vec<f64>), NumoptError> {
        match self {
            LossKind::SigmoidCe => sigmoid_ce_loss(scores, targets),
            LossKind::SmoothedHinge => smoothed_multilabel_hinge(scores, targets, gamma),
        }
    }
}

/// Multi-label loss of a linear scorer over `(features, k-hot labels)` pairs.
pub struct MultiLabelObjective<'a> {
    features: &'a [Vec<f64>],
    labels: &'a [Vec<bool>],
    loss: LossKind,
    gamma: f64,
}

impl<'a> MultiLabelObjective<'a> {
    pub fn new(
        features: &'a [Vec<f64>],
        labels: &'a [Vec<bool>],
        loss: LossKind,
        gamma: f64,
    ) -> Result<Self, NumoptError> {
        if features.len() != labels.len() {
            return Err(NumoptError::LengthMismatch {
                expected: features.len(),
                actual: labels.len(),
            });
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(NumoptError::NonPositiveGamma(gamma));
        }
        Ok(Self {
            features,
            labels,
            loss,
            gamma,
        })
    }

    fn eval(&self, model: &LinearModel, index: usize) -> (f64, Vec<f64>) {
        let scores = model.apply(&self.features[index]);
        self.loss
            .eval(&scores, &self.labels[index], self.gamma)
            .expect("shapes checked at construction")
    }
}

impl Objective<LinearModel> for MultiLabelObjective<'_> {
    fn len(&self) -> usize {
        self.features.len()
    }

    fn loss(&self, model: &LinearModel, index: usize) -> f64 {
        self.eval(model, index).0
    }

    fn accumulate(&self, model: &LinearModel, index: usize, grads: &mut LinearModel) -> f64 {
        let (loss, g) = self.eval(model, index);
        model.accumulate_param_grad(&self.features[index], &g, grads);
        loss
    }
}

/// Euclidean regression loss of the risk head against per-profile targets.
pub struct RegressionObjective<'a> {
    features: &'a [Vec<f64>],
    targets: &'a [Vec<f64>],
}

impl<'a> RegressionObjective<'a> {
    pub fn new(features: &'a [Vec<f64>], targets: &'a [Vec<f64>]) -> Result<Self, NumoptError> {
        if features.len() != targets.len() {
            return Err(NumoptError::LengthMismatch {
                expected: features.len(),
                actual: targets.len(),
            });
        }
        Ok(Self { features, targets })
    }
}

impl Objective<MlpRiskHead> for RegressionObjective<'_> {
    fn len(&self) -> usize {
        self.features.len()
    }

    fn loss(&self, model: &MlpRiskHead, index: usize) -> f64 {
        let out = model
            .activations(&self.features[index])
            .expect("feature dimension matches head")
            .output;
        euclidean_loss(&out, &self.targets[index])
            .expect("target length matches head")
            .0
    }

    fn accumulate(&self, model: &MlpRiskHead, index: usize, grads: &mut MlpRiskHead) -> f64 {
        let x = &self.features[index];
        let acts = model.activations(x).expect("feature dimension matches head");
        let (loss, g) = euclidean_loss(&acts.output, &self.targets[index]).expect("target length matches head");
        model.accumulate_backward(x, &acts, &g, grads);
        loss
    }
}
