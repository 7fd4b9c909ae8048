//! User-independent privacy attribute prediction: a linear multi-label scorer
//! trained on precomputed image features.
//!
//! Both training losses share the same inference path: each attribute's
//! posterior is the logistic sigmoid of its linear score.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError, CheckpointHeader, TensorSpec};
use crate::dataset::TrainingSet;
use crate::metrics::{self, MetricsError};
use crate::numopt::{sgd_train, sigmoid, LinearModel, MultiLabelObjective, NumoptError, SgdConfig};

pub use crate::numopt::LossKind;

pub const MODEL_KIND: &str = "attribute_predictor";

#[derive(Debug, Error)]
pub enum AttributeModelError {
    #[error(transparent)]
    Numopt(#[from] NumoptError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{0} set is empty")]
    EmptyDataset(&'static str),
    #[error("inconsistent training data: {0}")]
    Inconsistent(String),
    #[error("decision threshold must lie in (0, 1), got {0}")]
    BadThreshold(f64),
}

/// Per-attribute posteriors for one image, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeScores {
    pub image_id: String,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributePredictor {
    pub linear: LinearModel,
    pub loss_kind: LossKind,
    pub taxonomy_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeTrainingReport {
    pub loss_kind: LossKind,
    pub config: SgdConfig,
    /// Full regularized training loss after each epoch.
    pub train_loss: Vec<f64>,
    /// Validation C-MAP, index 0 being the initialization.
    pub val_cmap: Vec<f64>,
    /// Epoch whose parameters were kept (0 = initialization).
    pub best_epoch: usize,
    pub best_val_cmap: f64,
}

impl AttributePredictor {
    pub fn num_attributes(&self) -> usize {
        self.linear.out_dim
    }

    pub fn input_dim(&self) -> usize {
        self.linear.in_dim
    }

    /// Posteriors `σ(W·x + b)`.
    pub fn posteriors(&self, x: &[f64]) -> Result<Vec<f64>, NumoptError> {
        Ok(self.linear.forward(x)?.into_iter().map(sigmoid).collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let (a, d) = (self.linear.out_dim, self.linear.in_dim);
        Checkpoint {
            header: CheckpointHeader {
                model_kind: MODEL_KIND.to_string(),
                taxonomy_version: self.taxonomy_version.clone(),
                loss: Some(self.loss_kind.as_str().to_string()),
                config: None,
                profile_ids: None,
                tensors: vec![TensorSpec::new("weights", &[a, d]), TensorSpec::new("bias", &[a])],
            },
            tensors: vec![self.linear.weights.clone(), self.linear.bias.clone()],
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, AttributeModelError> {
        ckpt.expect_kind(MODEL_KIND)?;
        let shape = ckpt.shape_of("weights")?;
        let [a, d] = shape else {
            return Err(CheckpointError::Format("weights must be 2-D".into()).into());
        };
        let (a, d) = (*a, *d);
        let loss_kind = ckpt
            .header
            .loss
            .as_deref()
            .and_then(LossKind::parse)
            .ok_or_else(|| CheckpointError::Format("missing or unknown loss kind".into()))?;
        Ok(Self {
            linear: LinearModel {
                out_dim: a,
                in_dim: d,
                weights: ckpt.tensor("weights", &[a, d])?.to_vec(),
                bias: ckpt.tensor("bias", &[a])?.to_vec(),
            },
            loss_kind,
            taxonomy_version: ckpt.header.taxonomy_version.clone(),
        })
    }
}

fn check_set(set: &TrainingSet, name: &'static str) -> Result<(usize, usize), AttributeModelError> {
    let (Some(d), Some(a)) = (set.input_dim(), set.num_attributes()) else {
        return Err(AttributeModelError::EmptyDataset(name));
    };
    if set.labels.len() != set.features.len() {
        return Err(AttributeModelError::Inconsistent(format!(
            "{name}: {} feature rows, {} label rows",
            set.features.len(),
            set.labels.len()
        )));
    }
    if set.features.iter().any(|x| x.len() != d) || set.labels.iter().any(|l| l.len() != a) {
        return Err(AttributeModelError::Inconsistent(format!("{name}: ragged rows")));
    }
    Ok((d, a))
}

/// Validation C-MAP of a linear scorer. Ranking metrics are invariant to the
/// sigmoid link, so raw scores are used.
fn val_cmap(model: &LinearModel, val: &TrainingSet) -> Result<f64, AttributeModelError> {
    let scores: Vec<Vec<f64>> = val.features.iter().map(|x| model.forward(x)).collect::<Result<_, _>>()?;
    Ok(metrics::c_map(&scores, &val.labels)?.c_map.unwrap_or(0.0))
}

/// Train a linear multi-label predictor with seeded SGD and keep the epoch
/// (including the initialization) with the best validation C-MAP; ties go to
/// the earliest epoch.
pub fn train_attribute_model(
    train: &TrainingSet,
    val: &TrainingSet,
    config: &SgdConfig,
    loss_kind: LossKind,
    taxonomy_version: &str,
) -> Result<(AttributePredictor, AttributeTrainingReport), AttributeModelError> {
    let (d, a) = check_set(train, "training")?;
    let (dv, av) = check_set(val, "validation")?;
    if (dv, av) != (d, a) {
        return Err(AttributeModelError::Inconsistent(format!(
            "training is {d}-d/{a} attributes, validation is {dv}-d/{av} attributes"
        )));
    }
    config.validate()?;

    // Initialization draws from a stream separate from the shuffling stream.
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_1a7e_0000_0001);
    let mut model = LinearModel::glorot(a, d, &mut init_rng);
    let objective = MultiLabelObjective::new(&train.features, &train.labels, loss_kind, config.gamma)?;

    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_cmap = val_cmap(&model, val)?;
    let mut cmaps = vec![best_cmap];
    let mut eval_error = None;
    let train_loss = sgd_train(&mut model, &objective, config, |epoch, m, _| {
        match val_cmap(m, val) {
            Ok(c) => {
                cmaps.push(c);
                if c > best_cmap {
                    best_cmap = c;
                    best_epoch = epoch;
                    best = m.clone();
                }
            }
            Err(e) => {
                eval_error.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = eval_error {
        return Err(e);
    }
    let predictor = AttributePredictor {
        linear: best,
        loss_kind,
        taxonomy_version: taxonomy_version.to_string(),
    };
    let report = AttributeTrainingReport {
        loss_kind,
        config: config.clone(),
        train_loss,
        val_cmap: cmaps,
        best_epoch,
        best_val_cmap: best_cmap,
    };
    Ok((predictor, report))
}

/// Posteriors for one image.
pub fn predict_attributes(
    predictor: &AttributePredictor,
    image_id: &str,
    features: &[f64],
) -> Result<AttributeScores, AttributeModelError> {
    Ok(AttributeScores {
        image_id: image_id.to_string(),
        y: predictor.posteriors(features)?,
    })
}

/// k-hot vector with attribute `a` set iff `y_a >= threshold`.
pub fn binarize(scores: &AttributeScores, threshold: f64) -> Result<Vec<bool>, AttributeModelError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(AttributeModelError::BadThreshold(threshold));
    }
    Ok(scores.y.iter().map(|&y| y >= threshold).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::TeacherWorld;

    #[test]
    fn zero_parameters_give_one_half() {
        let p = AttributePredictor {
            linear: LinearModel::zeros(5, 3),
            loss_kind: LossKind::SigmoidCe,
            taxonomy_version: "t".into(),
        };
        let s = predict_attributes(&p, "x", &[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(s.y, vec![0.5; 5]);
        assert!(matches!(
            predict_attributes(&p, "x", &[1.0]),
            Err(AttributeModelError::Numopt(NumoptError::DimensionMismatch { .. }))
        ));
    }

    #[test]
    fn binarize_rules() {
        let s = AttributeScores {
            image_id: "x".into(),
            y: vec![0.9, 0.1, 0.5],
        };
        assert_eq!(binarize(&s, 0.5).unwrap(), vec![true, false, true]);
        assert!(matches!(binarize(&s, 1.0), Err(AttributeModelError::BadThreshold(_))));
        assert!(matches!(binarize(&s, 0.0), Err(AttributeModelError::BadThreshold(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let world = TeacherWorld::generate(6, 4, 10, 0, 1);
        let cfg = SgdConfig {
            epochs: 2,
            batch_size: 4,
            ..SgdConfig::default()
        };
        let (p, _) = train_attribute_model(&world.train, &world.train, &cfg, LossKind::SmoothedHinge, "v1").unwrap();
        let mut buf = Vec::new();
        p.to_checkpoint().write(&mut buf).unwrap();
        let back = AttributePredictor::from_checkpoint(&Checkpoint::read(buf.as_slice()).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let world = TeacherWorld::generate(6, 4, 20, 10, 2);
        let cfg = SgdConfig {
            epochs: 0,
            seed: 9,
            ..SgdConfig::default()
        };
        let (p, report) = train_attribute_model(&world.train, &world.val, &cfg, LossKind::SigmoidCe, "v").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9 ^ 0x5eed_1a7e_0000_0001);
        assert_eq!(p.linear, LinearModel::glorot(4, 6, &mut rng));
        assert_eq!(report.best_epoch, 0);
        assert!(report.train_loss.is_empty());
    }

    #[test]
    fn empty_sets_are_rejected() {
        let world = TeacherWorld::generate(6, 4, 20, 0, 2);
        let cfg = SgdConfig::default();
        assert!(matches!(
            train_attribute_model(&world.train, &TrainingSet::default(), &cfg, LossKind::SigmoidCe, "v"),
            Err(AttributeModelError::EmptyDataset("validation"))
        ));
        assert!(matches!(
            train_attribute_model(&TrainingSet::default(), &world.train, &cfg, LossKind::SigmoidCe, "v"),
            Err(AttributeModelError::EmptyDataset("training"))
        ));
    }
}
