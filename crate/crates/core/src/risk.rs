//! Personalized privacy risk.
//!
//! The risk of an image under a preference vector `u` is `max_a y_a·u_a`,
//! where `y` is either the k-hot ground-truth label vector or the attribute
//! posteriors (AP-PR). The learned alternative is an MLP head mapping
//! features straight to one risk value per profile.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribute_model::AttributeScores;
use crate::checkpoint::{Checkpoint, CheckpointError, CheckpointHeader, TensorSpec};
use crate::dataset::TrainingSet;
use crate::metrics::{self, MetricsError};
use crate::numopt::{
    mlp_forward, sgd_train, Affine, MlpRiskHead, NumoptError, RegressionObjective, SgdConfig, HIDDEN_WIDTH,
};
use crate::profiles::PrivacyProfile;
use crate::taxonomy::PreferenceScale;

pub const MODEL_KIND: &str = "risk_regressor";

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("attribute posterior {value} at index {index} is outside [0, 1]")]
    InvalidScore { index: usize, value: f64 },
    #[error("no attributes to score")]
    Empty,
    #[error("at least one profile is required")]
    NoProfiles,
    #[error("{0} set is empty")]
    EmptyDataset(&'static str),
    #[error("inconsistent training data: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Numopt(#[from] NumoptError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskScore {
    pub value: f64,
    /// Lowest attribute id attaining `value`.
    pub argmax_attribute: usize,
    /// `y_a·u_a` per attribute.
    pub contributions: Vec<f64>,
}

/// `max_a y_a·u_a` with its argmax (lowest id on ties) and all products.
pub fn risk_score(y: &[f64], u: &[f64]) -> Result<RiskScore, RiskError> {
    if y.len() != u.len() {
        return Err(RiskError::LengthMismatch {
            expected: u.len(),
            actual: y.len(),
        });
    }
    if y.is_empty() {
        return Err(RiskError::Empty);
    }
    let contributions: Vec<f64> = y.iter().zip(u).map(|(a, b)| a * b).collect();
    let mut argmax = 0;
    for (a, &c) in contributions.iter().enumerate().skip(1) {
        if c > contributions[argmax] {
            argmax = a;
        }
    }
    Ok(RiskScore {
        value: contributions[argmax],
        argmax_attribute: argmax,
        contributions,
    })
}

/// Risk from ground-truth labels.
pub fn ground_truth_risk(labels: &[bool], profile: &PrivacyProfile) -> Result<RiskScore, RiskError> {
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    risk_score(&y, &profile.u)
}

/// Risk from predicted attribute posteriors (AP-PR).
pub fn ap_pr_risk(scores: &AttributeScores, profile: &PrivacyProfile) -> Result<RiskScore, RiskError> {
    if let Some((index, &value)) = scores.y.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(RiskError::InvalidScore { index, value });
    }
    risk_score(&scores.y, &profile.u)
}

/// Ground-truth risk of every image under every profile (`images × profiles`).
pub fn risk_targets(labels: &[Vec<bool>], profiles: &[PrivacyProfile]) -> Result<Vec<Vec<f64>>, RiskError> {
    labels
        .iter()
        .map(|l| profiles.iter().map(|p| Ok(ground_truth_risk(l, p)?.value)).collect())
        .collect()
}

/// MLP head predicting one risk value per profile from image features.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskRegressor {
    pub head: MlpRiskHead,
    /// Profile id of each output, in output order.
    pub profile_ids: Vec<usize>,
    pub taxonomy_version: String,
}

impl RiskRegressor {
    pub fn to_checkpoint(&self, config: Option<&SgdConfig>) -> Checkpoint {
        let layers = [("layer1", &self.head.layer1), ("layer2", &self.head.layer2), ("output", &self.head.output)];
        let mut specs = Vec::new();
        let mut tensors = Vec::new();
        for (name, layer) in layers {
            specs.push(TensorSpec::new(&format!("{name}.weights"), &[layer.out_dim, layer.in_dim]));
            specs.push(TensorSpec::new(&format!("{name}.bias"), &[layer.out_dim]));
            tensors.push(layer.weights.clone());
            tensors.push(layer.bias.clone());
        }
        Checkpoint {
            header: CheckpointHeader {
                model_kind: MODEL_KIND.to_string(),
                taxonomy_version: self.taxonomy_version.clone(),
                loss: Some("euclidean".to_string()),
                config: config.cloned(),
                profile_ids: Some(self.profile_ids.clone()),
                tensors: specs,
            },
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, RiskError> {
        ckpt.expect_kind(MODEL_KIND)?;
        let layer = |name: &str| -> Result<Affine, CheckpointError> {
            let wname = format!("{name}.weights");
            let [out_dim, in_dim] = *ckpt.shape_of(&wname)? else {
                return Err(CheckpointError::Format(format!("`{wname}` must be 2-D")));
            };
            Ok(Affine {
                out_dim,
                in_dim,
                weights: ckpt.tensor(&wname, &[out_dim, in_dim])?.to_vec(),
                bias: ckpt.tensor(&format!("{name}.bias"), &[out_dim])?.to_vec(),
            })
        };
        let head = MlpRiskHead::from_layers(layer("layer1")?, layer("layer2")?, layer("output")?)?;
        let profile_ids = ckpt
            .header
            .profile_ids
            .clone()
            .ok_or_else(|| CheckpointError::Format("missing profile ids".into()))?;
        if profile_ids.len() != head.outputs() {
            return Err(CheckpointError::Format(format!(
                "{} profile ids for {} outputs",
                profile_ids.len(),
                head.outputs()
            ))
            .into());
        }
        Ok(Self {
            head,
            profile_ids,
            taxonomy_version: ckpt.header.taxonomy_version.clone(),
        })
    }

    /// Output position of a profile id.
    pub fn output_index(&self, profile_id: usize) -> Option<usize> {
        self.profile_ids.iter().position(|&p| p == profile_id)
    }
}

/// Per-profile risk, clipped to `[0, 5]`, in `profile_ids` order.
pub fn predict_risk(regressor: &RiskRegressor, features: &[f64]) -> Result<Vec<f64>, RiskError> {
    Ok(mlp_forward(&regressor.head, features)?
        .into_iter()
        .map(|v| v.clamp(0.0, PreferenceScale::MAX))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTrainingReport {
    pub config: SgdConfig,
    pub train_loss: Vec<f64>,
    /// Validation L1 of clipped predictions, index 0 being the initialization.
    pub val_l1: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_l1: f64,
}

fn check_set(set: &TrainingSet, name: &'static str, num_attributes: usize) -> Result<usize, RiskError> {
    let Some(d) = set.input_dim() else {
        return Err(RiskError::EmptyDataset(name));
    };
    if set.labels.len() != set.features.len() {
        return Err(RiskError::Inconsistent(format!(
            "{name}: {} feature rows, {} label rows",
            set.features.len(),
            set.labels.len()
        )));
    }
    if set.features.iter().any(|x| x.len() != d) || set.labels.iter().any(|l| l.len() != num_attributes) {
        return Err(RiskError::Inconsistent(format!("{name}: ragged rows")));
    }
    Ok(d)
}

fn mean_l1(head: &MlpRiskHead, features: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64, RiskError> {
    let pred: Vec<Vec<f64>> = features
        .iter()
        .map(|x| {
            Ok(mlp_forward(head, x)?
                .into_iter()
                .map(|v| v.clamp(0.0, PreferenceScale::MAX))
                .collect())
        })
        .collect::<Result<_, RiskError>>()?;
    Ok(metrics::l1_error(&pred, targets)?)
}

/// Train the risk head on ground-truth risk targets and keep the epoch
/// (including the initialization) with the lowest validation L1; ties go to
/// the earliest epoch.
pub fn train_risk_regressor(
    train: &TrainingSet,
    val: &TrainingSet,
    profiles: &[PrivacyProfile],
    config: &SgdConfig,
    taxonomy_version: &str,
) -> Result<(RiskRegressor, RiskTrainingReport), RiskError> {
    let Some(first) = profiles.first() else {
        return Err(RiskError::NoProfiles);
    };
    let a = first.u.len();
    if let Some(p) = profiles.iter().find(|p| p.u.len() != a) {
        return Err(RiskError::LengthMismatch {
            expected: a,
            actual: p.u.len(),
        });
    }
    let d = check_set(train, "training", a)?;
    let dv = check_set(val, "validation", a)?;
    if d != dv {
        return Err(RiskError::Inconsistent(format!("training is {d}-d, validation is {dv}-d")));
    }
    config.validate()?;

    let train_targets = risk_targets(&train.labels, profiles)?;
    let val_targets = risk_targets(&val.labels, profiles)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_7157_0000_0002);
    let mut head = MlpRiskHead::init(d, profiles.len(), &mut init_rng);
    debug_assert_eq!(head.layer1.out_dim, HIDDEN_WIDTH);
    let objective = RegressionObjective::new(&train.features, &train_targets)?;

    let mut best = head.clone();
    let mut best_epoch = 0;
    let mut best_l1 = mean_l1(&head, &val.features, &val_targets)?;
    let mut l1s = vec![best_l1];
    let mut eval_error = None;
    let train_loss = sgd_train(&mut head, &objective, config, |epoch, m, _| {
        match mean_l1(m, &val.features, &val_targets) {
            Ok(l1) => {
                l1s.push(l1);
                if l1 < best_l1 {
                    best_l1 = l1;
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
    let regressor = RiskRegressor {
        head: best,
        profile_ids: profiles.iter().map(|p| p.profile_id).collect(),
        taxonomy_version: taxonomy_version.to_string(),
    };
    let report = RiskTrainingReport {
        config: config.clone(),
        train_loss,
        val_l1: l1s,
        best_epoch,
        best_val_l1: best_l1,
    };
    Ok((regressor, report))
}

/// One line of the risk report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReportRow {
    pub image_id: String,
    pub profile_id: usize,
    pub gt: Option<f64>,
    pub ap_pr: Option<f64>,
    pub pr_head: Option<f64>,
    pub argmax_attribute_key: Option<String>,
}

pub fn write_risk_report<W: Write>(mut w: W, rows: &[RiskReportRow]) -> std::io::Result<()> {
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::TeacherWorld;

    fn profile(u: Vec<f64>) -> PrivacyProfile {
        PrivacyProfile {
            profile_id: 0,
            member_count: 1,
            u,
        }
    }

    #[test]
    fn safe_only_and_empty_labels() {
        let mut u = vec![3.0; 5];
        u[4] = 0.5;
        let p = profile(u);
        let r = ground_truth_risk(&[false, false, false, false, true], &p).unwrap();
        assert_eq!(r.value, 0.5);
        assert_eq!(r.argmax_attribute, 4);
        let r = ground_truth_risk(&[false; 5], &p).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.argmax_attribute, 0);
    }

    #[test]
    fn uniform_posteriors_halve_the_largest_preference() {
        let p = profile(vec![1.0, 4.5, 2.0, 0.5]);
        let s = AttributeScores {
            image_id: "x".into(),
            y: vec![0.5; 4],
        };
        let r = ap_pr_risk(&s, &p).unwrap();
        assert_eq!(r.value, 2.25);
        assert_eq!(r.argmax_attribute, 1);
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let r = risk_score(&[0.5, 1.0, 1.0], &[4.0, 2.0, 2.0]).unwrap();
        assert_eq!(r.argmax_attribute, 0);
        assert_eq!(r.value, 2.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = profile(vec![1.0, 0.5]);
        assert!(matches!(
            ground_truth_risk(&[true], &p),
            Err(RiskError::LengthMismatch { .. })
        ));
        let s = AttributeScores {
            image_id: "x".into(),
            y: vec![1.2, 0.0],
        };
        assert!(matches!(ap_pr_risk(&s, &p), Err(RiskError::InvalidScore { index: 0, .. })));
        assert!(matches!(risk_score(&[], &[]), Err(RiskError::Empty)));
    }

    #[test]
    fn zero_head_predicts_zero_and_outputs_are_clipped() {
        let mut reg = RiskRegressor {
            head: MlpRiskHead::zeros(3, 2),
            profile_ids: vec![4, 9],
            taxonomy_version: "v".into(),
        };
        assert_eq!(predict_risk(&reg, &[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        reg.head.output.bias = vec![-3.0, 11.0];
        assert_eq!(predict_risk(&reg, &[0.0; 3]).unwrap(), vec![0.0, 5.0]);
        assert_eq!(reg.output_index(9), Some(1));
        assert!(matches!(
            predict_risk(&reg, &[0.0]),
            Err(RiskError::Numopt(NumoptError::DimensionMismatch { .. }))
        ));
    }

    fn small_world() -> (TeacherWorld, Vec<PrivacyProfile>) {
        let world = TeacherWorld::generate(4, 3, 30, 10, 5);
        let profiles = crate::synth::random_profiles(3, 2, 2, 6);
        (world, profiles)
    }

    #[test]
    fn training_is_deterministic_and_round_trips() {
        let (world, profiles) = small_world();
        let cfg = SgdConfig {
            epochs: 3,
            batch_size: 8,
            seed: 3,
            ..SgdConfig::default()
        };
        let (a, report) = train_risk_regressor(&world.train, &world.val, &profiles, &cfg, "v").unwrap();
        let (b, _) = train_risk_regressor(&world.train, &world.val, &profiles, &cfg, "v").unwrap();
        assert_eq!(a, b);
        assert_eq!(report.val_l1.len(), 4);
        let mut buf = Vec::new();
        a.to_checkpoint(Some(&cfg)).write(&mut buf).unwrap();
        let back = RiskRegressor::from_checkpoint(&Checkpoint::read(buf.as_slice()).unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn training_needs_profiles_and_data() {
        let (world, profiles) = small_world();
        let cfg = SgdConfig::default();
        assert!(matches!(
            train_risk_regressor(&world.train, &world.val, &[], &cfg, "v"),
            Err(RiskError::NoProfiles)
        ));
        assert!(matches!(
            train_risk_regressor(&TrainingSet::default(), &world.val, &profiles, &cfg, "v"),
            Err(RiskError::EmptyDataset("training"))
        ));
    }

    #[test]
    fn report_rows_are_json_lines() {
        let rows = vec![RiskReportRow {
            image_id: "a".into(),
            profile_id: 2,
            gt: Some(0.5),
            ap_pr: Some(0.25),
            pr_head: None,
            argmax_attribute_key: Some("safe".into()),
        }];
        let mut out = Vec::new();
        write_risk_report(&mut out, &rows).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1);
        let back: RiskReportRow = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(back, rows[0]);
    }
}
