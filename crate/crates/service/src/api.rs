//! Request/response types and the pure request handlers.

use privrisk_core::attribute_model::predict_attributes;
use privrisk_core::profiles::assign_profile;
use privrisk_core::risk::{ap_pr_risk, predict_risk};
use privrisk_core::taxonomy::PreferenceScale;
use privrisk_core::{Attribute, PrivacyProfile};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::snapshot::ModelSnapshot;

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    #[default]
    ApPr,
    PrHead,
    Both,
}

/// `image_id` xor `features`, and `u` xor `profile_id`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_id: Option<usize>,
    #[serde(default)]
    pub mode: ScoreMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub attribute: String,
    pub y: f64,
    pub u: f64,
    pub product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub mode: ScoreMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    /// Profile supplied, or resolved from `u` for the risk head.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile_id: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ap_pr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pr_head: Option<f64>,
    pub argmax_attribute: String,
    /// Largest `y_a·u_a` terms, descending; ties by attribute id.
    pub contributions: Vec<Contribution>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignRequest {
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignResponse {
    pub profile_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: String,
    /// Ground-truth attribute keys, when annotations are served.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub taxonomy_version: String,
    pub attributes: usize,
    pub feature_dim: usize,
    pub attribute_loss: String,
    pub profiles: usize,
    pub risk_outputs: usize,
    pub images: usize,
}

pub fn health(s: &ModelSnapshot) -> Health {
    Health {
        status: "ok".into(),
        taxonomy_version: s.taxonomy.version().into(),
        attributes: s.taxonomy.len(),
        feature_dim: s.features.dim(),
        attribute_loss: s.predictor.loss_kind.as_str().into(),
        profiles: s.profiles.profiles.len(),
        risk_outputs: s.regressor.profile_ids.len(),
        images: s.features.len(),
    }
}

pub fn attributes(s: &ModelSnapshot) -> &[Attribute] {
    s.taxonomy.attributes()
}

pub fn images(s: &ModelSnapshot) -> Vec<ImageEntry> {
    s.features
        .ids()
        .iter()
        .map(|id| {
            let meta = s.images.get(id);
            ImageEntry {
                image_id: id.clone(),
                labels: meta.map(|m| m.labels.iter().map(|&a| s.taxonomy.attributes()[a].key.clone()).collect()),
                split: meta.and_then(|m| m.split).map(|sp| sp.as_str().to_string()),
            }
        })
        .collect()
}

pub fn profile(s: &ModelSnapshot, profile_id: usize) -> Result<&PrivacyProfile, ApiError> {
    s.profiles
        .get(profile_id)
        .ok_or_else(|| ApiError::not_found(format!("unknown profile {profile_id}")))
}

fn check_preferences(s: &ModelSnapshot, u: &[f64]) -> Result<(), ApiError> {
    if u.len() != s.taxonomy.len() {
        return Err(ApiError::unprocessable(format!(
            "u has {} entries, expected {}",
            u.len(),
            s.taxonomy.len()
        )));
    }
    let safe = s.taxonomy.safe_index();
    if u[safe] != PreferenceScale::SAFE_VALUE {
        return Err(ApiError::unprocessable(format!(
            "u[{safe}] (safe) must be {}",
            PreferenceScale::SAFE_VALUE
        )));
    }
    if let Some((a, v)) = u.iter().enumerate().find(|(_, v)| !PreferenceScale::is_admissible(**v)) {
        return Err(ApiError::unprocessable(format!("u[{a}] = {v} is outside [0, 5]")));
    }
    Ok(())
}

pub fn handle_assign(s: &ModelSnapshot, req: &AssignRequest) -> Result<AssignResponse, ApiError> {
    check_preferences(s, &req.u)?;
    let profile_id = assign_profile(&s.profiles.profiles, &req.u).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(AssignResponse { profile_id })
}

pub fn handle_score(s: &ModelSnapshot, req: &ScoreRequest) -> Result<ScoreResponse, ApiError> {
    let features = match (&req.image_id, &req.features) {
        (Some(id), None) => s
            .features
            .get_f64(id)
            .ok_or_else(|| ApiError::not_found(format!("unknown image `{id}`")))?,
        (None, Some(x)) => {
            if x.len() != s.features.dim() {
                return Err(ApiError::unprocessable(format!(
                    "features have {} entries, expected {}",
                    x.len(),
                    s.features.dim()
                )));
            }
            x.clone()
        }
        _ => return Err(ApiError::bad_request("give exactly one of `image_id` and `features`")),
    };
    let (u, mut profile_id) = match (&req.u, req.profile_id) {
        (Some(u), None) => {
            check_preferences(s, u)?;
            (u.clone(), None)
        }
        (None, Some(id)) => (profile(s, id)?.u.clone(), Some(id)),
        _ => return Err(ApiError::bad_request("give exactly one of `u` and `profile_id`")),
    };

    let scores = predict_attributes(&s.predictor, req.image_id.as_deref().unwrap_or(""), &features)
        .map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let target = PrivacyProfile {
        profile_id: profile_id.unwrap_or(0),
        member_count: 0,
        u,
    };
    let risk = ap_pr_risk(&scores, &target).map_err(|e| ApiError::internal(e.to_string()))?;

    let ap_pr = matches!(req.mode, ScoreMode::ApPr | ScoreMode::Both).then_some(risk.value);
    let pr_head = if matches!(req.mode, ScoreMode::PrHead | ScoreMode::Both) {
        let id = match profile_id {
            Some(id) => id,
            None => assign_profile(&s.profiles.profiles, &target.u).map_err(|e| ApiError::internal(e.to_string()))?,
        };
        profile_id = Some(id);
        let out = predict_risk(&s.regressor, &features).map_err(|e| ApiError::unprocessable(e.to_string()))?;
        let idx = s
            .regressor
            .output_index(id)
            .ok_or_else(|| ApiError::not_found(format!("risk model has no output for profile {id}")))?;
        Some(out[idx])
    } else {
        None
    };

    let top_k = req.top_k.unwrap_or(DEFAULT_TOP_K);
    let mut order: Vec<usize> = (0..risk.contributions.len()).collect();
    order.sort_by(|&a, &b| {
        risk.contributions[b]
            .partial_cmp(&risk.contributions[a])
            .expect("finite products")
            .then(a.cmp(&b))
    });
    let attrs = s.taxonomy.attributes();
    let contributions = order
        .into_iter()
        .take(top_k)
        .map(|a| Contribution {
            attribute: attrs[a].key.clone(),
            y: scores.y[a],
            u: target.u[a],
            product: risk.contributions[a],
        })
        .collect();
    Ok(ScoreResponse {
        mode: req.mode,
        image_id: req.image_id.clone(),
        profile_id,
        ap_pr,
        pr_head,
        argmax_attribute: attrs[risk.argmax_attribute].key.clone(),
        contributions,
        y: scores.y,
    })
}
