//! User-study input for the humans-vs-machine comparison.
//!
//! ```json
//! {
//!   "attributes": [{"key": "a26_passport", "desired": 4.4, "human_visual": 3.9}],
//!   "images": [{"image_id": "img-00012", "attribute": "a26_passport"}]
//! }
//! ```
//!
//! `desired` is the mean abstract rating of the attribute and `human_visual`
//! the mean rating given to images showing it, both on the 1–5 scale.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use privrisk_core::{AttributeTaxonomy, PreferenceScale, PrivacyProfile};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub attributes: Vec<StudyAttribute>,
    pub images: Vec<StudyImageRef>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyAttribute {
    pub key: String,
    pub desired: f64,
    pub human_visual: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyImageRef {
    pub image_id: String,
    pub attribute: String,
}

/// A study resolved against a taxonomy; vectors are indexed by attribute id.
#[derive(Debug)]
pub struct Study {
    pub desired: Vec<Option<f64>>,
    pub human_visual: Vec<Option<f64>>,
    /// (image id, attribute id)
    pub images: Vec<(String, usize)>,
}

pub fn load(path: &Path, taxonomy: &AttributeTaxonomy) -> Result<Study> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read study {}", path.display()))?;
    let file: StudyFile = serde_json::from_str(&text).with_context(|| format!("malformed study {}", path.display()))?;
    let n = taxonomy.len();
    let mut desired = vec![None; n];
    let mut human_visual = vec![None; n];
    for a in &file.attributes {
        let id = taxonomy.index_of(&a.key)?;
        if id == taxonomy.safe_index() {
            bail!("study cannot rate `{}`", a.key);
        }
        if !PreferenceScale::contains(a.desired) || !PreferenceScale::contains(a.human_visual) {
            bail!("study ratings for `{}` must lie in [1, 5]", a.key);
        }
        if desired[id].replace(a.desired).is_some() {
            bail!("attribute `{}` appears twice in the study", a.key);
        }
        human_visual[id] = Some(a.human_visual);
    }
    let images = file
        .images
        .into_iter()
        .map(|img| Ok((img.image_id, taxonomy.index_of(&img.attribute)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Study {
        desired,
        human_visual,
        images,
    })
}

/// Preference vector for scoring study images: desired means on studied
/// attributes, the nearest profile's values elsewhere. Nearness is squared
/// distance over the studied attributes; ties go to the smaller profile id.
pub fn preferences(study: &Study, profiles: &[PrivacyProfile]) -> Result<(Vec<f64>, usize)> {
    let dist = |p: &PrivacyProfile| -> f64 {
        study
            .desired
            .iter()
            .zip(&p.u)
            .filter_map(|(d, u)| d.map(|d| (d - u) * (d - u)))
            .sum()
    };
    let Some(best) = profiles
        .iter()
        .min_by(|a, b| dist(a).total_cmp(&dist(b)).then(a.profile_id.cmp(&b.profile_id)))
    else {
        bail!("no profiles to resolve study preferences against");
    };
    let u = best
        .u
        .iter()
        .zip(&study.desired)
        .map(|(&u, d)| d.unwrap_or(u))
        .collect();
    Ok((u, best.profile_id))
}
