use std::collections::HashMap;
use std::path::PathBuf;

use privrisk_core::attribute_model::AttributeModelError;
use privrisk_core::checkpoint::{Checkpoint, CheckpointError};
use privrisk_core::dataset::{load_annotations, load_features, DatasetError};
use privrisk_core::profiles::ProfileError;
use privrisk_core::risk::RiskError;
use privrisk_core::taxonomy::{load_taxonomy, TaxonomyError};
use privrisk_core::{
    AnnotatedExample, AttributePredictor, AttributeTaxonomy, FeatureStore, ProfileSet, RiskRegressor, Split,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("taxonomy: {0}")]
    Taxonomy(#[from] TaxonomyError),
    #[error("checkpoint `{path}`: {source}")]
    Checkpoint { path: PathBuf, source: CheckpointError },
    #[error("attribute model: {0}")]
    AttributeModel(#[from] AttributeModelError),
    #[error("risk model: {0}")]
    RiskModel(#[from] RiskError),
    #[error("profiles: {0}")]
    Profiles(#[from] ProfileError),
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("inconsistent artifacts: {0}")]
    Inconsistent(String),
}

/// Files the service loads at startup.
#[derive(Debug, Clone)]
pub struct SnapshotPaths {
    pub taxonomy: Option<PathBuf>,
    pub attribute_checkpoint: PathBuf,
    pub risk_checkpoint: PathBuf,
    pub profiles: PathBuf,
    pub features: PathBuf,
    pub annotations: Option<PathBuf>,
}

/// Label metadata for a served image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMeta {
    pub labels: Vec<usize>,
    pub split: Option<Split>,
}

/// Everything a request handler reads. Immutable once built.
#[derive(Debug, Clone)]
pub struct ModelSnapshot {
    pub taxonomy: AttributeTaxonomy,
    pub predictor: AttributePredictor,
    pub regressor: RiskRegressor,
    pub profiles: ProfileSet,
    pub features: FeatureStore,
    pub images: HashMap<String, ImageMeta>,
}

fn load_checkpoint(path: &PathBuf) -> Result<Checkpoint, SnapshotError> {
    Checkpoint::load(path).map_err(|source| SnapshotError::Checkpoint {
        path: path.clone(),
        source,
    })
}

impl ModelSnapshot {
    /// Cross-check the artifacts and assemble a snapshot.
    pub fn new(
        taxonomy: AttributeTaxonomy,
        predictor: AttributePredictor,
        regressor: RiskRegressor,
        profiles: ProfileSet,
        features: FeatureStore,
        annotations: &[AnnotatedExample],
    ) -> Result<Self, SnapshotError> {
        let bad = |m: String| Err(SnapshotError::Inconsistent(m));
        profiles.validate(&taxonomy)?;
        if predictor.num_attributes() != taxonomy.len() {
            return bad(format!(
                "attribute model predicts {} attributes, taxonomy has {}",
                predictor.num_attributes(),
                taxonomy.len()
            ));
        }
        for (what, version) in [
            ("attribute model", &predictor.taxonomy_version),
            ("risk model", &regressor.taxonomy_version),
        ] {
            if version != taxonomy.version() {
                return bad(format!(
                    "{what} was trained with taxonomy `{version}`, serving `{}`",
                    taxonomy.version()
                ));
            }
        }
        for (what, dim) in [
            ("attribute model", predictor.input_dim()),
            ("risk model", regressor.head.input_dim()),
        ] {
            if dim != features.dim() {
                return bad(format!("{what} expects {dim}-d features, store holds {}-d", features.dim()));
            }
        }
        for p in &profiles.profiles {
            if regressor.output_index(p.profile_id).is_none() {
                return bad(format!("risk model has no output for profile {}", p.profile_id));
            }
        }
        let images = annotations
            .iter()
            .map(|ex| {
                (
                    ex.image_id.clone(),
                    ImageMeta {
                        labels: ex.label_ids().collect(),
                        split: ex.split,
                    },
                )
            })
            .collect();
        Ok(Self {
            taxonomy,
            predictor,
            regressor,
            profiles,
            features,
            images,
        })
    }

    /// Load every artifact from disk; any failure aborts startup.
    pub fn load(paths: &SnapshotPaths) -> Result<Self, SnapshotError> {
        let taxonomy = match &paths.taxonomy {
            Some(p) => load_taxonomy(p)?,
            None => AttributeTaxonomy::bundled(),
        };
        let predictor = AttributePredictor::from_checkpoint(&load_checkpoint(&paths.attribute_checkpoint)?)?;
        let regressor = RiskRegressor::from_checkpoint(&load_checkpoint(&paths.risk_checkpoint)?)?;
        let profiles = ProfileSet::load(&paths.profiles)?;
        let features = load_features(&paths.features)?;
        let annotations = match &paths.annotations {
            Some(p) => load_annotations(p, &taxonomy)?,
            None => Vec::new(),
        };
        Self::new(taxonomy, predictor, regressor, profiles, features, &annotations)
    }
}
