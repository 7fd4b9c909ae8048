//! Personalized visual privacy risk engine.
//!
//! The crate is organised bottom-up:
//!
//! - [`taxonomy`]: the 68 privacy attributes and the 1–5 preference scale
//! - [`dataset`]: multi-label annotations, split assignment and binary feature stores
//! - [`numopt`]: losses, a small sigmoid MLP with hand-written backprop, mini-batch SGD
//! - [`checkpoint`]: JSON header + little-endian `f64` blob model files
//! - [`attribute_model`]: linear multi-label attribute predictor
//! - [`profiles`]: preference ingestion, k-means and silhouette-based profile selection
//! - [`risk`]: ground-truth / attribute-based risk and the learned risk head
//! - [`metrics`]: AP, C-MAP, L1, thresholded PR curves and the humans-vs-machine report
//! - [`synth`]: seeded synthetic worlds used by tests, demos and the acceptance suite

pub mod attribute_model;
pub mod checkpoint;
pub mod dataset;
pub mod metrics;
pub mod numopt;
pub mod profiles;
pub mod risk;
pub mod synth;
pub mod taxonomy;

pub use attribute_model::{AttributePredictor, AttributeScores, LossKind};
pub use dataset::{AnnotatedExample, DatasetStats, FeatureStore, FeatureVector, Split, TrainingSet};
pub use numopt::{LinearModel, MlpRiskHead, SgdConfig};
pub use profiles::{ClusteringResult, PreferenceResponse, PrivacyProfile, ProfileSet};
pub use risk::{RiskRegressor, RiskScore};
pub use taxonomy::{Attribute, AttributeGroup, AttributeTaxonomy, PreferenceScale};
