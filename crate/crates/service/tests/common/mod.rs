#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use privrisk_core::numopt::{Affine, MlpRiskHead};
use privrisk_core::synth::{demo_dataset, random_profiles};
use privrisk_core::{AttributePredictor, AttributeTaxonomy, LinearModel, LossKind, ProfileSet, RiskRegressor};
use privrisk_service::{router, ModelSnapshot};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tower::ServiceExt;

pub const DIM: usize = 8;

/// Snapshot over demo images with randomly initialized models.
pub fn snapshot(seed: u64) -> ModelSnapshot {
    let taxonomy = AttributeTaxonomy::bundled();
    let demo = demo_dataset(&taxonomy, 40, DIM, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let predictor = AttributePredictor {
        linear: LinearModel::glorot(taxonomy.len(), DIM, &mut rng),
        loss_kind: LossKind::SigmoidCe,
        taxonomy_version: taxonomy.version().into(),
    };
    let profiles = random_profiles(taxonomy.len(), taxonomy.safe_index(), 3, seed);
    // Outputs deliberately ordered differently from profile ids.
    let regressor = RiskRegressor {
        head: MlpRiskHead::init(DIM, 3, &mut rng),
        profile_ids: vec![2, 0, 1],
        taxonomy_version: taxonomy.version().into(),
    };
    let set = ProfileSet {
        k: 3,
        silhouette: 0.5,
        profiles,
    };
    ModelSnapshot::new(taxonomy, predictor, regressor, set, demo.features, &demo.examples).unwrap()
}

/// Attribute model that is confident about exactly one attribute.
pub fn confident_predictor(taxonomy: &AttributeTaxonomy, attribute: usize) -> AttributePredictor {
    let mut linear = Affine::zeros(taxonomy.len(), DIM);
    linear.bias = vec![-40.0; taxonomy.len()];
    linear.bias[attribute] = 40.0;
    AttributePredictor {
        linear,
        loss_kind: LossKind::SigmoidCe,
        taxonomy_version: taxonomy.version().into(),
    }
}

pub fn app(s: ModelSnapshot) -> Router {
    router(Arc::new(s))
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<String>) -> (StatusCode, Value, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    let json = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, json, bytes)
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, v, _) = call(app, Method::GET, uri, None).await;
    (s, v)
}

pub async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let (s, v, _) = call(app, Method::POST, uri, Some(body.to_string())).await;
    (s, v)
}
