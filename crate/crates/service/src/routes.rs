use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;

use crate::api::{self, AssignResponse, Health, ImageEntry, ScoreResponse};
use crate::error::ApiError;
use crate::snapshot::ModelSnapshot;
use privrisk_core::{Attribute, PrivacyProfile, ProfileSet};

type Shared = State<Arc<ModelSnapshot>>;

/// Parse a JSON body ourselves so every malformed request maps to 400.
fn parse_json<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed JSON body: {e}")))
}

async fn healthz(State(s): Shared) -> Json<Health> {
    Json(api::health(&s))
}

async fn attributes(State(s): Shared) -> Json<Vec<Attribute>> {
    Json(api::attributes(&s).to_vec())
}

async fn profiles(State(s): Shared) -> Json<ProfileSet> {
    Json(s.profiles.clone())
}

async fn profile(State(s): Shared, Path(id): Path<String>) -> Result<Json<PrivacyProfile>, ApiError> {
    let id: usize = id
        .parse()
        .map_err(|_| ApiError::bad_request(format!("profile id `{id}` is not a non-negative integer")))?;
    api::profile(&s, id).cloned().map(Json)
}

async fn images(State(s): Shared) -> Json<Vec<ImageEntry>> {
    Json(api::images(&s))
}

async fn score(State(s): Shared, body: Bytes) -> Result<Json<ScoreResponse>, ApiError> {
    let req = parse_json(&body)?;
    api::handle_score(&s, &req).map(Json)
}

async fn assign(State(s): Shared, body: Bytes) -> Result<Json<AssignResponse>, ApiError> {
    let req = parse_json(&body)?;
    api::handle_assign(&s, &req).map(Json)
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(snapshot: Arc<ModelSnapshot>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/attributes", get(attributes))
        .route("/profiles", get(profiles))
        .route("/profiles/assign", post(assign))
        .route("/profiles/{id}", get(profile))
        .route("/images", get(images))
        .route("/score", post(score))
        .fallback(fallback)
        .with_state(snapshot)
}
