use std::io;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use burrow::{DistanceMetric, HnswParams, Vector};
use futures::StreamExt;
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use crate::collections::{BuildStatus, Collection, Descriptor, Document, Registry};
use crate::error::{ApiError, ApiJson};
use crate::prompt::assemble_prompt;
use crate::providers::Providers;

pub const DEFAULT_K: usize = 10;

#[derive(Clone)]
pub struct AppState {
    pub registry: Arc<Registry>,
    pub providers: Providers,
}

pub fn api() -> Router<AppState> {
    Router::new()
        .route("/health", get(health))
        .route("/collections", get(list_collections).post(create_collection))
        .route("/collections/{name}", get(get_collection))
        .route("/collections/{name}/documents", post(add_documents))
        .route("/collections/{name}/build", get(build_status).delete(cancel_build))
        .route("/collections/{name}/query", post(query))
        .route("/collections/{name}/run", post(run))
        .route("/collections/{name}/export", get(export))
        .route("/collections/{name}/import", post(import))
        .route("/collections/{name}/consistency", get(consistency))
        .route("/prompt/assemble", post(assemble))
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    version: &'static str,
    embedding: bool,
    llm: bool,
    collections: usize,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok",
        version: env!("CARGO_PKG_VERSION"),
        embedding: state.providers.has_embedding(),
        llm: state.providers.has_llm(),
        collections: state.registry.list().len(),
    })
}

#[derive(Serialize)]
struct CollectionList {
    collections: Vec<Descriptor>,
}

async fn list_collections(State(state): State<AppState>) -> Json<CollectionList> {
    Json(CollectionList {
        collections: state.registry.list(),
    })
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct CreateCollection {
    name: String,
    dimension: usize,
    #[serde(default = "default_metric")]
    metric: DistanceMetric,
    m: Option<usize>,
    m_max0: Option<usize>,
    ef_construction: Option<usize>,
    ml: Option<f64>,
    seed: Option<u64>,
}

fn default_metric() -> DistanceMetric {
    DistanceMetric::Cosine
}

async fn create_collection(
    State(state): State<AppState>,
    ApiJson(req): ApiJson<CreateCollection>,
) -> Result<(StatusCode, Json<Descriptor>), ApiError> {
    let params = HnswParams {
        m: req.m,
        m_max0: req.m_max0,
        ef_construction: req.ef_construction,
        ml: req.ml,
        seed: req.seed,
    };
    let descriptor = state
        .registry
        .create(&req.name, req.dimension, req.metric, params)
        .await?;
    Ok((StatusCode::CREATED, Json(descriptor)))
}

async fn get_collection(State(state): State<AppState>, Path(name): Path<String>) -> Result<Json<Descriptor>, ApiError> {
    Ok(Json(state.registry.get(&name)?.descriptor()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DocumentIn {
    key: String,
    vector: Option<Vec<f64>>,
    text: Option<String>,
}

/// Either `documents: [{key, vector, text}]` or the columnar form
/// `keys`, `vectors` and optional `texts` of equal length.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AddDocuments {
    documents: Option<Vec<DocumentIn>>,
    keys: Option<Vec<String>>,
    vectors: Option<Vec<Vec<f64>>>,
    texts: Option<Vec<Option<String>>>,
    #[serde(default)]
    wait: bool,
}

impl AddDocuments {
    fn into_documents(self) -> Result<Vec<DocumentIn>, ApiError> {
        match (self.documents, self.keys, self.vectors) {
            (Some(docs), None, None) if self.texts.is_none() => Ok(docs),
            (None, Some(keys), Some(vectors)) => {
                if vectors.len() != keys.len() {
                    return Err(ApiError::bad_request(format!(
                        "{} keys but {} vectors",
                        keys.len(),
                        vectors.len()
                    )));
                }
                let texts = match self.texts {
                    Some(t) if t.len() != keys.len() => {
                        return Err(ApiError::bad_request(format!("{} keys but {} texts", keys.len(), t.len())))
                    }
                    Some(t) => t,
                    None => vec![None; keys.len()],
                };
                Ok(keys
                    .into_iter()
                    .zip(vectors)
                    .zip(texts)
                    .map(|((key, vector), text)| DocumentIn {
                        key,
                        vector: Some(vector),
                        text,
                    })
                    .collect())
            }
            _ => Err(ApiError::bad_request(
                "send either `documents` or both `keys` and `vectors` (with optional `texts`)",
            )),
        }
    }
}

#[derive(Serialize)]
struct Accepted {
    accepted: usize,
    build: BuildStatus,
}

async fn add_documents(
    State(state): State<AppState>,
    Path(name): Path<String>,
    ApiJson(req): ApiJson<AddDocuments>,
) -> Result<(StatusCode, Json<Accepted>), ApiError> {
    let collection = state.registry.get(&name)?;
    let wait = req.wait;
    let mut docs = Vec::new();
    for doc in req.into_documents()? {
        let vector = match (doc.vector, &doc.text) {
            (Some(v), _) => Vector::new(v)?,
            (None, Some(text)) => Vector::new(state.providers.embed(text).await?)?,
            (None, None) => {
                return Err(ApiError::bad_request(format!(
                    "document {:?} needs a vector or a text to embed",
                    doc.key
                )))
            }
        };
        docs.push(Document {
            key: doc.key,
            vector,
            text: doc.text,
        });
    }
    let accepted = collection.start_build(docs).await?;
    if wait {
        let build = collection.wait_for_build().await;
        Ok((StatusCode::OK, Json(Accepted { accepted, build })))
    } else {
        let build = collection.build_status();
        Ok((StatusCode::ACCEPTED, Json(Accepted { accepted, build })))
    }
}

async fn build_status(State(state): State<AppState>, Path(name): Path<String>) -> Result<Json<BuildStatus>, ApiError> {
    Ok(Json(state.registry.get(&name)?.build_status()))
}

async fn cancel_build(State(state): State<AppState>, Path(name): Path<String>) -> Result<Json<BuildStatus>, ApiError> {
    let collection = state.registry.get(&name)?;
    collection.request_cancel();
    Ok(Json(collection.wait_for_build().await))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRequest {
    vector: Option<Vec<f64>>,
    text: Option<String>,
    #[serde(default = "default_k")]
    k: usize,
    ef: Option<usize>,
}

fn default_k() -> usize {
    DEFAULT_K
}

#[derive(Serialize)]
struct QueryResponse {
    keys: Vec<String>,
    distances: Vec<f64>,
    texts: Vec<Option<String>>,
}

async fn query_vector(
    providers: &Providers,
    vector: Option<Vec<f64>>,
    text: Option<&str>,
) -> Result<Vector, ApiError> {
    match (vector, text) {
        (Some(v), _) => Ok(Vector::new(v)?),
        (None, Some(text)) => Ok(Vector::new(providers.embed(text).await?)?),
        (None, None) => Err(ApiError::bad_request("send a query `vector` or a `text` to embed")),
    }
}

async fn query(
    State(state): State<AppState>,
    Path(name): Path<String>,
    ApiJson(req): ApiJson<QueryRequest>,
) -> Result<Json<QueryResponse>, ApiError> {
    let collection = state.registry.get(&name)?;
    if req.vector.is_some() && req.text.is_some() {
        return Err(ApiError::bad_request("send either `vector` or `text`, not both"));
    }
    let vector = query_vector(&state.providers, req.vector, req.text.as_deref()).await?;
    let found = collection.query(vector, req.k, req.ef).await?;
    Ok(Json(QueryResponse {
        keys: found.result.keys,
        distances: found.result.distances,
        texts: found.texts,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AssembleRequest {
    template: String,
    user: String,
    #[serde(default)]
    contexts: Vec<String>,
}

#[derive(Serialize)]
struct AssembleResponse {
    prompt: String,
}

async fn assemble(ApiJson(req): ApiJson<AssembleRequest>) -> Json<AssembleResponse> {
    Json(AssembleResponse {
        prompt: assemble_prompt(&req.template, &req.user, &req.contexts),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunRequest {
    template: String,
    query: String,
    /// Skips the embedding call when present.
    vector: Option<Vec<f64>>,
    #[serde(default = "default_k")]
    k: usize,
    ef: Option<usize>,
}

#[derive(Serialize)]
struct Retrieved {
    key: String,
    distance: f64,
    text: Option<String>,
}

#[derive(Serialize)]
struct RunResponse {
    retrieved: Vec<Retrieved>,
    prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    completion: Option<String>,
    warnings: Vec<String>,
}

/// Retrieval, prompt assembly and, when configured, completion.
async fn run(
    State(state): State<AppState>,
    Path(name): Path<String>,
    ApiJson(req): ApiJson<RunRequest>,
) -> Result<Json<RunResponse>, ApiError> {
    let collection = state.registry.get(&name)?;
    let vector = query_vector(&state.providers, req.vector, Some(&req.query)).await?;
    let found = collection.query(vector, req.k, req.ef).await?;
    let mut warnings = Vec::new();
    let retrieved: Vec<Retrieved> = found
        .result
        .iter()
        .zip(found.texts)
        .map(|((key, distance), text)| Retrieved {
            key: key.to_owned(),
            distance,
            text,
        })
        .collect();
    let missing_text = retrieved.iter().filter(|r| r.text.is_none()).count();
    if missing_text > 0 {
        warnings.push(format!("{missing_text} retrieved documents have no text; their keys were used as context"));
    }
    let contexts: Vec<&str> = retrieved
        .iter()
        .map(|r| r.text.as_deref().unwrap_or(&r.key))
        .collect();
    let prompt = assemble_prompt(&req.template, &req.query, &contexts);
    let completion = match state.providers.complete(&prompt).await {
        Ok(c) => c,
        Err(err) => {
            warnings.push(format!("completion failed: {}", err.message));
            None
        }
    };
    Ok(Json(RunResponse {
        retrieved,
        prompt,
        completion,
        warnings,
    }))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct ExportParams {
    #[serde(default = "yes")]
    include_vectors: bool,
}

fn yes() -> bool {
    true
}

async fn export(
    State(state): State<AppState>,
    Path(name): Path<String>,
    Query(params): Query<ExportParams>,
) -> Result<Response, ApiError> {
    let collection: Arc<Collection> = state.registry.get(&name)?;
    let (tx, mut rx) = mpsc::channel::<io::Result<bytes::Bytes>>(16);
    collection.export(params.include_vectors, tx);
    let stream = futures::stream::poll_fn(move |cx| rx.poll_recv(cx));
    Ok((
        [
            (header::CONTENT_TYPE, "application/x-ndjson".to_owned()),
            (
                header::CONTENT_DISPOSITION,
                format!("attachment; filename=\"{name}.ndjson\""),
            ),
        ],
        Body::from_stream(stream),
    )
        .into_response())
}

async fn import(
    State(state): State<AppState>,
    Path(name): Path<String>,
    body: Body,
) -> Result<(StatusCode, Json<Descriptor>), ApiError> {
    let (tx, rx) = mpsc::channel(16);
    let forward = tokio::spawn(async move {
        let mut chunks = body.into_data_stream();
        while let Some(chunk) = chunks.next().await {
            if tx.send(chunk.map_err(io::Error::other)).await.is_err() {
                break;
            }
        }
    });
    let result = state.registry.import(&name, rx).await;
    forward.abort();
    Ok((StatusCode::CREATED, Json(result?)))
}

async fn consistency(
    State(state): State<AppState>,
    Path(name): Path<String>,
) -> Result<Json<burrow::ConsistencyReport>, ApiError> {
    Ok(Json(state.registry.get(&name)?.consistency().await?))
}
