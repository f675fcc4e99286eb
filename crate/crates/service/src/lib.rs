//! HTTP facade over a feature store.
//!
//! | method | path                         | body / query                          |
//! |--------|------------------------------|---------------------------------------|
//! | POST   | `/api/images`                | multipart `image`, `mask`, `image_id?` |
//! | GET    | `/api/search`                | `image_id`, `k`                       |
//! | POST   | `/api/search/attributes`     | `{entries, k, spread?}`               |
//! | GET    | `/api/images/{id}/features`  |                                       |
//! | GET    | `/api/presets`               |                                       |
//!
//! Errors are `{"error": message}` with a 4xx/5xx status.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Multipart, Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parseid_core::eval::{rank_query, Protocol, RankingResult};
use parseid_core::features::SourceInfo;
use parseid_core::mask::decode_person_image;
use parseid_core::query::{search_by_attributes, AttributeEntry, AttributeQuery, TexturePresetTable, DEFAULT_SPREAD};
use parseid_core::store::{content_hash, validate_image_id, FeatureStore, StoreError};
use parseid_core::{extract_record, pair_score, EngineConfig, FeatureRecord, SimilarityReport};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::RwLock;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";
pub const DEFAULT_MAX_K: usize = 100;
const UPLOAD_LIMIT: usize = 32 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    Store(#[from] StoreError),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub store: PathBuf,
    pub weights: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    pub max_k: usize,
}

impl ServiceConfig {
    pub fn new(store: impl Into<PathBuf>) -> Self {
        Self {
            listen: DEFAULT_LISTEN.parse().expect("valid default address"),
            store: store.into(),
            weights: None,
            static_dir: None,
            max_k: DEFAULT_MAX_K,
        }
    }

    /// Reads `PARSEID_STORE` (required), `PARSEID_LISTEN`, `PARSEID_WEIGHTS`,
    /// `PARSEID_STATIC` and `PARSEID_MAX_K`.
    pub fn from_env() -> Result<Self, ServiceError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let store = var("PARSEID_STORE").ok_or_else(|| ServiceError::Config("PARSEID_STORE is not set".into()))?;
        let mut cfg = Self::new(store);
        if let Some(l) = var("PARSEID_LISTEN") {
            cfg.listen = l
                .parse()
                .map_err(|e| ServiceError::Config(format!("PARSEID_LISTEN '{l}': {e}")))?;
        }
        cfg.weights = var("PARSEID_WEIGHTS").map(PathBuf::from);
        cfg.static_dir = var("PARSEID_STATIC").map(PathBuf::from);
        if let Some(k) = var("PARSEID_MAX_K") {
            cfg.max_k = k
                .parse()
                .map_err(|e| ServiceError::Config(format!("PARSEID_MAX_K '{k}': {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.max_k == 0 {
            return Err(ServiceError::Config("max k must be at least 1".into()));
        }
        if !self.store.is_dir() {
            return Err(ServiceError::Config(format!("store {} does not exist", self.store.display())));
        }
        Ok(())
    }
}

struct Inner {
    store: FeatureStore,
    /// Every stored record, kept resident and sorted by id.
    records: Vec<FeatureRecord>,
}

pub struct AppState {
    inner: RwLock<Inner>,
    engine: EngineConfig,
    presets: TexturePresetTable,
    max_k: usize,
}

impl AppState {
    pub fn new(store: FeatureStore, engine: EngineConfig, presets: TexturePresetTable, max_k: usize) -> Result<Self, ServiceError> {
        if store.version() != engine.version() {
            return Err(StoreError::VersionConflict {
                store: store.version().to_string(),
                record: engine.version(),
            }
            .into());
        }
        let records = store.load_all()?;
        Ok(Self {
            inner: RwLock::new(Inner { store, records }),
            engine,
            presets,
            max_k,
        })
    }

    /// Opens the configured store, creating it when the directory is empty.
    pub fn open(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        let engine = match &cfg.weights {
            Some(p) => EngineConfig::load(p).map_err(|e| ServiceError::Config(e.to_string()))?,
            None => EngineConfig::default(),
        };
        let store = FeatureStore::open_or_create(&cfg.store, &engine.version())?;
        Self::new(store, engine, TexturePresetTable::builtin(), cfg.max_k)
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub image_id: String,
    pub score: f64,
    pub report: SimilarityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub query_id: String,
    pub hits: Vec<Hit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSearchResponse {
    /// The record the query was scored as.
    pub descriptor: FeatureRecord,
    pub hits: Vec<Hit>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadResponse {
    pub image_id: String,
}

/// Attaches the per-class breakdown to the top of a ranking.
pub fn hits(query: &FeatureRecord, ranking: &RankingResult, gallery: &BTreeMap<&str, &FeatureRecord>, engine: &EngineConfig) -> Vec<Hit> {
    ranking
        .ranked
        .iter()
        .map(|item| Hit {
            image_id: item.image_id.clone(),
            score: item.score,
            report: pair_score(query, gallery[item.image_id.as_str()], &engine.scoring),
        })
        .collect()
}

/// Ranks every other stored record against `query`.
pub fn search_by_example(query: &FeatureRecord, records: &[FeatureRecord], k: usize, engine: &EngineConfig) -> SearchResponse {
    let gallery: Vec<FeatureRecord> = records.iter().filter(|r| r.image_id != query.image_id).cloned().collect();
    let mut ranking = rank_query(query, &gallery, Protocol { cross_camera: false }, &engine.scoring);
    ranking.ranked.truncate(k);
    let by_id = gallery.iter().map(|r| (r.image_id.as_str(), r)).collect();
    SearchResponse {
        query_id: query.image_id.clone(),
        hits: hits(query, &ranking, &by_id, engine),
    }
}

pub fn search_attributes(
    q: &AttributeQuery,
    presets: &TexturePresetTable,
    spread: usize,
    records: &[FeatureRecord],
    k: usize,
    engine: &EngineConfig,
) -> Result<AttributeSearchResponse, parseid_core::query::QueryError> {
    let (descriptor, ranking) = search_by_attributes(q, presets, spread, records, k, engine)?;
    let by_id = records.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let hits = hits(&descriptor, &ranking, &by_id, engine);
    Ok(AttributeSearchResponse { descriptor, hits })
}

fn check_k(k: usize, max_k: usize) -> Result<(), ApiError> {
    if k == 0 {
        return Err(ApiError::bad_request("k must be at least 1"));
    }
    if k > max_k {
        return Err(ApiError::bad_request(format!("k must be at most {max_k}")));
    }
    Ok(())
}

fn default_k() -> usize {
    10
}

#[derive(Debug, Deserialize)]
pub struct SearchParams {
    pub image_id: String,
    #[serde(default = "default_k")]
    pub k: usize,
}

async fn search(State(state): State<Arc<AppState>>, Query(p): Query<SearchParams>) -> Result<Json<SearchResponse>, ApiError> {
    check_k(p.k, state.max_k)?;
    let inner = state.inner.read().await;
    let query = inner
        .records
        .binary_search_by(|r| r.image_id.as_str().cmp(&p.image_id))
        .map(|i| &inner.records[i])
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, format!("unknown image_id '{}'", p.image_id)))?;
    Ok(Json(search_by_example(query, &inner.records, p.k, &state.engine)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeRequest {
    pub entries: Vec<AttributeEntry>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub spread: Option<usize>,
}

async fn search_attr(
    State(state): State<Arc<AppState>>,
    body: Result<Json<AttributeRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<AttributeSearchResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    check_k(req.k, state.max_k)?;
    let q = AttributeQuery::new(req.entries);
    let inner = state.inner.read().await;
    search_attributes(
        &q,
        &state.presets,
        req.spread.unwrap_or(DEFAULT_SPREAD),
        &inner.records,
        req.k,
        &state.engine,
    )
    .map(Json)
    .map_err(|e| ApiError::bad_request(e.to_string()))
}

async fn features(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<FeatureRecord>, ApiError> {
    let inner = state.inner.read().await;
    inner
        .records
        .binary_search_by(|r| r.image_id.as_str().cmp(&id))
        .map(|i| Json(inner.records[i].clone()))
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, format!("unknown image_id '{id}'")))
}

async fn presets(State(state): State<Arc<AppState>>) -> Json<Vec<String>> {
    Json(state.presets.names())
}

async fn upload(State(state): State<Arc<AppState>>, mut multipart: Multipart) -> Result<Json<UploadResponse>, ApiError> {
    let (mut image, mut mask, mut image_id) = (None, None, None);
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(e.body_text()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?;
        match name.as_str() {
            "image" => image = Some(bytes),
            "mask" => mask = Some(bytes),
            "image_id" => {
                image_id = Some(String::from_utf8(bytes.to_vec()).map_err(|_| ApiError::bad_request("image_id is not UTF-8"))?)
            }
            other => return Err(ApiError::bad_request(format!("unexpected field '{other}'"))),
        }
    }
    let image = image.ok_or_else(|| ApiError::bad_request("missing field 'image'"))?;
    let mask = mask.ok_or_else(|| ApiError::bad_request("missing field 'mask'"))?;
    let hash = content_hash(&image, &mask);
    let image_id = image_id.unwrap_or_else(|| hash[..16].to_string());
    validate_image_id(&image_id).map_err(|e| ApiError::bad_request(e.to_string()))?;

    let person = decode_person_image(&image_id, &image, &mask, Path::new("image"), Path::new("mask"))
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let engine = state.engine.clone();
    let mut record = tokio::task::spawn_blocking(move || extract_record(&person, &engine))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    record.source = Some(SourceInfo {
        image: "upload".into(),
        mask: "upload".into(),
        content_hash: hash,
    });

    let mut inner = state.inner.write().await;
    let pos = match inner.records.binary_search_by(|r| r.image_id.as_str().cmp(&image_id)) {
        Ok(_) => {
            return Err(ApiError::new(StatusCode::CONFLICT, format!("image_id '{image_id}' already exists")));
        }
        Err(pos) => pos,
    };
    inner.store.put(&record)?;
    inner.records.insert(pos, record);
    log::info!("stored upload {image_id}");
    Ok(Json(UploadResponse { image_id }))
}

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/images", post(upload))
        .route("/api/images/{id}/features", get(features))
        .route("/api/search", get(search))
        .route("/api/search/attributes", post(search_attr))
        .route("/api/presets", get(presets))
        .layer(DefaultBodyLimit::max(UPLOAD_LIMIT))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `cfg.listen` and serves until the process is stopped.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    cfg.validate()?;
    let state = Arc::new(AppState::open(&cfg)?);
    let app = router(state, cfg.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(cfg.listen).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}
