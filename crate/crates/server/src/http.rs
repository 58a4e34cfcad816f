//! The `/api` HTTP surface.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::{header, HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde_json::json;
use tokio::sync::Semaphore;

use crate::request::{parse_betas, RawRequest, RequestError, RestoreRequest};
use crate::service::{LoadedModel, RestoreMetadata, RestoreOutput, ServiceError};

/// Upper bound on a request body; a 512×512 PNG plus mask fits easily.
pub const BODY_LIMIT: usize = 32 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolConfig {
    /// Inferences running at once.
    pub workers: usize,
    /// Requests allowed to wait for a worker before 429.
    pub queue_depth: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            queue_depth: 16,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    model: Arc<OnceLock<Arc<LoadedModel>>>,
    workers: Arc<Semaphore>,
    pending: Arc<AtomicUsize>,
    capacity: usize,
}

/// A reserved slot in the worker queue, released on drop.
pub struct Admission {
    pending: Arc<AtomicUsize>,
}

impl Drop for Admission {
    fn drop(&mut self) {
        self.pending.fetch_sub(1, Ordering::SeqCst);
    }
}

impl AppState {
    pub fn new(pool: PoolConfig) -> Self {
        let workers = pool.workers.max(1);
        Self {
            model: Arc::new(OnceLock::new()),
            workers: Arc::new(Semaphore::new(workers)),
            pending: Arc::new(AtomicUsize::new(0)),
            capacity: workers + pool.queue_depth,
        }
    }

    pub fn with_model(pool: PoolConfig, model: LoadedModel) -> Self {
        let state = Self::new(pool);
        state.set_model(model);
        state
    }

    /// Installs the model. Later calls are ignored: weights never change
    /// once serving.
    pub fn set_model(&self, model: LoadedModel) -> bool {
        self.model.set(Arc::new(model)).is_ok()
    }

    pub fn model(&self) -> Option<Arc<LoadedModel>> {
        self.model.get().cloned()
    }

    /// Reserves a place for one request, or fails with `Busy` when workers
    /// and queue are full.
    pub fn admit(&self) -> Result<Admission, ServiceError> {
        let taken = self.pending.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| (n < self.capacity).then_some(n + 1));
        match taken {
            Ok(_) => Ok(Admission {
                pending: self.pending.clone(),
            }),
            Err(_) => Err(ServiceError::Busy),
        }
    }

    pub fn pending(&self) -> usize {
        self.pending.load(Ordering::SeqCst)
    }

    /// Runs `f` on the blocking pool once a worker is free.
    async fn run<T: Send + 'static>(
        &self,
        f: impl FnOnce(&LoadedModel) -> Result<T, ServiceError> + Send + 'static,
    ) -> Result<T, ServiceError> {
        let model = self.model().ok_or(ServiceError::NotLoaded)?;
        let _slot = self.admit()?;
        let _permit = self.workers.clone().acquire_owned().await.map_err(|_| ServiceError::Busy)?;
        tokio::task::spawn_blocking(move || f(&model))
            .await
            .map_err(|e| ServiceError::Internal(textir::Error::Validation(format!("worker panicked: {e}"))))?
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/model", get(model_info))
        .route("/api/restore", post(restore))
        .route("/api/sweep", post(sweep))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = match &self {
            ServiceError::Invalid(e) => json!({ "error": "invalid_request", "field": e.field, "reason": e.reason }),
            ServiceError::TaskMismatch { .. } => json!({ "error": "task_mismatch", "reason": self.to_string() }),
            ServiceError::NotLoaded => json!({ "error": "not_loaded", "reason": self.to_string() }),
            ServiceError::Busy => json!({ "error": "busy", "reason": self.to_string() }),
            ServiceError::Internal(e) => {
                log::error!("restore failed: {e}");
                json!({ "error": "internal", "reason": e.to_string() })
            }
        };
        (status, Json(body)).into_response()
    }
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "loaded": state.model().is_some() }))
}

async fn model_info(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(match state.model() {
        None => json!({ "loaded": false }),
        Some(m) => json!({
            "loaded": true,
            "version": m.version(),
            "spec": m.spec(),
            "provider": m.provider().spec(),
            "checkpoint_hash": m.checkpoint_hash(),
            "step": m.step(),
        }),
    })
}

fn bad(field: &'static str, reason: impl Into<String>) -> ServiceError {
    RequestError::new(field, reason).into()
}

async fn read_form(mut form: Multipart) -> Result<RawRequest, ServiceError> {
    let mut raw = RawRequest::default();
    while let Some(field) = form.next_field().await.map_err(|e| bad("body", e.body_text()))? {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(|e| bad("body", e.body_text()))?.to_vec();
        let text = |field: &'static str| -> Result<Option<String>, ServiceError> {
            let s = String::from_utf8(bytes.clone()).map_err(|_| bad(field, "not UTF-8 text"))?;
            Ok((!s.trim().is_empty()).then_some(s))
        };
        match name.as_str() {
            "task" => raw.task = text("task")?,
            "prompt" => raw.prompt = text("prompt")?,
            "beta" => raw.beta = text("beta")?,
            "sr_factor" => raw.sr_factor = text("sr_factor")?,
            "seed" => raw.seed = text("seed")?,
            "betas" => raw.betas = text("betas")?,
            "image" => raw.image = Some(bytes),
            "mask" => raw.mask = (!bytes.is_empty()).then_some(bytes),
            other => return Err(bad("body", format!("unknown field `{other}`"))),
        }
    }
    Ok(raw)
}

fn metadata_headers(m: &RestoreMetadata) -> Vec<(HeaderName, HeaderValue)> {
    let pairs = [
        ("x-textir-model-version", m.model_version.clone()),
        ("x-textir-checkpoint-hash", m.checkpoint_hash.clone()),
        ("x-textir-timing-ms", format!("{:.3}", m.timing_ms)),
        ("x-textir-condition-source", m.condition_source.as_str().to_string()),
        ("x-textir-beta", m.beta.to_string()),
        ("x-textir-strength", m.strength.to_string()),
        ("x-textir-seed", m.seed.to_string()),
    ];
    pairs
        .into_iter()
        .filter_map(|(k, v)| Some((HeaderName::from_static(k), HeaderValue::from_str(&v).ok()?)))
        .collect()
}

async fn restore(State(state): State<AppState>, form: Multipart) -> Result<Response, ServiceError> {
    let raw = read_form(form).await?;
    if raw.betas.is_some() {
        return Err(bad("betas", "only accepted by /api/sweep"));
    }
    let req = RestoreRequest::parse(&raw)?;
    let out: RestoreOutput = state.run(move |m| m.restore(&req)).await?;
    let mut resp = (StatusCode::OK, [(header::CONTENT_TYPE, "image/png")], out.png).into_response();
    resp.headers_mut().extend(metadata_headers(&out.metadata));
    Ok(resp)
}

async fn sweep(State(state): State<AppState>, form: Multipart) -> Result<Json<serde_json::Value>, ServiceError> {
    let mut raw = read_form(form).await?;
    let betas_raw = raw.betas.take().ok_or_else(|| bad("betas", "missing"))?;
    let betas = parse_betas(&betas_raw, raw.prompt.as_deref())?;
    // the single-β checks run against the last β, which needs the most
    raw.beta = Some(betas[betas.len() - 1].to_string());
    let req = RestoreRequest::parse(&raw)?;
    let outs = state.run(move |m| m.sweep(&req, &betas)).await?;
    let engine = base64::engine::general_purpose::STANDARD;
    let results: Vec<_> = outs
        .iter()
        .map(|o| json!({ "beta": o.metadata.beta, "png_base64": engine.encode(&o.png), "metadata": o.metadata }))
        .collect();
    Ok(Json(json!({ "results": results })))
}
