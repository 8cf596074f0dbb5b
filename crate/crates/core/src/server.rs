//! JSON-over-HTTP front end. Models are loaded once and shared read-only;
//! each request runs on the blocking pool. Bodies and responses are
//! documented in `docs/FORMATS.md`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{render_png, CategoricalImage};
use crate::embeddings::{BridgeClient, EmbeddingsFile, Resolver};
use crate::error::{Error, Result};
use crate::latent::{apply_expr, parse_expr, walk};
use crate::model::{load_checkpoint, Generator, ModelConfig, EMBED_DIM};
use crate::run::lock_path;

/// Most images one `/generate` call may ask for.
pub const MAX_COUNT: usize = 64;
pub const MAX_STEPS: usize = 256;

pub struct AppState {
    pub models: BTreeMap<String, Arc<Generator>>,
    pub resolver: Resolver,
}

impl AppState {
    pub fn new(models: BTreeMap<String, Generator>, resolver: Resolver) -> Self {
        AppState {
            models: models.into_iter().map(|(k, v)| (k, Arc::new(v))).collect(),
            resolver,
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Bridge(_) => StatusCode::BAD_GATEWAY,
            e if e.is_usage() => StatusCode::BAD_REQUEST,
            Error::Dimension { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> std::result::Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> std::result::Result<T, ApiError> + Send + 'static) -> std::result::Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
}

#[derive(Serialize)]
pub struct ImageOut {
    /// Hex digit rows, one character per cell.
    pub grid: Vec<String>,
    /// Base64 PNG rendered with the model's palette or tile atlas.
    pub png: String,
}

fn image_out(model: &Generator, img: &CategoricalImage, scale: usize) -> Result<ImageOut> {
    let png = render_png(img, &model.meta().render_style(scale))?;
    Ok(ImageOut {
        grid: img.to_hex_rows(),
        png: base64::engine::general_purpose::STANDARD.encode(png),
    })
}

fn pick_model(state: &AppState, id: Option<&str>) -> std::result::Result<(String, Arc<Generator>), ApiError> {
    match id {
        Some(id) => state
            .models
            .get(id)
            .map(|m| (id.to_owned(), m.clone()))
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown model `{id}`"))),
        None if state.models.len() == 1 => {
            let (id, m) = state.models.iter().next().expect("one model");
            Ok((id.clone(), m.clone()))
        }
        None => Err(ApiError::bad_request("field `model` is required when several models are served")),
    }
}

fn check_scale(scale: usize) -> std::result::Result<(), ApiError> {
    if (1..=32).contains(&scale) {
        Ok(())
    } else {
        Err(ApiError::bad_request(format!("field `scale` must lie in 1..=32, got {scale}")))
    }
}

#[derive(Serialize)]
struct ModelInfo {
    id: String,
    config: ModelConfig,
    domain: Option<crate::data::Domain>,
    param_count: usize,
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn models(State(state): State<Arc<AppState>>) -> Json<Vec<ModelInfo>> {
    Json(
        state
            .models
            .iter()
            .map(|(id, m)| ModelInfo {
                id: id.clone(),
                config: m.config().clone(),
                domain: m.meta().domain,
                param_count: m.param_count(),
            })
            .collect(),
    )
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    #[serde(default)]
    pub prompt: Option<String>,
    #[serde(default)]
    pub embedding: Option<Vec<f32>>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub count: usize,
    #[serde(default = "one")]
    pub scale: usize,
}

fn one() -> usize {
    1
}

#[derive(Serialize)]
pub struct GenerateResponse {
    pub model: String,
    pub images: Vec<ImageOut>,
    pub elapsed_ms: f64,
}

async fn generate(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<GenerateResponse> {
    let req: GenerateRequest = parse_body(&body)?;
    let (id, model) = pick_model(&state, req.model.as_deref())?;
    if !(1..=MAX_COUNT).contains(&req.count) {
        return Err(ApiError::bad_request(format!("field `count` must lie in 1..={MAX_COUNT}, got {}", req.count)));
    }
    check_scale(req.scale)?;
    if let Some(e) = &req.embedding {
        if e.len() != EMBED_DIM {
            return Err(ApiError::bad_request(format!(
                "field `embedding` must have length {EMBED_DIM}, got {}",
                e.len()
            )));
        }
        if e.iter().any(|v| !v.is_finite()) {
            return Err(ApiError::bad_request("field `embedding` must be finite"));
        }
    }
    let t = Instant::now();
    let images = blocking(move || {
        let emb = match (req.prompt, req.embedding) {
            (Some(p), None) => state.resolver.resolve(&p)?,
            (None, Some(e)) => e,
            _ => return Err(ApiError::bad_request("give exactly one of `prompt` and `embedding`")),
        };
        let mut out = Vec::with_capacity(req.count);
        for z in model.sample_noise(req.seed, req.count) {
            out.push(image_out(&model, &model.generate_image(&emb, &z)?, req.scale)?);
        }
        Ok(out)
    })
    .await?;
    Ok(Json(GenerateResponse {
        model: id,
        images,
        elapsed_ms: t.elapsed().as_secs_f64() * 1e3,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InterpolateRequest {
    a: String,
    b: String,
    steps: usize,
    #[serde(default)]
    model: Option<String>,
    /// Zero noise when absent.
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default = "one")]
    scale: usize,
}

#[derive(Serialize)]
struct FramesResponse {
    model: String,
    frames: Vec<ImageOut>,
    elapsed_ms: f64,
}

async fn interpolate(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<FramesResponse> {
    let req: InterpolateRequest = parse_body(&body)?;
    let (id, model) = pick_model(&state, req.model.as_deref())?;
    if !(2..=MAX_STEPS).contains(&req.steps) {
        return Err(ApiError::bad_request(format!("field `steps` must lie in 2..={MAX_STEPS}, got {}", req.steps)));
    }
    check_scale(req.scale)?;
    let t = Instant::now();
    let frames = blocking(move || {
        let e = state.resolver.resolve_all(&[&req.a, &req.b])?;
        let z = model.lab_noise(req.seed);
        walk(&model, &e[0], &e[1], req.steps, &z)?
            .iter()
            .map(|img| image_out(&model, img, req.scale).map_err(ApiError::from))
            .collect()
    })
    .await?;
    Ok(Json(FramesResponse {
        model: id,
        frames,
        elapsed_ms: t.elapsed().as_secs_f64() * 1e3,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ArithmeticRequest {
    expr: String,
    #[serde(default)]
    model: Option<String>,
    /// Zero noise when absent.
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default = "one")]
    scale: usize,
}

#[derive(Serialize)]
struct ArithmeticResponse {
    model: String,
    image: ImageOut,
    elapsed_ms: f64,
}

async fn arithmetic(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<ArithmeticResponse> {
    let req: ArithmeticRequest = parse_body(&body)?;
    let (id, model) = pick_model(&state, req.model.as_deref())?;
    check_scale(req.scale)?;
    let expr = parse_expr(&req.expr).map_err(|e| ApiError::bad_request(format!("field `expr`: {e}")))?;
    let t = Instant::now();
    let image = blocking(move || {
        let v = expr.resolve(&state.resolver)?;
        let z = model.lab_noise(req.seed);
        Ok(image_out(&model, &apply_expr(&v, &model, &z)?, req.scale)?)
    })
    .await?;
    Ok(Json(ArithmeticResponse {
        model: id,
        image,
        elapsed_ms: t.elapsed().as_secs_f64() * 1e3,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbedRequest {
    text: String,
}

async fn embed(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: EmbedRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    let Some(bridge) = state.resolver.bridge.clone() else {
        return ApiError::new(
            StatusCode::NOT_IMPLEMENTED,
            format!("no embedding bridge configured; set {}", crate::embeddings::BRIDGE_ENV),
        )
        .into_response();
    };
    match blocking(move || Ok(bridge.embed(&[&req.text])?.remove(0))).await {
        Ok(v) => Json(json!({ "embedding": v, "dim": EMBED_DIM })).into_response(),
        Err(e) => e.into_response(),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/models", get(models))
        .route("/generate", post(generate))
        .route("/interpolate", post(interpolate))
        .route("/arithmetic", post(arithmetic))
        .route("/embed", post(embed))
        .with_state(state)
}

/// Model id for a checkpoint path: its file stem.
pub fn model_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
}

/// Marks checkpoints as served for as long as it lives, so training refuses
/// to overwrite them.
pub struct ServingLocks(Vec<PathBuf>);

impl ServingLocks {
    pub fn acquire(checkpoints: &[PathBuf]) -> Result<Self> {
        let mut held = ServingLocks(Vec::new());
        for c in checkpoints {
            let lock = lock_path(c);
            std::fs::write(&lock, format!("{}\n", std::process::id())).map_err(|e| Error::io(&lock, e))?;
            held.0.push(lock);
        }
        Ok(held)
    }
}

impl Drop for ServingLocks {
    fn drop(&mut self) {
        for l in &self.0 {
            let _ = std::fs::remove_file(l);
        }
    }
}

pub fn load_state(checkpoints: &[PathBuf], embeddings: Option<&Path>) -> Result<AppState> {
    if checkpoints.is_empty() {
        return Err(Error::Usage("at least one checkpoint is required".into()));
    }
    let mut models = BTreeMap::new();
    for c in checkpoints {
        let id = model_id(c);
        if models.insert(id.clone(), load_checkpoint(c)?).is_some() {
            return Err(Error::Usage(format!("two checkpoints share the model id `{id}`")));
        }
    }
    let file = embeddings.map(EmbeddingsFile::load).transpose()?;
    Ok(AppState::new(models, Resolver::new(file, BridgeClient::from_env())))
}

/// Loads the checkpoints and serves until Ctrl-C.
pub fn serve_blocking(checkpoints: &[PathBuf], embeddings: Option<&Path>, addr: &str) -> Result<()> {
    let state = Arc::new(load_state(checkpoints, embeddings)?);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Usage(format!("cannot start runtime: {e}")))?;
    let _locks = ServingLocks::acquire(checkpoints)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::Usage(format!("cannot listen on {addr}: {e}")))?;
        println!("serving {} model(s) on http://{addr}", state.models.len());
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Error::Bridge(format!("server stopped: {e}")))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn locks_are_released_on_drop() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("m.ckpt");
        let lock = lock_path(&ckpt);
        {
            let _held = ServingLocks::acquire(std::slice::from_ref(&ckpt)).unwrap();
            assert!(lock.exists());
        }
        assert!(!lock.exists());
    }

    #[test]
    fn model_ids_are_file_stems() {
        assert_eq!(model_id(Path::new("/a/maps-cin-0123.ckpt")), "maps-cin-0123");
    }
}
