//! JSON-over-HTTP inference service.
//!
//! | method | path          | body                                   |
//! |--------|---------------|----------------------------------------|
//! | GET    | `/health`     |                                        |
//! | GET    | `/texts`      |                                        |
//! | POST   | `/adjust`     | `{image, text, s}`                     |
//! | POST   | `/lut`        | `{text, s, image?}`                    |
//! | POST   | `/similarity` | `{text, image}` or `{text, image_key}` |
//!
//! Images travel as base64 PNG (a `data:` URL prefix is accepted). Errors are
//! `{code, message}` with status 400, 404 or 413.

use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::Uri;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use tonelut_core::embed::{relative_similarity, ANCHOR_TEXT};
use tonelut_core::formats::{decode_image, encode_png, image_dimensions};
use tonelut_core::image::ImageBuffer;
use tonelut_core::Error;

use crate::{cube_text, cube_title, LoadedModel};

pub const DEFAULT_MAX_IMAGE_DIM: usize = 2048;
/// Request body cap; a 2048 x 2048 PNG of noise is about 12 MiB, 16 MiB in base64.
pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub checkpoint: PathBuf,
    /// Embedding store for file-store mode; toy mode when absent.
    pub embeddings: Option<PathBuf>,
    pub max_image_dim: usize,
    /// Directory served at `/` (e.g. a built studio UI).
    pub static_dir: Option<PathBuf>,
}

struct Shared {
    model: LoadedModel,
    max_image_dim: usize,
}

/// Immutable model snapshot shared by all handlers.
#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(model: LoadedModel, max_image_dim: usize) -> Self {
        Self(Arc::new(Shared { model, max_image_dim }))
    }

    pub fn model(&self) -> &LoadedModel {
        &self.0.model
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.to_string(),
            message: message.into(),
        }
    }

    fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::UnknownText { .. } => Self::new(StatusCode::NOT_FOUND, "unknown_text", message),
            Error::NotFound(_) => Self::new(StatusCode::NOT_FOUND, "unknown_key", message),
            Error::Format(_) | Error::Parse { .. } => Self::bad_request("invalid_image", message),
            Error::Config(_) => Self::bad_request("unsupported", message),
            Error::Io { .. } | Error::Training { .. } | Error::Version(_) => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
            }
            _ => Self::bad_request("invalid_request", message),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        if r.status() == StatusCode::PAYLOAD_TOO_LARGE {
            Self::new(StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large", r.body_text())
        } else {
            Self::bad_request("malformed_request", r.body_text())
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn default_strength() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjustRequest {
    pub image: String,
    pub text: String,
    #[serde(default = "default_strength")]
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Predicted basis-LUT weights.
    pub weights: Vec<f64>,
    /// Sampling coordinates per channel, red first.
    pub coords: [Vec<f64>; 3],
    /// Smallest knot interval per channel.
    pub min_interval: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustResponse {
    pub image: String,
    pub text: String,
    pub s: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LutRequest {
    pub text: String,
    #[serde(default = "default_strength")]
    pub s: f64,
    #[serde(default)]
    pub image: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilarityRequest {
    pub text: String,
    #[serde(default)]
    pub image: Option<String>,
    /// Stored image embedding key (file-store mode).
    #[serde(default)]
    pub image_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityResponse {
    pub text: String,
    pub anchor: String,
    pub relative_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub checkpoint_sha256: String,
    pub mode: String,
    pub grid_size: usize,
    pub num_basis: usize,
    pub embed_dim: usize,
    /// False when the embedding store's dim does not match the adapter.
    pub adjust_available: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextsResponse {
    pub texts: Vec<String>,
}

fn decode_request_image(b64: &str, max_dim: usize) -> ApiResult<ImageBuffer<f64>> {
    let payload = match b64.split_once(";base64,") {
        Some((prefix, rest)) if prefix.starts_with("data:") => rest,
        _ => b64,
    };
    let bytes = STANDARD
        .decode(payload.trim())
        .map_err(|e| ApiError::bad_request("invalid_image", format!("image is not valid base64: {e}")))?;
    let (w, h) = image_dimensions(&bytes)?;
    if w > max_dim || h > max_dim {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "image_too_large",
            format!("image is {w}x{h}; the maximum dimension is {max_dim}"),
        ));
    }
    Ok(decode_image(&bytes)?)
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn health(State(state): State<AppState>) -> Json<HealthResponse> {
    let m = state.model();
    Json(HealthResponse {
        status: "ok".into(),
        checkpoint_sha256: m.checkpoint_sha256.clone(),
        mode: m.provider.mode().into(),
        grid_size: m.bundle.grid_size(),
        num_basis: m.bundle.bank.len(),
        embed_dim: m.bundle.adapter.embed_dim(),
        adjust_available: m.can_adjust(),
    })
}

async fn texts(State(state): State<AppState>) -> Json<TextsResponse> {
    Json(TextsResponse {
        texts: state.model().provider.texts(),
    })
}

async fn adjust(
    State(state): State<AppState>,
    body: std::result::Result<Json<AdjustRequest>, JsonRejection>,
) -> ApiResult<Json<AdjustResponse>> {
    let Json(req) = body?;
    blocking(move || {
        let image = decode_request_image(&req.image, state.0.max_image_dim)?;
        let out = state.model().adjust(&image, &req.text, req.s)?;
        let min_interval = std::array::from_fn(|c| {
            out.coords.axis(c).windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
        });
        Ok(Json(AdjustResponse {
            image: STANDARD.encode(encode_png(&out.image)?),
            text: req.text,
            s: req.s,
            diagnostics: Diagnostics {
                weights: out.weights.0,
                coords: out.coords.axes().clone(),
                min_interval,
            },
        }))
    })
    .await
}

async fn lut(
    State(state): State<AppState>,
    body: std::result::Result<Json<LutRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    blocking(move || {
        // Without an image, the LUT is predicted for a mid-gray frame.
        let image = match &req.image {
            Some(b64) => decode_request_image(b64, state.0.max_image_dim)?,
            None => ImageBuffer::constant(1, 1, [0.5; 3])?,
        };
        let out = state.model().adjust(&image, &req.text, req.s)?;
        let text = cube_text(&out, &cube_title(&req.text, req.s))?;
        Ok((
            [
                (header::CONTENT_TYPE, "text/plain; charset=utf-8"),
                (header::CONTENT_DISPOSITION, "attachment; filename=\"adjustment.cube\""),
            ],
            text,
        )
            .into_response())
    })
    .await
}

async fn similarity(
    State(state): State<AppState>,
    body: std::result::Result<Json<SimilarityRequest>, JsonRejection>,
) -> ApiResult<Json<SimilarityResponse>> {
    let Json(req) = body?;
    blocking(move || {
        let provider = &state.model().provider;
        let e_image = match (&req.image, &req.image_key) {
            (Some(b64), None) => provider.embed_image(&decode_request_image(b64, state.0.max_image_dim)?)?,
            (None, Some(key)) => provider.embed_key(key)?,
            _ => {
                return Err(ApiError::bad_request(
                    "malformed_request",
                    "give exactly one of `image` and `image_key`",
                ))
            }
        };
        let target = provider.embed_text(&req.text)?;
        let anchor = provider.embed_text(ANCHOR_TEXT)?;
        Ok(Json(SimilarityResponse {
            relative_similarity: relative_similarity(&e_image, &target, &anchor)?,
            text: req.text,
            anchor: ANCHOR_TEXT.into(),
        }))
    })
    .await
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/texts", get(texts))
        .route("/adjust", post(adjust))
        .route("/lut", post(lut))
        .route("/similarity", post(similarity))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state);
    match static_dir {
        Some(dir) => {
            let dir = Arc::new(dir);
            api.fallback(move |uri: Uri| static_file(dir.clone(), uri))
        }
        None => api,
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" | "htm" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript; charset=utf-8",
        "css" => "text/css; charset=utf-8",
        "json" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "ico" => "image/x-icon",
        "wasm" => "application/wasm",
        "txt" => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

/// GET-only static files under `dir`; `/` maps to `index.html` and any path
/// with a non-normal component is refused.
async fn static_file(dir: Arc<PathBuf>, uri: Uri) -> Response {
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() || rel.ends_with('/') {
        format!("{rel}index.html")
    } else {
        rel.to_string()
    };
    let rel = Path::new(&rel);
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return StatusCode::NOT_FOUND.into_response();
    }
    let path = dir.join(rel);
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

/// Loads the model, binds, reports the bound address, then serves until
/// Ctrl-C.
pub async fn serve(cfg: ServiceConfig, on_bound: impl FnOnce(SocketAddr)) -> tonelut_core::Result<()> {
    let model = LoadedModel::load(&cfg.checkpoint, cfg.embeddings.as_deref())?;
    let app = router(AppState::new(model, cfg.max_image_dim), cfg.static_dir);
    let addr = format!("{}:{}", cfg.host, cfg.port);
    let io = |e| Error::Io {
        path: PathBuf::from(&addr),
        source: e,
    };
    let listener = TcpListener::bind(&addr).await.map_err(io)?;
    on_bound(listener.local_addr().map_err(io)?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(io)
}
