#![allow(dead_code)]

use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use tonelut_cli::service::{
    router, AdjustResponse, ApiError, AppState, HealthResponse, SimilarityResponse, TextsResponse,
};
use tonelut_cli::{sha256_hex, LoadedModel};
use tonelut_core::corpus::generate;
use tonelut_core::embed::{EmbeddingProvider, EmbeddingStore, ANCHOR_TEXT};
use tonelut_core::formats::{
    decode_image, encode_png, parse_cube, save_checkpoint, write_embedding_store, Checkpoint,
};
use tonelut_core::image::ImageBuffer;
use tonelut_core::lut::lookup;
use tonelut_core::network::{forward, forward_base, ModulationConfig};
use tonelut_core::train::{build_toy_bundle, train_loop, BundleOptions, TrainConfig, TrainCorpus};

pub const FIXTURE_SEED: u64 = 11;
pub const FIXTURE_STEPS: u64 = 40;
/// Cube text prints six decimals; half a unit in the last place.
pub const LUT_EXPORT_TOL: f64 = 5e-7;
/// One 8-bit quantization step.
pub const QUANT_TOL: f64 = 1.0 / 255.0;
/// Store key holding the toy embedding of [`probe_image`].
pub const STORED_IMAGE_KEY: &str = "img:probe";

/// A briefly trained toy checkpoint, written to `dir/model.ckpt`.
pub fn trained_checkpoint(dir: &Path) -> PathBuf {
    let bundle = build_toy_bundle::<f64>(&BundleOptions::default(), FIXTURE_SEED).unwrap();
    let corpus = TrainCorpus::new(generate(6, 24, 24, 3).unwrap(), vec!["red photo".into()]).unwrap();
    let cfg = TrainConfig {
        steps: FIXTURE_STEPS,
        seed: FIXTURE_SEED,
        ..TrainConfig::default()
    };
    let (trained, _) = train_loop(corpus, &cfg, bundle).unwrap();
    let path = dir.join("model.ckpt");
    save_checkpoint(&Checkpoint::from_bundle(trained, Value::Null), &path).unwrap();
    path
}

pub fn probe_image() -> ImageBuffer<f64> {
    generate(1, 20, 14, 5).unwrap().remove(0)
}

/// Toy embeddings of every lexicon text plus one stored image, as JSONL.
pub fn toy_store_file(dir: &Path) -> PathBuf {
    let toy = EmbeddingProvider::<f64>::toy();
    let mut store = EmbeddingStore::<f64>::new(Some("toy".into()), Some(toy.dim()));
    for text in toy.texts() {
        store.insert(text.clone(), toy.embed_text(&text).unwrap().as_slice().to_vec()).unwrap();
    }
    let image = toy.embed_image(&quantized(&probe_image())).unwrap();
    store.insert(STORED_IMAGE_KEY.into(), image.as_slice().to_vec()).unwrap();
    let path = dir.join("embeddings.jsonl");
    write_embedding_store(&store, &path).unwrap();
    path
}

/// The image as the service sees it after a PNG roundtrip.
pub fn quantized(image: &ImageBuffer<f64>) -> ImageBuffer<f64> {
    decode_image(&encode_png(image).unwrap()).unwrap()
}

pub fn png_b64(image: &ImageBuffer<f64>) -> String {
    STANDARD.encode(encode_png(image).unwrap())
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub checkpoint: PathBuf,
    pub store: PathBuf,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let checkpoint = trained_checkpoint(dir.path());
        let store = toy_store_file(dir.path());
        Self { dir, checkpoint, store }
    }

    pub fn model(&self, store: bool) -> LoadedModel {
        LoadedModel::load(&self.checkpoint, store.then_some(self.store.as_path())).unwrap()
    }

    pub fn app(&self, store: bool, max_dim: usize) -> Router {
        router(AppState::new(self.model(store), max_dim), None)
    }
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: axum::http::HeaderMap,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json<T: serde::de::DeserializeOwned>(&self) -> T {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    pub fn error_code(&self) -> String {
        self.json::<ApiError>().code
    }
}

pub async fn send(app: &Router, method: &str, path: &str, body: Option<String>) -> Reply {
    let mut req = Request::builder().method(method).uri(path);
    if body.is_some() {
        req = req.header(header::CONTENT_TYPE, "application/json");
    }
    let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, body }
}

pub async fn post(app: &Router, path: &str, body: Value) -> Reply {
    send(app, "POST", path, Some(body.to_string())).await
}

pub fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

pub type Check = Result<(), String>;

pub async fn check_health(f: &Fixture) -> Check {
    let app = f.app(false, 2048);
    let r = send(&app, "GET", "/health", None).await;
    ensure(r.status == StatusCode::OK, format!("status {}", r.status))?;
    let h: HealthResponse = r.json();
    let sha = sha256_hex(&std::fs::read(&f.checkpoint).unwrap());
    ensure(h.status == "ok", "status field")?;
    ensure(h.checkpoint_sha256 == sha, "checkpoint hash")?;
    ensure(h.mode == "toy", format!("mode {}", h.mode))?;
    ensure(h.grid_size == 17 && h.num_basis == 3 && h.embed_dim == 30, format!("{h:?}"))?;
    ensure(h.adjust_available, "adjust_available")?;
    let t: TextsResponse = send(&app, "GET", "/texts", None).await.json();
    ensure(
        t.texts.iter().any(|s| s == "red photo") && t.texts.iter().any(|s| s == ANCHOR_TEXT),
        "lexicon listing",
    )
}

/// `s = 0` reproduces the unmodulated backbone; `s = 1` matches a direct
/// forward pass; repeated requests are byte-identical.
pub async fn check_adjust(f: &Fixture) -> Check {
    let app = f.app(false, 2048);
    let model = f.model(false);
    let input = quantized(&probe_image());
    let b64 = png_b64(&input);

    let r = post(&app, "/adjust", json!({ "image": b64, "text": "red photo", "s": 0.0 })).await;
    ensure(r.status == StatusCode::OK, format!("s=0 status {}", r.status))?;
    let got: AdjustResponse = r.json();
    let base = quantized(&forward_base(&model.bundle, &input).unwrap());
    let out = decode_image::<f64>(&STANDARD.decode(&got.image).unwrap()).unwrap();
    ensure(out == base, "s=0 output differs from the unmodulated backbone")?;

    let body = json!({ "image": b64, "text": "red photo", "s": 1.0 });
    let a = post(&app, "/adjust", body.clone()).await;
    let b = post(&app, "/adjust", body).await;
    ensure(a.status == StatusCode::OK, format!("s=1 status {}", a.status))?;
    ensure(a.body == b.body, "repeated requests differ")?;
    let got: AdjustResponse = a.json();
    let target = model.target("red photo").unwrap();
    let direct = forward(&model.bundle, &input, &target, &ModulationConfig { s: 1.0 }).unwrap();
    ensure(got.diagnostics.weights == direct.weights.0, "weights differ from a direct forward pass")?;
    let out = decode_image::<f64>(&STANDARD.decode(&got.image).unwrap()).unwrap();
    ensure(out == quantized(&direct.image), "image differs from a direct forward pass")?;
    ensure(
        got.diagnostics.min_interval.iter().all(|&m| m > 0.0),
        "non-positive knot interval",
    )?;

    // Data-URL prefixes are accepted and the default strength is 1.
    let r = post(
        &app,
        "/adjust",
        json!({ "image": format!("data:image/png;base64,{b64}"), "text": "red" }),
    )
    .await;
    ensure(r.status == StatusCode::OK, "data URL")?;
    ensure(r.json::<AdjustResponse>().image == got.image, "default strength is not 1")
}

pub async fn check_similarity(f: &Fixture) -> Check {
    let app = f.app(false, 2048);
    let b64 = png_b64(&probe_image());
    let r = post(&app, "/similarity", json!({ "image": b64, "text": ANCHOR_TEXT })).await;
    ensure(r.status == StatusCode::OK, format!("status {}", r.status))?;
    let s: SimilarityResponse = r.json();
    ensure(s.relative_similarity == 0.5, format!("anchor vs itself {}", s.relative_similarity))?;
    ensure(s.anchor == ANCHOR_TEXT, "anchor text")?;

    let red = ImageBuffer::constant(8, 8, [0.85, 0.12, 0.12]).unwrap();
    let r = post(&app, "/similarity", json!({ "image": png_b64(&red), "text": "red photo" })).await;
    let s: SimilarityResponse = r.json();
    ensure(
        s.relative_similarity > 0.5 && s.relative_similarity < 1.0,
        format!("red swatch vs red photo {}", s.relative_similarity),
    )
}

pub async fn check_lut(f: &Fixture) -> Check {
    let app = f.app(false, 2048);
    let model = f.model(false);
    let input = quantized(&probe_image());
    let r = post(&app, "/lut", json!({ "image": png_b64(&input), "text": "red photo", "s": 1.0 })).await;
    ensure(r.status == StatusCode::OK, format!("status {}", r.status))?;
    let disposition = r.headers.get(header::CONTENT_DISPOSITION).map(|v| v.to_str().unwrap().to_string());
    ensure(
        disposition.as_deref().is_some_and(|d| d.contains(".cube")),
        "content-disposition",
    )?;
    let text = String::from_utf8(r.body).unwrap();
    let (lut, coords) = parse_cube::<f64>(&text).map_err(|e| e.to_string())?.into_parts().unwrap();
    ensure(lut.size() == 17, "cube size")?;
    let applied = lookup(&lut, &coords, &input).unwrap();
    let direct = model.adjust(&input, "red photo", 1.0).unwrap().image;
    let diff = applied.max_abs_diff(&direct).unwrap();
    ensure(diff <= LUT_EXPORT_TOL, format!("exported LUT off by {diff:e}"))?;

    let r = post(&app, "/lut", json!({ "text": "red photo" })).await;
    ensure(r.status == StatusCode::OK, "LUT without an image")?;
    ensure(parse_cube::<f64>(std::str::from_utf8(&r.body).unwrap()).is_ok(), "imageless cube")
}

pub async fn check_errors(f: &Fixture) -> Check {
    let app = f.app(false, 2048);
    let b64 = png_b64(&probe_image());
    for path in ["/adjust", "/lut", "/similarity"] {
        let r = post(&app, path, json!({ "image": b64, "text": "plaid photo" })).await;
        ensure(r.status == StatusCode::NOT_FOUND, format!("{path} unknown text status {}", r.status))?;
        ensure(r.error_code() == "unknown_text", format!("{path} code"))?;
    }

    // The header says 3000 x 1; rejected before decoding.
    let wide = ImageBuffer::constant(3000, 1, [0.5; 3]).unwrap();
    let r = post(&app, "/adjust", json!({ "image": png_b64(&wide), "text": "red photo" })).await;
    ensure(r.status == StatusCode::PAYLOAD_TOO_LARGE, format!("oversize status {}", r.status))?;
    ensure(r.error_code() == "image_too_large", "oversize code")?;
    let small = f.app(false, 16);
    let r = post(&small, "/similarity", json!({ "image": b64, "text": "red photo" })).await;
    ensure(r.status == StatusCode::PAYLOAD_TOO_LARGE, "max_dim 16")?;

    let cases = [
        ("/adjust", "{not json".to_string(), "malformed_request"),
        ("/adjust", json!({ "text": "red photo" }).to_string(), "malformed_request"),
        ("/adjust", json!({ "image": b64, "text": "red", "extra": 1 }).to_string(), "malformed_request"),
        ("/adjust", json!({ "image": "%%%", "text": "red" }).to_string(), "invalid_image"),
        ("/adjust", json!({ "image": STANDARD.encode(b"not an image"), "text": "red" }).to_string(), "invalid_image"),
        ("/similarity", json!({ "text": "red" }).to_string(), "malformed_request"),
        (
            "/similarity",
            json!({ "text": "red", "image": b64, "image_key": "x" }).to_string(),
            "malformed_request",
        ),
        ("/similarity", json!({ "text": "red", "image_key": "x" }).to_string(), "unsupported"),
    ];
    for (path, body, code) in cases {
        let r = send(&app, "POST", path, Some(body.clone())).await;
        ensure(r.status == StatusCode::BAD_REQUEST, format!("{path} {body:.60}: status {}", r.status))?;
        ensure(r.error_code() == code, format!("{path} {body:.60}: code {}", r.error_code()))?;
    }
    let r = send(&app, "GET", "/nope", None).await;
    ensure(r.status == StatusCode::NOT_FOUND, "unknown route")
}

/// File-store mode: texts and images resolve through stored keys.
pub async fn check_file_store(f: &Fixture) -> Check {
    let app = f.app(true, 2048);
    let h: HealthResponse = send(&app, "GET", "/health", None).await.json();
    ensure(h.mode == "file-store", format!("mode {}", h.mode))?;
    ensure(h.adjust_available, "store dim matches the adapter")?;

    let r = post(&app, "/similarity", json!({ "image_key": STORED_IMAGE_KEY, "text": "red photo" })).await;
    ensure(r.status == StatusCode::OK, format!("image_key status {}", r.status))?;
    let stored: SimilarityResponse = r.json();
    let toy: SimilarityResponse = post(
        &f.app(false, 2048),
        "/similarity",
        json!({ "image": png_b64(&probe_image()), "text": "red photo" }),
    )
    .await
    .json();
    let d = (stored.relative_similarity - toy.relative_similarity).abs();
    ensure(d < 1e-12, format!("store vs toy similarity differ by {d:e}"))?;

    let r = post(&app, "/similarity", json!({ "image_key": "img:missing", "text": "red photo" })).await;
    ensure(r.status == StatusCode::NOT_FOUND && r.error_code() == "unknown_key", "missing key")?;
    let r = post(&app, "/similarity", json!({ "image": png_b64(&probe_image()), "text": "red photo" })).await;
    ensure(r.status == StatusCode::BAD_REQUEST && r.error_code() == "unsupported", "store cannot embed images")?;
    let r = post(&app, "/adjust", json!({ "image": png_b64(&probe_image()), "text": "red" })).await;
    ensure(r.status == StatusCode::OK, format!("adjust in file-store mode {}", r.status))
}

pub async fn service_contract() -> Vec<(&'static str, Check)> {
    let f = Fixture::new();
    vec![
        ("health and texts", check_health(&f).await),
        ("adjust", check_adjust(&f).await),
        ("similarity", check_similarity(&f).await),
        ("lut export", check_lut(&f).await),
        ("error mapping", check_errors(&f).await),
        ("file-store mode", check_file_store(&f).await),
    ]
}
