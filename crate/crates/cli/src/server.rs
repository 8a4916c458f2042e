//! The `/v1` HTTP analysis API.
//!
//! Models and filter banks are loaded once and shared read-only; each
//! request decodes, normalises and extracts on the blocking pool. Rendered
//! maps live in a bounded in-memory store keyed by analysis token.

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{DefaultBodyLimit, Multipart, Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use image::{DynamicImage, GrayImage, Luma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use smad_core::classifier::load_model;
use smad_core::dataset::{decode_image, preprocess_face_full, Preprocessed};
use smad_core::features::{extract_preprocessed, Extraction, FeatureSettings, VectorTag};
use smad_core::{FeatureConfig, FeatureMethodId, ForestModel, FACE_HEIGHT, FACE_WIDTH};

use crate::exit::{CliError, CliResult};
use crate::render::{encode_png, map_image};

/// JSON schema of every request and response body.
pub const API_SCHEMA: &str = include_str!("../../../api/smad-v1.schema.json");

pub struct LoadedModel {
    pub name: String,
    pub tag: VectorTag,
    pub model: ForestModel,
    pub config: FeatureConfig,
}

impl LoadedModel {
    fn methods(&self) -> &[FeatureMethodId] {
        match &self.tag {
            VectorTag::Single(m) => std::slice::from_ref(m),
            VectorTag::Fused(ms) => ms,
        }
    }
}

/// Loads a model and checks that its extractor still yields `feature_dim`
/// values.
pub fn load_checked(path: &Path) -> CliResult<LoadedModel> {
    let model = load_model(path).map_err(|e| CliError::from(e).context(path.display()))?;
    let tag = model.method.clone().ok_or_else(|| {
        CliError::data(format!(
            "{}: model does not record its feature method",
            path.display()
        ))
    })?;
    let settings = model.feature_settings.clone().unwrap_or_default();
    let config = FeatureConfig::from_settings(settings)
        .map_err(|e| CliError::from(e).context(path.display()))?;
    let probe = probe_face();
    let mut dim = 0;
    let methods: Vec<FeatureMethodId> = match &tag {
        VectorTag::Single(m) => vec![*m],
        VectorTag::Fused(ms) => ms.clone(),
    };
    for m in methods {
        dim += extract_preprocessed(&probe, m, &config)?.vector.dim();
    }
    if dim != model.feature_dim {
        return Err(CliError::data(format!(
            "{}: model expects {} features but {tag} extraction yields {dim}",
            path.display(),
            model.feature_dim
        )));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| tag.to_string());
    Ok(LoadedModel {
        name,
        tag,
        model,
        config,
    })
}

fn probe_face() -> Preprocessed {
    let img = GrayImage::from_fn(FACE_WIDTH, FACE_HEIGHT, |x, y| {
        Luma([((x * 7 + y * 3) % 256) as u8])
    });
    preprocess_face_full(&DynamicImage::ImageLuma8(img), None, "probe").expect("canonical probe")
}

/// Model files named on the command line plus `*.json` in `dir`, sorted.
pub fn collect_model_paths(files: &[PathBuf], dir: Option<&Path>) -> CliResult<Vec<PathBuf>> {
    let mut paths = files.to_vec();
    if let Some(dir) = dir {
        let entries = std::fs::read_dir(dir)
            .map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
        let mut found: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json") && !is_sidecar(p))
            .collect();
        found.sort();
        paths.extend(found);
    }
    Ok(paths)
}

fn is_sidecar(p: &Path) -> bool {
    p.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(".split.json"))
}

struct MapStore {
    capacity: usize,
    order: VecDeque<String>,
    entries: HashMap<String, HashMap<String, Arc<Vec<u8>>>>,
}

impl MapStore {
    fn insert(&mut self, token: String, files: HashMap<String, Arc<Vec<u8>>>) {
        while self.order.len() >= self.capacity.max(1) {
            if let Some(old) = self.order.pop_front() {
                self.entries.remove(&old);
            }
        }
        self.order.push_back(token.clone());
        self.entries.insert(token, files);
    }

    fn get(&self, token: &str, file: &str) -> Option<Arc<Vec<u8>>> {
        self.entries.get(token)?.get(file).cloned()
    }
}

pub struct AppState {
    models: Vec<LoadedModel>,
    render: FeatureConfig,
    maps: Mutex<MapStore>,
}

impl AppState {
    pub fn new(
        models: Vec<LoadedModel>,
        render: FeatureSettings,
        max_analyses: usize,
    ) -> CliResult<Self> {
        Ok(Self {
            models,
            render: FeatureConfig::from_settings(render)?,
            maps: Mutex::new(MapStore {
                capacity: max_analyses,
                order: VecDeque::new(),
                entries: HashMap::new(),
            }),
        })
    }
}

pub fn router(state: Arc<AppState>, max_upload: usize) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/methods", get(methods))
        .route("/v1/schema", get(schema))
        .route("/v1/analyze", post(analyze))
        .route("/v1/maps/{token}/{file}", get(map_file))
        .layer(DefaultBodyLimit::max(max_upload))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl ToString) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.to_string(),
        }
    }

    fn internal(message: impl ToString) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: message.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    let models: Vec<Value> = state
        .models
        .iter()
        .map(|m| {
            json!({
                "name": m.name,
                "method": m.tag.to_string(),
                "feature_dim": m.model.feature_dim,
                "trees": m.model.trees.len(),
                "has_operating_points": m.model.operating_points.is_some(),
            })
        })
        .collect();
    Json(json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "models": models,
    }))
}

fn method_config(m: FeatureMethodId, config: &FeatureConfig) -> Value {
    use FeatureMethodId as M;
    let s = &config.settings;
    let mut v = match m {
        M::Ela => json!({ "jpeg_quality": s.ela_quality }),
        M::Svd => json!({ "rank": s.svd_k }),
        M::Dct2 => json!({ "block": s.dct_block }),
        M::Srm => json!({ "kernels": s.srm_kernels.as_deref().unwrap_or("builtin") }),
        M::BsifIm | M::BsifH | M::BsifNh => json!({ "bank": config.bsif.source_id }),
        M::Lbp81 | M::Vlbp | M::Hlbp => json!({ "radius": 1, "neighbours": 8 }),
        _ => json!({}),
    };
    v["order"] = serde_json::to_value(s.order).expect("enum serializes");
    v
}

async fn methods(State(state): State<Arc<AppState>>) -> Json<Value> {
    let list: Vec<Value> = FeatureMethodId::ALL
        .iter()
        .map(|&m| {
            let models: Vec<&str> = state
                .models
                .iter()
                .filter(|lm| lm.tag == VectorTag::Single(m))
                .map(|lm| lm.name.as_str())
                .collect();
            json!({
                "method": m.name(),
                "has_map": m.has_map(),
                "config": method_config(m, &state.render),
                "scored": !models.is_empty(),
                "models": models,
            })
        })
        .collect();
    Json(Value::Array(list))
}

async fn schema() -> Response {
    (
        [(header::CONTENT_TYPE, "application/schema+json")],
        API_SCHEMA,
    )
        .into_response()
}

#[derive(Debug, Deserialize)]
struct AnalyzeQuery {
    methods: Option<String>,
}

fn parse_methods(list: &str) -> Result<Vec<FeatureMethodId>, ApiError> {
    let mut out = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let m: FeatureMethodId = part.parse().map_err(ApiError::bad_request)?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(ApiError::bad_request("empty method filter"));
    }
    Ok(out)
}

async fn analyze(
    State(state): State<Arc<AppState>>,
    Query(query): Query<AnalyzeQuery>,
    mut multipart: Multipart,
) -> Result<Json<Value>, ApiError> {
    let mut image: Option<Vec<u8>> = None;
    let mut filter = query.methods;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(format!("multipart: {e}")))?
    {
        match field.name() {
            Some("image") => {
                let bytes = field
                    .bytes()
                    .await
                    .map_err(|e| ApiError::bad_request(format!("multipart: {e}")))?;
                image = Some(bytes.to_vec());
            }
            Some("methods") => {
                filter = Some(
                    field
                        .text()
                        .await
                        .map_err(|e| ApiError::bad_request(format!("multipart: {e}")))?,
                );
            }
            _ => {}
        }
    }
    let image = image.ok_or_else(|| ApiError::bad_request("missing multipart field `image`"))?;
    let filter = filter.as_deref().map(parse_methods).transpose()?;
    let worker = Arc::clone(&state);
    let (body, token, files) =
        tokio::task::spawn_blocking(move || run_analysis(&worker, &image, filter))
            .await
            .map_err(ApiError::internal)??;
    state
        .maps
        .lock()
        .expect("map store lock")
        .insert(token, files);
    Ok(Json(body))
}

/// Per-request extraction memo keyed by the extractor cache key.
#[derive(Default)]
struct RequestCache {
    entries: Mutex<HashMap<String, Arc<Extraction>>>,
}

impl RequestCache {
    fn get(
        &self,
        input: &Preprocessed,
        m: FeatureMethodId,
        config: &FeatureConfig,
    ) -> smad_core::Result<Arc<Extraction>> {
        let key = config.cache_key(m);
        if let Some(e) = self.entries.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(e));
        }
        let e = Arc::new(extract_preprocessed(input, m, config)?);
        self.entries
            .lock()
            .expect("cache lock")
            .insert(key, Arc::clone(&e));
        Ok(e)
    }
}

fn threshold_json(t: f64) -> Value {
    if t == f64::INFINITY {
        json!("inf")
    } else if t == f64::NEG_INFINITY {
        json!("-inf")
    } else {
        json!(t)
    }
}

type Analysis = (Value, String, HashMap<String, Arc<Vec<u8>>>);
/// PNG bytes, display range, width, height.
type RenderedMap = (Vec<u8>, (f64, f64), u32, u32);

fn run_analysis(
    state: &AppState,
    bytes: &[u8],
    filter: Option<Vec<FeatureMethodId>>,
) -> Result<Analysis, ApiError> {
    let decoded = decode_image(bytes).map_err(ApiError::bad_request)?;
    let input = preprocess_face_full(&decoded, None, "upload").map_err(ApiError::bad_request)?;
    let token = uuid::Uuid::new_v4().simple().to_string();
    let sha = hex::encode(Sha256::digest(bytes));
    let wanted = |m: FeatureMethodId| filter.as_ref().is_none_or(|f| f.contains(&m));
    let map_methods: Vec<FeatureMethodId> = match &filter {
        Some(f) => f.clone(),
        None => FeatureMethodId::ALL.to_vec(),
    };
    let cache = RequestCache::default();

    let rendered: Vec<(FeatureMethodId, Result<RenderedMap, String>)> = map_methods
        .par_iter()
        .filter(|m| m.has_map())
        .map(|&m| {
            let out = cache
                .get(&input, m, &state.render)
                .map_err(|e| e.to_string())
                .and_then(|ex| {
                    let map = ex.map.as_ref().ok_or("extractor produced no map")?;
                    let png = encode_png(&map_image(map)).map_err(|e| e.to_string())?;
                    Ok((png, map.display_range, map.width, map.height))
                });
            (m, out)
        })
        .collect();

    let scored: Vec<(&LoadedModel, Result<f64, String>)> = state
        .models
        .par_iter()
        .filter(|lm| lm.methods().iter().all(|&m| wanted(m)))
        .map(|lm| {
            let score = (|| {
                let mut x = Vec::with_capacity(lm.model.feature_dim);
                for &m in lm.methods() {
                    x.extend_from_slice(&cache.get(&input, m, &lm.config)?.vector.values);
                }
                lm.model.predict(&x)
            })();
            (lm, score.map_err(|e| e.to_string()))
        })
        .collect();

    let mut files = HashMap::new();
    let face_png =
        encode_png(&DynamicImage::ImageLuma8(input.face.to_image())).map_err(ApiError::internal)?;
    files.insert("FACE.png".to_string(), Arc::new(face_png));

    let mut failures = Vec::new();
    let mut maps = Vec::new();
    for (m, out) in rendered {
        match out {
            Ok((png, range, w, h)) => {
                let file = format!("{}.png", m.name());
                maps.push(json!({
                    "method": m.name(),
                    "url": format!("/v1/maps/{token}/{file}"),
                    "display_range": [range.0, range.1],
                    "width": w,
                    "height": h,
                }));
                files.insert(file, Arc::new(png));
            }
            Err(reason) => failures.push(json!({ "method": m.name(), "reason": reason })),
        }
    }
    for m in &map_methods {
        if !m.has_map() {
            failures.push(json!({ "method": m.name(), "reason": "method has no per-pixel map" }));
        }
    }
    let mut scores = Vec::new();
    for (lm, out) in scored {
        match out {
            Ok(score) => {
                let ops = lm.model.operating_points;
                scores.push(json!({
                    "method": lm.tag.to_string(),
                    "model": lm.name,
                    "score": score,
                    "eer_threshold": ops.map(|o| threshold_json(o.eer_threshold)),
                    "bpcer10_threshold": ops.map(|o| threshold_json(o.bpcer10_threshold)),
                    "bpcer20_threshold": ops.map(|o| threshold_json(o.bpcer20_threshold)),
                }));
            }
            Err(reason) => failures.push(json!({ "method": lm.tag.to_string(), "reason": reason })),
        }
    }
    let body = json!({
        "id": token,
        "sha256": sha,
        "face_url": format!("/v1/maps/{token}/FACE.png"),
        "scores": scores,
        "maps": maps,
        "failures": failures,
    });
    Ok((body, token, files))
}

async fn map_file(
    State(state): State<Arc<AppState>>,
    UrlPath((token, file)): UrlPath<(String, String)>,
) -> Response {
    let found = state
        .maps
        .lock()
        .expect("map store lock")
        .get(&token, &file);
    match found {
        Some(png) => ([(header::CONTENT_TYPE, "image/png")], png.as_ref().clone()).into_response(),
        None => ApiError {
            status: StatusCode::NOT_FOUND,
            message: format!("no map `{file}` for analysis `{token}`"),
        }
        .into_response(),
    }
}

/// Address line printed once the listener is bound.
#[derive(Debug, Serialize)]
struct Listening {
    listening: String,
    models: usize,
}

/// Binds and serves until interrupted.
pub fn serve(state: AppState, host: &str, port: u16, max_upload: usize) -> CliResult {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::internal)?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| CliError::data(format!("cannot bind {host}:{port}: {e}")))?;
        let addr = listener.local_addr().map_err(CliError::internal)?;
        let n = state.models.len();
        println!(
            "{}",
            serde_json::to_string(&Listening {
                listening: format!("http://{addr}"),
                models: n,
            })?
        );
        log::info!("serving /v1 on http://{addr} with {n} model(s)");
        axum::serve(listener, router(Arc::new(state), max_upload))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(CliError::internal)
    })
}
