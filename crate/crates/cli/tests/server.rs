mod common;

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::{run, s, small_corpus};
use http_body_util::BodyExt;
use serde_json::Value;
use smad_cli::server::{load_checked, router, AppState, API_SCHEMA};
use smad_core::features::FeatureSettings;
use tower::ServiceExt;

const BOUNDARY: &str = "smadtestboundary";

fn multipart(fields: &[(&str, Option<&str>, &[u8])]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, filename, data) in fields {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        match filename {
            Some(f) => body.extend_from_slice(
                format!(
                    "Content-Disposition: form-data; name=\"{name}\"; filename=\"{f}\"\r\n\
                     Content-Type: application/octet-stream\r\n\r\n"
                )
                .as_bytes(),
            ),
            None => body.extend_from_slice(
                format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes(),
            ),
        }
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (
        status,
        resp.into_body()
            .collect()
            .await
            .unwrap()
            .to_bytes()
            .to_vec(),
    )
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn analyze_req(uri: &str, body: Vec<u8>) -> Request<Body> {
    Request::post(uri)
        .header(
            "content-type",
            format!("multipart/form-data; boundary={BOUNDARY}"),
        )
        .body(Body::from(body))
        .unwrap()
}

/// Trains a small LBP81 model on the synthetic corpus.
fn fixture(dir: &Path) -> (Router, std::path::PathBuf, std::path::PathBuf) {
    let manifest = small_corpus(&dir.join("corpus"));
    let model = dir.join("models/lbp81.json");
    assert_eq!(
        run(&[
            "train",
            "--manifest",
            s(&manifest),
            "--method",
            "LBP81",
            "--out",
            s(&model),
            "--trees",
            "20"
        ]),
        0
    );
    let loaded = load_checked(&model).unwrap();
    let state = AppState::new(vec![loaded], FeatureSettings::default(), 4).unwrap();
    let face = dir.join("corpus/images/synth-ghost_0002.png");
    (router(Arc::new(state), 8 << 20), model, face)
}

/// Checks that every key a schema definition lists as required is present.
fn assert_required(def: &str, value: &Value) {
    let schema: Value = serde_json::from_str(API_SCHEMA).unwrap();
    let required = schema["$defs"][def]["required"].as_array().unwrap();
    for key in required {
        let key = key.as_str().unwrap();
        assert!(value.get(key).is_some(), "{def} lacks `{key}`: {value}");
    }
}

#[tokio::test]
async fn health_methods_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _, _) = fixture(dir.path());

    let (status, body) = send(&app, get("/v1/health")).await;
    assert_eq!(status, StatusCode::OK);
    let health: Value = serde_json::from_slice(&body).unwrap();
    assert_required("Health", &health);
    assert_eq!(health["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(health["models"][0]["method"], "LBP81");

    let (status, body) = send(&app, get("/v1/methods")).await;
    assert_eq!(status, StatusCode::OK);
    let methods: Vec<Value> = serde_json::from_slice(&body).unwrap();
    assert_eq!(methods.len(), 14);
    for m in &methods {
        assert_required("MethodInfo", m);
    }
    let lbp = methods.iter().find(|m| m["method"] == "LBP81").unwrap();
    assert_eq!(lbp["scored"], true);
    let fusion = methods
        .iter()
        .find(|m| m["method"] == "FUSION_LBP")
        .unwrap();
    assert_eq!(fusion["has_map"], false);

    let (status, body) = send(&app, get("/v1/schema")).await;
    assert_eq!(status, StatusCode::OK);
    assert!(serde_json::from_slice::<Value>(&body).unwrap()["$defs"].is_object());
}

#[tokio::test]
async fn analyze_returns_scores_and_fetchable_maps() {
    let dir = tempfile::tempdir().unwrap();
    let (app, model, face) = fixture(dir.path());
    let bytes = std::fs::read(&face).unwrap();
    let body = multipart(&[
        ("image", Some("face.png"), &bytes),
        ("methods", None, b"LBP81,ELA,SRM"),
    ]);
    let (status, raw) = send(&app, analyze_req("/v1/analyze", body)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&raw));
    let resp: Value = serde_json::from_slice(&raw).unwrap();
    assert_required("AnalyzeResponse", &resp);

    let scores = resp["scores"].as_array().unwrap();
    assert_eq!(scores.len(), 1);
    assert_required("ScoreEntry", &scores[0]);
    let score = scores[0]["score"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&score));
    assert!(!scores[0]["eer_threshold"].is_null());

    let trained = smad_core::classifier::load_model(&model).unwrap();
    let input = smad_core::dataset::load_face(&smad_core::SampleRecord {
        id: "x".into(),
        path: face.clone(),
        label: smad_core::Label::Morph,
        tool: smad_core::dataset::Tool::new("synth-ghost").unwrap(),
        source_db: smad_core::dataset::SourceDb::Frll,
        landmarks: None,
    })
    .unwrap();
    let config = smad_core::FeatureConfig::default();
    let v = smad_core::features::extract_tag(&input, &trained.method.clone().unwrap(), &config)
        .unwrap();
    assert_eq!(trained.predict(&v.values).unwrap(), score);

    let maps = resp["maps"].as_array().unwrap();
    let names: Vec<&str> = maps.iter().map(|m| m["method"].as_str().unwrap()).collect();
    assert_eq!(names, ["LBP81", "ELA", "SRM"]);
    for m in maps {
        assert_required("MapEntry", m);
        let (status, png) = send(&app, get(m["url"].as_str().unwrap())).await;
        assert_eq!(status, StatusCode::OK);
        let img = image::load_from_memory(&png).unwrap();
        assert_eq!(img.width() as u64, m["width"].as_u64().unwrap());
        assert_eq!(img.height() as u64, m["height"].as_u64().unwrap());
    }
    let (status, _) = send(&app, get(resp["face_url"].as_str().unwrap())).await;
    assert_eq!(status, StatusCode::OK);

    let body = multipart(&[("image", Some("face.png"), &bytes)]);
    let (status, raw) = send(&app, analyze_req("/v1/analyze?methods=HOG", body)).await;
    assert_eq!(status, StatusCode::OK);
    let resp: Value = serde_json::from_slice(&raw).unwrap();
    assert!(resp["scores"].as_array().unwrap().is_empty());
    assert_eq!(resp["maps"][0]["method"], "HOG");
}

#[tokio::test]
async fn bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _, face) = fixture(dir.path());

    let body = multipart(&[("image", Some("notes.txt"), b"definitely not pixels")]);
    let (status, raw) = send(&app, analyze_req("/v1/analyze", body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let err: Value = serde_json::from_slice(&raw).unwrap();
    assert_required("Error", &err);

    let body = multipart(&[("methods", None, b"ELA")]);
    let (status, _) = send(&app, analyze_req("/v1/analyze", body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let bytes = std::fs::read(face).unwrap();
    let body = multipart(&[
        ("image", Some("f.png"), &bytes),
        ("methods", None, b"ELA,NOPE"),
    ]);
    let (status, _) = send(&app, analyze_req("/v1/analyze", body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let req = Request::post("/v1/analyze")
        .header("content-type", "application/json")
        .body(Body::from("{}"))
        .unwrap();
    let (status, _) = send(&app, req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _) = send(&app, get("/v1/maps/deadbeef/ELA.png")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn map_store_is_bounded() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _, face) = fixture(dir.path());
    let bytes = std::fs::read(face).unwrap();
    let mut urls = Vec::new();
    for _ in 0..5 {
        let body = multipart(&[("image", Some("f.png"), &bytes), ("methods", None, b"RGB")]);
        let (_, raw) = send(&app, analyze_req("/v1/analyze", body)).await;
        let resp: Value = serde_json::from_slice(&raw).unwrap();
        urls.push(resp["maps"][0]["url"].as_str().unwrap().to_string());
    }
    assert_eq!(send(&app, get(&urls[0])).await.0, StatusCode::NOT_FOUND);
    assert_eq!(send(&app, get(&urls[4])).await.0, StatusCode::OK);
}

#[test]
fn startup_rejects_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model, _) = fixture(dir.path());
    let mut json: Value = serde_json::from_slice(&std::fs::read(&model).unwrap()).unwrap();
    json["method"] = Value::from("HOG");
    let bad = dir.path().join("models/relabelled.json");
    std::fs::write(&bad, serde_json::to_vec(&json).unwrap()).unwrap();
    let err = load_checked(&bad).err().expect("mismatch must fail");
    assert_eq!(err.code(), 2);
    assert!(err.message.contains("59"));
    assert_eq!(run(&["serve", "--model", s(&bad), "--port", "0"]), 2);
}

#[test]
fn port_in_use_exits_2() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    assert_eq!(run(&["serve", "--host", "127.0.0.1", "--port", &port]), 2);
}
