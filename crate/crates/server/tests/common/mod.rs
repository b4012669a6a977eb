#![allow(dead_code)]

use std::path::Path;

use aitchview_core::dataset::{
    generate_synthetic, two_regions_preset, write_dataset, write_placeholder_image, Region,
    RegionShape,
};
use aitchview_server::{router, AppState};
use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

/// A 60x40 two-region dataset (24 spots, split at x = 30) in `dir`.
pub fn write_small_fixture(dir: &Path, seed: u64) {
    let mut spec = two_regions_preset(seed);
    spec.width = 60;
    spec.height = 40;
    spec.regions = vec![
        Region {
            shape: RegionShape::HalfPlane { normal: [1.0, 0.0], offset: 30.0 },
            concentration: vec![50.0, 1.0, 1.0, 1.0, 1.0, 1.0],
        },
        Region {
            shape: RegionShape::HalfPlane { normal: [-1.0, 0.0], offset: -30.0 },
            concentration: vec![1.0, 1.0, 1.0, 1.0, 1.0, 50.0],
        },
    ];
    let (ds, _) = generate_synthetic(&spec).unwrap();
    write_placeholder_image(&dir.join(&spec.image_path), spec.width, spec.height).unwrap();
    write_dataset(&ds, dir).unwrap();
}

pub fn app(dir: &Path) -> Router {
    router(AppState::new(dir), None)
}

pub async fn send(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn send_json(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = send(app, method, uri, body).await;
    let v = serde_json::from_slice(&bytes)
        .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into_owned()));
    (status, v)
}

/// Loads `manifest.json` from the app's data dir and opens a session.
pub async fn load_and_open(app: &Router) -> (String, String) {
    let (s, v) = send_json(app, Method::POST, "/datasets", Some(serde_json::json!({"manifest_path": "manifest.json"}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let ds = v["dataset_id"].as_str().unwrap().to_owned();
    let (s, v) = send_json(app, Method::POST, "/sessions", Some(serde_json::json!({"dataset_id": ds}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    (ds, v["session_id"].as_str().unwrap().to_owned())
}
