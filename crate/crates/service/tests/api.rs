use std::io::Cursor;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use image::{GrayImage, ImageFormat, RgbImage};
use parseid_core::eval::{rank_query, Protocol};
use parseid_core::query::TexturePresetTable;
use parseid_core::store::FeatureStore;
use parseid_core::synthetic::{render, DatasetSpec, Identity};
use parseid_core::{pair_score, EngineConfig, FeatureRecord};
use parseid_service::{router, AppState, Hit, SearchResponse};
use serde_json::Value;
use tower::ServiceExt;

const BOUNDARY: &str = "parseid-test-boundary";

fn png_rgb(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).unwrap();
    out.into_inner()
}

fn png_gray(w: u32, h: u32, labels: Vec<u8>) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    GrayImage::from_raw(w, h, labels).unwrap().write_to(&mut out, ImageFormat::Png).unwrap();
    out.into_inner()
}

/// Three figures identical except for shirt color.
fn figure(rgb: [u8; 3]) -> (Vec<u8>, Vec<u8>) {
    let mut identity = Identity::generate(0, 1);
    identity.upper = rgb;
    identity.upper_accent = rgb;
    let spec = DatasetSpec::default();
    let (img, labels) = render(&identity, 0, &spec, 5);
    (png_rgb(&img), png_gray(spec.width, spec.height, labels))
}

fn multipart(parts: &[(&str, &[u8])]) -> Body {
    let mut body = Vec::new();
    for (name, bytes) in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{name}.png\"\r\n\r\n").as_bytes());
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    Body::from(body)
}

struct Fixture {
    _dir: tempfile::TempDir,
    app: axum::Router,
    store: std::path::PathBuf,
}

async fn send(app: &axum::Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn upload(app: &axum::Router, parts: &[(&str, &[u8])]) -> (StatusCode, Value) {
    let req = Request::post("/api/images")
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(multipart(parts))
        .unwrap();
    let (status, body) = send(app, req).await;
    (status, serde_json::from_slice(&body).unwrap())
}

async fn get_json(app: &axum::Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post_json(app: &axum::Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (status, bytes) = send(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

/// A store holding red, green and blue shirted figures.
async fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let engine = EngineConfig::default();
    let store = FeatureStore::open_or_create(dir.path(), &engine.version()).unwrap();
    let state = AppState::new(store, engine, TexturePresetTable::builtin(), 50).unwrap();
    let app = router(Arc::new(state), None);
    for (id, rgb) in [("red", [220, 30, 30]), ("green", [30, 170, 40]), ("blue", [30, 50, 200])] {
        let (img, mask) = figure(rgb);
        let (status, body) = upload(&app, &[("image", &img), ("mask", &mask), ("image_id", id.as_bytes())]).await;
        assert_eq!(status, StatusCode::OK, "{body}");
    }
    Fixture { store: dir.path().to_path_buf(), _dir: dir, app }
}

#[tokio::test]
async fn upload_rules() {
    let f = fixture().await;
    let (img, mask) = figure([120, 120, 20]);
    let (status, body) = upload(&f.app, &[("image", &img), ("mask", &mask)]).await;
    assert_eq!(status, StatusCode::OK);
    let id = body["image_id"].as_str().unwrap().to_string();
    assert_eq!(id.len(), 16);

    let (status, _) = upload(&f.app, &[("image", &img), ("mask", &mask)]).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let small_mask = png_gray(10, 20, vec![5; 200]);
    let (status, body) = upload(&f.app, &[("image", &img), ("mask", &small_mask)]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let msg = body["error"].as_str().unwrap();
    assert!(msg.contains("64x128") && msg.contains("10x20"), "{msg}");

    let (status, _) = upload(&f.app, &[("image", &img), ("mask", b"junk")]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = upload(&f.app, &[("image", &img)]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    // persisted to disk
    let store = FeatureStore::open(&f.store).unwrap();
    assert_eq!(store.len(), 4);
    assert!(store.contains(&id));
}

#[tokio::test]
async fn search_by_example() {
    let f = fixture().await;
    let (status, body) = get_json(&f.app, "/api/search?image_id=red&k=10").await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    let hits = v["hits"].as_array().unwrap();
    assert_eq!(hits.len(), 2);
    let scores: Vec<f64> = hits.iter().map(|h| h["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    assert!(hits[0]["report"]["classes"]["upper_clothes"]["S_c"].is_number());

    assert_eq!(get_json(&f.app, "/api/search?image_id=nobody&k=3").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get_json(&f.app, "/api/search?image_id=red&k=0").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get_json(&f.app, "/api/search?image_id=red&k=51").await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn search_matches_library_byte_for_byte() {
    let f = fixture().await;
    let (_, body) = get_json(&f.app, "/api/search?image_id=green&k=2").await;

    let cfg = EngineConfig::default();
    let store = FeatureStore::open(&f.store).unwrap();
    let all = store.load_all().unwrap();
    let query = store.get("green").unwrap().unwrap();
    let gallery: Vec<FeatureRecord> = all.into_iter().filter(|r| r.image_id != "green").collect();
    let ranking = rank_query(&query, &gallery, Protocol { cross_camera: false }, &cfg.scoring);
    let hits: Vec<Hit> = ranking
        .ranked
        .iter()
        .take(2)
        .map(|it| {
            let g = gallery.iter().find(|g| g.image_id == it.image_id).unwrap();
            Hit {
                image_id: it.image_id.clone(),
                score: it.score,
                report: pair_score(&query, g, &cfg.scoring),
            }
        })
        .collect();
    let expected = serde_json::to_vec(&SearchResponse { query_id: "green".into(), hits }).unwrap();
    assert_eq!(String::from_utf8(body).unwrap(), String::from_utf8(expected).unwrap());
}

#[tokio::test]
async fn attribute_search() {
    let f = fixture().await;
    let (status, v) = post_json(
        &f.app,
        "/api/search/attributes",
        serde_json::json!({"entries": [{"class": "upper_clothes", "rgb": "#dc1e1e"}], "k": 3}),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["hits"][0]["image_id"], "red");
    assert_eq!(v["descriptor"]["classes"].as_object().unwrap().len(), 1);
    assert!(v["descriptor"]["classes"]["upper_clothes"]["color"]["L"]["bits"].is_string());

    let (status, v) = post_json(
        &f.app,
        "/api/search/attributes",
        serde_json::json!({"entries": [
            {"class": "pants", "rgb": "#000000"},
            {"class": "pants", "rgb": [1, 2, 3]}
        ], "k": 3}),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("pants"));

    let (status, v) = post_json(
        &f.app,
        "/api/search/attributes",
        serde_json::json!({"entries": [{"class": "pants", "rgb": "#000000", "texture_preset": "tweed"}]}),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let msg = v["error"].as_str().unwrap();
    for p in ["smooth", "fine_knit", "coarse"] {
        assert!(msg.contains(p), "{msg}");
    }

    let (status, _) = post_json(&f.app, "/api/search/attributes", serde_json::json!({"entries": [], "k": 3})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn features_endpoint() {
    let f = fixture().await;
    let (status, body) = get_json(&f.app, "/api/images/blue/features").await;
    assert_eq!(status, StatusCode::OK);
    let rec: FeatureRecord = serde_json::from_slice(&body).unwrap();
    assert_eq!(rec, FeatureStore::open(&f.store).unwrap().get("blue").unwrap().unwrap());
    assert_eq!(get_json(&f.app, "/api/images/nope/features").await.0, StatusCode::NOT_FOUND);

    let (status, body) = get_json(&f.app, "/api/presets").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(String::from_utf8(body).unwrap(), r#"["coarse","fine_knit","smooth"]"#);
}

#[test]
fn config_from_env_requires_store() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = parseid_service::ServiceConfig::new(dir.path());
    assert!(cfg.validate().is_ok());
    cfg.max_k = 0;
    assert!(cfg.validate().is_err());
    let missing = parseid_service::ServiceConfig::new(dir.path().join("absent"));
    assert!(missing.validate().is_err());
}
