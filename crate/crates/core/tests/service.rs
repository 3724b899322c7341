mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use base64::Engine;
use common::*;
use fundus_curator::agreement::AgreementReport;
use fundus_curator::config::CuratorConfig;
use fundus_curator::io;
use fundus_curator::manifest::DatasetManifest;
use fundus_curator::pipeline::{agreement_for_image, cmd_agree};
use fundus_curator::service::{router, AnnotatorProfile, ImageListing, MaskRle, ServiceSettings, Store, ANNOTATOR_HEADER};
use fundus_curator::{LesionType, Mask};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    _dir: tempfile::TempDir,
    manifest: std::path::PathBuf,
    app: Router,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(dir.path(), &small_corpus(6, 48, 20));
    let app = app_for(&manifest);
    Fixture { _dir: dir, manifest, app }
}

fn app_for(manifest: &std::path::Path) -> Router {
    let store = Store::open(manifest, ServiceSettings::from(&CuratorConfig::default())).unwrap();
    router(Arc::new(store))
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, body)
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post_json(uri: &str, annotator: Option<&str>, body: Value) -> Request<Body> {
    let mut b = Request::post(uri).header(header::CONTENT_TYPE, "application/json");
    if let Some(a) = annotator {
        b = b.header(ANNOTATOR_HEADER, a);
    }
    b.body(Body::from(body.to_string())).unwrap()
}

async fn register(app: &Router, id: &str, expertise: f64) {
    let (s, _, _) = send(
        app,
        post_json("/annotators", None, json!({"annotator_id": id, "display_name": id, "expertise": expertise})),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED);
}

fn png_b64(m: &Mask) -> String {
    base64::engine::general_purpose::STANDARD.encode(io::mask_to_png(m).unwrap())
}

#[tokio::test]
async fn lists_images_sorted_with_predictions() {
    let f = fixture();
    let (s, _, body) = send(&f.app, get("/images")).await;
    assert_eq!(s, StatusCode::OK);
    let list: Vec<ImageListing> = serde_json::from_slice(&body).unwrap();
    let ids: Vec<_> = list.iter().map(|l| l.id.as_str()).collect();
    assert_eq!(ids, ["img000", "img001", "img002", "img003", "img004", "img005"]);
    assert_eq!(list[0].predictions, [LesionType::EX, LesionType::HA, LesionType::SE]);
    assert_eq!(list[0].annotations, 4);
    assert!(list[5].predictions.is_empty());
}

#[tokio::test]
async fn enhanced_png_and_etag() {
    let f = fixture();
    let (s, h, body) = send(&f.app, get("/images/img000/enhanced")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(h[header::CONTENT_TYPE], "image/png");
    let img = io::decode_image(&body, std::path::Path::new("x")).unwrap();
    assert!(img.width() <= 48 && img.width() > 30);
    let tag = h[header::ETAG].to_str().unwrap().to_string();

    // stable across calls and across a fresh store
    let (_, h2, body2) = send(&f.app, get("/images/img000/enhanced")).await;
    assert_eq!(h2[header::ETAG], tag.as_str());
    assert_eq!(body2, body);
    let (_, h3, _) = send(&app_for(&f.manifest), get("/images/img000/enhanced")).await;
    assert_eq!(h3[header::ETAG], tag.as_str());

    let req = Request::get("/images/img000/enhanced")
        .header(header::IF_NONE_MATCH, &tag)
        .body(Body::empty())
        .unwrap();
    let (s, h, body) = send(&f.app, req).await;
    assert_eq!(s, StatusCode::NOT_MODIFIED);
    assert!(body.is_empty());
    assert_eq!(h[header::ETAG], tag.as_str());

    let (s, _, body) = send(&f.app, get("/images/nope/enhanced")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let err: Value = serde_json::from_slice(&body).unwrap();
    assert!(err["error"].as_str().unwrap().contains("nope"));
}

#[tokio::test]
async fn suggestions() {
    let f = fixture();
    let (s, h, body) = send(&f.app, get("/images/img001/suggestions/SE")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(h[header::CONTENT_TYPE], "image/png");
    // SE masks pass through unchanged
    let m = Mask::from_gray(&io::decode_image(&body, std::path::Path::new("x")).unwrap()).unwrap();
    assert_eq!(m, rect(48, 48, 12, 12, 24, 24));

    let (s, _, body) = send(&f.app, get("/images/img000/suggestions/EX")).await;
    assert_eq!(s, StatusCode::OK);
    let ex = Mask::from_gray(&io::decode_image(&body, std::path::Path::new("x")).unwrap()).unwrap();
    assert!(ex.is_subset_of(&rect(48, 48, 12, 12, 24, 24)));

    assert_eq!(send(&f.app, get("/images/img005/suggestions/EX")).await.0, StatusCode::CONFLICT);
    assert_eq!(send(&f.app, get("/images/img000/suggestions/MA")).await.0, StatusCode::CONFLICT);
    assert_eq!(send(&f.app, get("/images/img000/suggestions/XX")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(send(&f.app, get("/images/zzz/suggestions/EX")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn annotators_register_update_and_persist() {
    let f = fixture();
    let (s, _, body) = send(
        &f.app,
        post_json("/annotators", None, json!({"annotator_id": "dana", "display_name": "Dana", "band": "expert"})),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED);
    let p: AnnotatorProfile = serde_json::from_slice(&body).unwrap();
    assert_eq!(p.expertise, 0.95);

    let (s, _, _) = send(&f.app, post_json("/annotators", None, json!({"annotator_id": "dana", "expertise": 0.92}))).await;
    assert_eq!(s, StatusCode::OK);
    for bad in [
        json!({"annotator_id": "x", "expertise": 1.5}),
        json!({"annotator_id": "x", "band": "expert", "expertise": 0.2}),
        json!({"annotator_id": "x", "band": "wizard"}),
        json!({"annotator_id": "x"}),
        json!({"annotator_id": " ", "expertise": 0.5}),
    ] {
        let (s, _, _) = send(&f.app, post_json("/annotators", None, bad.clone())).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{bad}");
    }
    let (_, _, body) = send(&app_for(&f.manifest), get("/annotators")).await;
    let all: Vec<AnnotatorProfile> = serde_json::from_slice(&body).unwrap();
    assert_eq!(all.len(), 1);
    assert_eq!(all[0].expertise, 0.92);
}

#[tokio::test]
async fn submit_and_reload_is_pixel_identical() {
    let f = fixture();
    register(&f.app, "eve", 0.6).await;
    let painted = Mask::from_fn(48, 48, |x, y| (x + 2 * y) % 7 == 0 || (10..20).contains(&x));
    let (s, _, body) = send(
        &f.app,
        post_json(
            "/images/img004/annotations",
            Some("eve"),
            json!({"lesion": "MA", "confidence": 0.7, "mask_png": png_b64(&painted)}),
        ),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED, "{}", String::from_utf8_lossy(&body));

    let (s, _, body) = send(&f.app, get("/images/img004/annotations/eve/MA")).await;
    assert_eq!(s, StatusCode::OK);
    let back = Mask::from_gray(&io::decode_image(&body, std::path::Path::new("x")).unwrap()).unwrap();
    assert_eq!(back, painted);

    // persisted in the manifest
    let ds = DatasetManifest::load(&f.manifest).unwrap();
    let rec = &ds.entry("img004").unwrap().annotations;
    assert_eq!(rec.len(), 1);
    assert_eq!((rec[0].confidence, rec[0].expertise), (0.7, 0.6));

    // RLE resubmission replaces the record
    let rle = MaskRle::encode(&rect(48, 48, 0, 0, 5, 5));
    let (s, _, _) = send(
        &f.app,
        post_json("/images/img004/annotations", Some("eve"), json!({"lesion": "MA", "confidence": 0.3, "mask_rle": rle})),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED);
    let (_, _, body) = send(&app_for(&f.manifest), get("/images/img004/annotations/eve/MA")).await;
    let back = Mask::from_gray(&io::decode_image(&body, std::path::Path::new("x")).unwrap()).unwrap();
    assert_eq!(back, rect(48, 48, 0, 0, 5, 5));
    assert_eq!(DatasetManifest::load(&f.manifest).unwrap().entry("img004").unwrap().annotations.len(), 1);

    // raw PNG body
    let req = Request::post("/images/img004/annotations?lesion=HA&confidence=0.5")
        .header(header::CONTENT_TYPE, "image/png")
        .header(ANNOTATOR_HEADER, "eve")
        .body(Body::from(io::mask_to_png(&painted).unwrap()))
        .unwrap();
    assert_eq!(send(&f.app, req).await.0, StatusCode::CREATED);
    assert_eq!(send(&f.app, get("/images/img004/annotations/eve/EX")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn submission_errors() {
    let f = fixture();
    register(&f.app, "eve", 0.6).await;
    let ok_png = png_b64(&rect(48, 48, 1, 1, 4, 4));
    let cases = [
        (None, json!({"lesion": "EX", "confidence": 0.5, "mask_png": ok_png}), StatusCode::BAD_REQUEST),
        (Some("ghost"), json!({"lesion": "EX", "confidence": 0.5, "mask_png": ok_png}), StatusCode::NOT_FOUND),
        (Some("eve"), json!({"lesion": "EX", "confidence": 1.2, "mask_png": ok_png}), StatusCode::BAD_REQUEST),
        (Some("eve"), json!({"lesion": "EX", "confidence": -0.1, "mask_png": ok_png}), StatusCode::BAD_REQUEST),
        (Some("eve"), json!({"lesion": "QQ", "confidence": 0.5, "mask_png": ok_png}), StatusCode::BAD_REQUEST),
        (Some("eve"), json!({"lesion": "EX", "confidence": 0.5}), StatusCode::BAD_REQUEST),
        (Some("eve"), json!({"lesion": "EX", "confidence": 0.5, "mask_png": "!!"}), StatusCode::BAD_REQUEST),
        (
            Some("eve"),
            json!({"lesion": "EX", "confidence": 0.5, "mask_png": png_b64(&rect(20, 20, 1, 1, 4, 4))}),
            StatusCode::BAD_REQUEST,
        ),
    ];
    for (who, body, want) in cases {
        let (s, _, _) = send(&f.app, post_json("/images/img004/annotations", who, body.clone())).await;
        assert_eq!(s, want, "{who:?} {body}");
    }
    let (s, _, _) = send(
        &f.app,
        post_json("/images/none/annotations", Some("eve"), json!({"lesion": "EX", "confidence": 0.5, "mask_png": ok_png})),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    // nothing was written
    assert!(DatasetManifest::load(&f.manifest).unwrap().entry("img004").unwrap().annotations.is_empty());
}

#[tokio::test]
async fn agreement_matches_cli_output() {
    let f = fixture();
    let (s, _, body) = send(&f.app, get("/images/img000/agreement")).await;
    assert_eq!(s, StatusCode::OK);
    let served: AgreementReport = serde_json::from_slice(&body).unwrap();

    let ds = DatasetManifest::load(&f.manifest).unwrap();
    let out = tempfile::tempdir().unwrap();
    cmd_agree(&ds, out.path(), &Default::default()).unwrap();
    let written: AgreementReport =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("agree/img000.agreement.json")).unwrap()).unwrap();
    assert_eq!(served, written);
    assert_eq!(served.rows.len(), 2);

    let (_, h, text) = send(&f.app, get("/images/img000/agreement?format=text")).await;
    assert!(h[header::CONTENT_TYPE].to_str().unwrap().starts_with("text/plain"));
    assert_eq!(String::from_utf8(text).unwrap(), written.to_text());

    // registered expertise replaces the manifest value
    register(&f.app, "resident", 0.1).await;
    let (_, _, body) = send(&f.app, get("/images/img000/agreement")).await;
    let reweighted: AgreementReport = serde_json::from_slice(&body).unwrap();
    let map = [("resident".to_string(), 0.1)].into_iter().collect();
    let direct = agreement_for_image(&ds, "img000", &Default::default(), Some(&map)).unwrap();
    assert_eq!(reweighted, direct);
    assert_ne!(reweighted.rows[0].w_kappa, served.rows[0].w_kappa);
    assert_eq!(reweighted.rows[0].kappa, served.rows[0].kappa);

    assert_eq!(send(&f.app, get("/images/what/agreement")).await.0, StatusCode::NOT_FOUND);
    let (_, _, body) = send(&f.app, get("/images/img005/agreement")).await;
    let none: AgreementReport = serde_json::from_slice(&body).unwrap();
    assert_eq!(none.verdict, fundus_curator::agreement::Verdict::Insufficient);
}

#[test]
fn rle_round_trip() {
    let m = Mask::from_fn(9, 4, |x, y| x == 0 || (x + y) % 3 == 1);
    let rle = MaskRle::encode(&m);
    assert_eq!(rle.counts.iter().sum::<u64>(), 36);
    assert_eq!(rle.decode().unwrap(), m);
    let bad = MaskRle { width: 3, height: 3, counts: vec![4, 4] };
    assert!(bad.decode().is_err());
}
