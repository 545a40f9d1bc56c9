use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use pws_cli::service::{router, AppState, ErrorBody};
use pws_core::fixtures::spam_synth;
use pws_core::pipeline::RunConfig;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(dir: &Path) -> Router {
    spam_synth::write(dir).unwrap();
    let cfg = RunConfig::load(dir.join(spam_synth::PWS_CONFIG)).unwrap();
    router(Arc::new(AppState::from_config(&cfg).unwrap()), None)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(b) => Body::from(b.to_string()),
            None => Body::empty(),
        })
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
        .await
        .unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn get_raw(app: &Router, uri: &str) -> Vec<u8> {
    let req = Request::get(uri).body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    axum::body::to_bytes(resp.into_body(), usize::MAX)
        .await
        .unwrap()
        .to_vec()
}

async fn put_raw(app: &Router, uri: &str, body: Vec<u8>) -> (StatusCode, Value) {
    let req = Request::put(uri)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
        .await
        .unwrap();
    (status, serde_json::from_slice(&bytes).unwrap())
}

#[tokio::test(flavor = "multi_thread")]
async fn labelers_are_listed_under_both_prefixes() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (s, v) = call(&app, "GET", "/api/labelers", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["labelers"].as_array().unwrap().len(), 10);
    let (_, v1) = call(&app, "GET", "/api/v1/labelers", None).await;
    assert_eq!(v, v1);
    let (s, d) = call(&app, "GET", "/api/dataset", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(d["classes"], json!(["HAM", "SPAM"]));
    assert_eq!(d["splits"]["valid"]["n"], 120);
}

#[tokio::test(flavor = "multi_thread")]
async fn editing_a_labeler_changes_the_suite_hash() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (_, before) = call(&app, "GET", "/api/labelers", None).await;
    let original_bytes = get_raw(&app, "/api/labelers/subscribe").await;
    let mut lf: Value = serde_json::from_slice(&original_bytes).unwrap();
    lf.as_object_mut().unwrap().remove("polarity");
    lf["threshold"] = json!(0.7);
    let (s, updated) = call(&app, "PUT", "/api/labelers/subscribe", Some(lf.clone())).await;
    assert_eq!(s, StatusCode::OK);
    assert_ne!(updated["suite_hash"], before["suite_hash"]);
    assert_eq!(updated["labeler"]["threshold"], json!(0.7));

    // Putting the original bytes back restores the original hash. The
    // original goes back verbatim: label-map order fixes candidate order.
    let (s, restored) = put_raw(&app, "/api/labelers/subscribe", original_bytes).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(restored["suite_hash"], before["suite_hash"]);

    let (s, _) = call(&app, "PUT", "/api/labelers/other", Some(lf)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn identical_run_requests_return_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let req = json!({"split": "valid", "calibrate": true, "wait": true});
    let (s, first) = call(&app, "POST", "/api/runs", Some(req.clone())).await;
    assert_eq!(s, StatusCode::OK, "{first}");
    assert_eq!(first["status"], "done");
    assert_eq!(first["cached"], false);
    let (_, second) = call(&app, "POST", "/api/runs", Some(req)).await;
    assert_eq!(second["run_id"], first["run_id"]);
    assert_eq!(second["cached"], true);

    let id = first["run_id"].as_str().unwrap();
    let (s, run) = call(&app, "GET", &format!("/api/runs/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(run["status"], "done");
    let (s, stats) = call(&app, "GET", &format!("/api/runs/{id}/stats"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(stats.as_array().unwrap().len(), 10);
    let (s, _) = call(&app, "GET", &format!("/api/runs/{id}/diversity"), None).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = call(&app, "GET", &format!("/api/runs/{id}/calibration"), None).await;
    assert_eq!(s, StatusCode::OK);

    // Repeated reads are pure views.
    let uri = format!("/api/runs/{id}/stats");
    assert_eq!(get_raw(&app, &uri).await, get_raw(&app, &uri).await);
    let ex = "/api/examples?split=valid&lf=subscribe&vote=SPAM";
    assert_eq!(get_raw(&app, ex).await, get_raw(&app, ex).await);
}

#[tokio::test(flavor = "multi_thread")]
async fn example_filters_follow_the_votes() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (s, body) = call(&app, "GET", "/api/examples?lf=subscribe", None).await;
    assert_eq!(s, StatusCode::CONFLICT, "{body}");
    call(&app, "POST", "/api/runs", Some(json!({"wait": true}))).await;

    let (_, all) = call(&app, "GET", "/api/examples?split=valid", None).await;
    let j = all["lf_names"]
        .as_array()
        .unwrap()
        .iter()
        .position(|n| n == "subscribe")
        .unwrap();
    let rows = all["examples"].as_array().unwrap();
    assert_eq!(rows.len(), 120);
    let spam = rows.iter().filter(|r| r["votes"][j] == "SPAM").count();
    let correct = rows
        .iter()
        .filter(|r| !r["votes"][j].is_null() && r["votes"][j] == r["gold"])
        .count();
    let abstain = rows.iter().filter(|r| r["votes"][j].is_null()).count();

    let count = |v: &Value| v["examples"].as_array().unwrap().len();
    let (_, v) = call(&app, "GET", "/api/examples?lf=subscribe&vote=SPAM", None).await;
    assert_eq!(count(&v), spam);
    let (_, v) = call(&app, "GET", "/api/examples?lf=subscribe&correct=true", None).await;
    assert_eq!(count(&v), correct);
    let (_, v) = call(&app, "GET", "/api/examples?lf=subscribe&vote=ABSTAIN", None).await;
    assert_eq!(count(&v), abstain);
    let (s, _) = call(&app, "GET", "/api/examples?vote=SPAM", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn preview_reports_examples_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (_, lf) = call(&app, "GET", "/api/labelers/subscribe", None).await;
    let (s, v) = call(
        &app,
        "POST",
        "/api/labelers/preview",
        Some(json!({"lf": lf})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["examples"].as_array().unwrap().len(), 50);
    assert!(v["stats"]["coverage"].as_f64().unwrap() > 0.0);

    let (s, v) = call(
        &app,
        "POST",
        "/api/labelers/preview",
        Some(json!({"lf": lf, "sample": 0})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["examples"].as_array().unwrap().is_empty());
    assert!(v["stats"].is_null());

    let (s, v) = call(
        &app,
        "POST",
        "/api/labelers/preview",
        Some(json!({"lf": lf, "sample": 121})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let err: ErrorBody = serde_json::from_value(v).unwrap();
    assert_eq!(err.error, "validation");
    assert!(!err.detail.is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn all_abstain_label_map_has_zero_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (_, mut lf) = call(&app, "GET", "/api/labelers/subscribe", None).await;
    lf["label_map"] = json!({"yes": "ABSTAIN", "no": "ABSTAIN"});
    let (s, v) = call(
        &app,
        "POST",
        "/api/labelers/preview",
        Some(json!({"lf": lf, "sample": 20})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["stats"]["coverage"].as_f64(), Some(0.0));
    assert!(v["examples"]
        .as_array()
        .unwrap()
        .iter()
        .all(|e| e["vote"].is_null()));
}

#[tokio::test(flavor = "multi_thread")]
async fn errors_carry_kind_and_detail() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    for uri in ["/api/labelers/nope", "/api/runs/abc123", "/api/nothing"] {
        let (s, v) = call(&app, "GET", uri, None).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{uri}");
        let err: ErrorBody = serde_json::from_value(v).unwrap();
        assert_eq!(err.error, "not_found");
    }
    let (s, v) = call(&app, "GET", "/api/gateway/stats", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v.is_object());
}

#[tokio::test(flavor = "multi_thread")]
async fn raising_the_threshold_abstains_below_it() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (_, mut lf) = call(&app, "GET", "/api/labelers/has_url", None).await;
    lf["threshold"] = json!(0.0);
    let (_, low) = call(
        &app,
        "POST",
        "/api/labelers/preview",
        Some(json!({"lf": lf, "sample": 120})),
    )
    .await;
    lf["threshold"] = json!(0.6);
    let (_, high) = call(
        &app,
        "POST",
        "/api/labelers/preview",
        Some(json!({"lf": lf, "sample": 120})),
    )
    .await;
    let (low, high) = (
        low["examples"].as_array().unwrap(),
        high["examples"].as_array().unwrap(),
    );
    let mut converted = 0;
    for (a, b) in low.iter().zip(high) {
        let top = b["scored"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p[1].as_f64().unwrap())
            .fold(0.0, f64::max);
        if top < 0.6 {
            assert!(b["vote"].is_null());
            converted += usize::from(!a["vote"].is_null());
        } else {
            assert_eq!(a["vote"], b["vote"]);
        }
    }
    assert!(converted > 0);
}

#[tokio::test(flavor = "multi_thread")]
async fn previews_and_edits_leave_the_disk_alone() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let suite_file = dir.path().join("pws.labelers.json");
    let before = std::fs::read(&suite_file).unwrap();
    let (_, mut lf) = call(&app, "GET", "/api/labelers/subscribe", None).await;
    call(
        &app,
        "POST",
        "/api/labelers/preview",
        Some(json!({"lf": lf.clone()})),
    )
    .await;
    lf.as_object_mut().unwrap().remove("polarity");
    lf["threshold"] = json!(0.9);
    let (s, _) = call(&app, "PUT", "/api/labelers/subscribe", Some(lf)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(std::fs::read(&suite_file).unwrap(), before);
    assert!(!dir.path().join("runs/console").exists());
}
