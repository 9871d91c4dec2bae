mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use common::Fixture;
use http_body_util::BodyExt;
use permtdp::{Connectivity, VoxelSubset};
use permtdp_cli::service::{router, AppState, CreateSession};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, v)
}

fn create_body() -> Value {
    json!({ "data": "copes.nii", "mask": "mask.nii", "alpha": 0.05, "family": "simes", "delta": 0, "w": 400, "seed": 1 })
}

async fn setup() -> (Fixture, Arc<AppState>, Router, String) {
    let f = Fixture::new();
    let state = AppState::new(Some(f.dir.path().to_path_buf()), 4);
    let app = router(state.clone());
    let (status, v) = call(&app, Method::POST, "/sessions", Some(create_body())).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    let id = v["id"].as_str().unwrap().to_string();
    (f, state, app, id)
}

fn ids_of(report: &Value) -> Vec<Vec<(u64, u64, u64)>> {
    report["clusters"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| {
            c["voxels"]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| {
                    (
                        v["x"].as_u64().unwrap(),
                        v["y"].as_u64().unwrap(),
                        v["z"].as_u64().unwrap(),
                    )
                })
                .collect()
        })
        .collect()
}

#[tokio::test]
async fn create_matches_library_calibration() {
    let (f, _, app, id) = setup().await;
    let a = f.analysis(400, 1, 0.05);
    let (status, v) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "ready");
    assert_eq!(v["lambda_alpha"].as_f64().unwrap(), a.calibration().lambda_alpha);
    assert_eq!(v["m"], a.m());
    assert_eq!(v["schema_version"], 1);
}

#[tokio::test]
async fn clusters_then_drill_nests() {
    let (f, _, app, id) = setup().await;
    let (status, top) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/clusters?threshold=3.2&voxels=1"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{top}");
    let a = f.analysis(400, 1, 0.05);
    let expect = a
        .clusters(3.2, Connectivity::TwentySix)
        .unwrap()
        .to_json(a.geometry().unwrap(), true);
    let mut expect = serde_json::to_value(expect).unwrap();
    expect["node"] = json!(0);
    expect["parent"] = Value::Null;
    assert_eq!(top, expect);

    let (status, sub) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/drill"),
        Some(json!({ "node": 0, "cluster_id": 1, "threshold": 4.0, "include_voxels": true })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{sub}");
    assert_eq!(sub["parent"], 0);
    assert_eq!(sub["node"], 1);
    let parent: std::collections::HashSet<_> = ids_of(&top)[0].iter().copied().collect();
    for child in ids_of(&sub) {
        assert!(child.iter().all(|c| parent.contains(c)));
    }
    for (c, p) in sub["clusters"]
        .as_array()
        .unwrap()
        .iter()
        .zip(std::iter::repeat(&top["clusters"][0]))
    {
        assert!(c["tdp_lower_bound"].as_u64() <= p["tdp_lower_bound"].as_u64());
    }
}

#[tokio::test]
async fn drill_threshold_must_increase() {
    let (_f, _, app, id) = setup().await;
    call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/clusters?threshold=3.2"),
        None,
    )
    .await;
    for t in [3.2, 2.0] {
        let (status, v) = call(
            &app,
            Method::POST,
            &format!("/sessions/{id}/drill"),
            Some(json!({ "cluster_id": 1, "threshold": t })),
        )
        .await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
        assert_eq!(v["error"]["status"], 422);
    }
    // A drill from a drill must exceed the child's threshold too.
    let (status, _) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/drill"),
        Some(json!({ "cluster_id": 1, "threshold": 4.0 })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/drill"),
        Some(json!({ "node": 1, "cluster_id": 1, "threshold": 3.9 })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/clusters?threshold=NaN"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn unknown_session_is_404() {
    let (_f, _, app, _) = setup().await;
    for (m, uri) in [
        (Method::GET, "/sessions/nope"),
        (Method::GET, "/sessions/nope/clusters?threshold=3"),
        (Method::GET, "/sessions/nope/history"),
        (Method::DELETE, "/sessions/nope"),
    ] {
        let (status, v) = call(&app, m, uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(v["error"]["status"], 404);
    }
}

#[tokio::test]
async fn computing_session_is_409_with_progress() {
    let (_f, state, app, _) = setup().await;
    let req: CreateSession = serde_json::from_value(create_body()).unwrap();
    let id = state.insert_pending(req, 0.6);
    let (status, v) = call(&app, Method::GET, &format!("/sessions/{id}/clusters?threshold=3"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"]["progress"], 0.6);
    let (status, v) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "computing");
}

#[tokio::test]
async fn async_create_becomes_ready() {
    let (_f, _, app, _) = setup().await;
    let mut body = create_body();
    body["wait"] = json!(false);
    let (status, v) = call(&app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let id = v["id"].as_str().unwrap().to_string();
    let mut ready = false;
    for _ in 0..600 {
        let (_, v) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
        if v["status"] == "ready" {
            ready = true;
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(50)).await;
    }
    assert!(ready);
}

#[tokio::test]
async fn session_limit_is_503() {
    let (_f, _, app, _) = setup().await;
    for _ in 0..3 {
        let (status, _) = call(&app, Method::POST, "/sessions", Some(create_body())).await;
        assert_eq!(status, StatusCode::CREATED);
    }
    let (status, v) = call(&app, Method::POST, "/sessions", Some(create_body())).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["error"]["status"], 503);
}

#[tokio::test]
async fn bad_requests() {
    let (_f, _, app, _) = setup().await;
    let (status, _) = call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({ "data": "../etc/passwd" })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, Method::POST, "/sessions", Some(json!({ "data": "missing.csv" }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, Method::POST, "/sessions", Some(json!({ "alpha": 0.1 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let mut body = create_body();
    body["alpha"] = json!(1.5);
    let (status, _) = call(&app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn concurrent_reads_are_identical() {
    let (_f, _, app, id) = setup().await;
    call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/clusters?threshold=3.0"),
        None,
    )
    .await;
    let uri = format!("/sessions/{id}/clusters?threshold=3.0&connectivity=6");
    let (a, b) = tokio::join!(call(&app, Method::GET, &uri, None), call(&app, Method::GET, &uri, None));
    assert_eq!(a, b);
    let uri = format!("/sessions/{id}/slice?axis=z&index=1&layer=tdp");
    let (a, b) = tokio::join!(call(&app, Method::GET, &uri, None), call(&app, Method::GET, &uri, None));
    assert_eq!(a, b);
}

#[tokio::test]
async fn queries_never_recalibrate() {
    let (f, _, app, id) = setup().await;
    let a = f.analysis(400, 1, 0.05);
    let lambda = a.calibration().lambda_alpha;
    for t in [2.5, 3.0, 3.5] {
        call(
            &app,
            Method::GET,
            &format!("/sessions/{id}/clusters?threshold={t}"),
            None,
        )
        .await;
        call(
            &app,
            Method::POST,
            &format!("/sessions/{id}/drill"),
            Some(json!({ "cluster_id": 1, "threshold": t + 1.0 })),
        )
        .await;
    }
    let idx: Vec<usize> = (0..50).collect();
    let (status, v) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/tdp"),
        Some(json!({ "indices": idx })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let expect = a.tdp(&VoxelSubset::new(idx, a.m()).unwrap()).unwrap();
    assert_eq!(v["lower_bound"], expect.lower_bound);
    assert_eq!(v["argmax_u"], expect.argmax_u);
    let (_, s) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(s["lambda_alpha"].as_f64().unwrap(), lambda);
    let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/tdp"), Some(json!([]))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn slices() {
    let (f, _, app, id) = setup().await;
    let (status, v) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/slice?axis=z&index=0&layer=stat"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["width"], common::DIMS[0]);
    assert_eq!(v["height"], common::DIMS[1]);
    let grid = v["values"].as_array().unwrap();
    assert_eq!(grid.len(), common::DIMS[1]);
    // x = 0 is outside the mask.
    assert!(grid.iter().all(|row| row[0].is_null()));
    let a = f.analysis(400, 1, 0.05);
    let g = a.geometry().unwrap();
    let i = g.index_of(permtdp::Coord::new(3, 2, 0)).unwrap();
    assert_eq!(grid[2][3].as_f64().unwrap(), a.observed_stats()[i]);

    let (_, top) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/clusters?threshold=3.2"),
        None,
    )
    .await;
    let (_, v) = call(
        &app,
        Method::GET,
        &format!(
            "/sessions/{id}/slice?axis=x&index={}&layer=tdp",
            top["clusters"][0]["peak"]["x"]
        ),
        None,
    )
    .await;
    assert_eq!(v["node"], 0);
    assert_eq!(v["width"], common::DIMS[1]);
    assert_eq!(v["height"], common::DIMS[2]);
    let peak = &top["clusters"][0]["peak"];
    let cell = &v["values"][peak["z"].as_u64().unwrap() as usize][peak["y"].as_u64().unwrap() as usize];
    assert_eq!(cell.as_f64().unwrap(), top["clusters"][0]["tdp"].as_f64().unwrap());

    let (status, _) = call(&app, Method::GET, &format!("/sessions/{id}/slice?axis=w&index=0"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/slice?axis=y&index=99"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn history_tree_and_delete() {
    let (f, _, app, id) = setup().await;
    call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/clusters?threshold=3.2"),
        None,
    )
    .await;
    call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/clusters?threshold=3.2"),
        None,
    )
    .await;
    call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/drill"),
        Some(json!({ "cluster_id": 1, "threshold": 4.0 })),
    )
    .await;
    let (status, h) = call(&app, Method::GET, &format!("/sessions/{id}/history"), None).await;
    assert_eq!(status, StatusCode::OK);
    let roots = h["roots"].as_array().unwrap();
    assert_eq!(roots.len(), 1, "repeating a query reuses its node: {h}");
    assert_eq!(roots[0]["threshold"], 3.2);
    assert_eq!(roots[0]["children"][0]["threshold"], 4.0);
    assert_eq!(roots[0]["children"][0]["cluster_id"], 1);
    assert!(f.path(&format!("sessions/{id}.json")).exists());

    let (status, _) = call(&app, Method::DELETE, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(!f.path(&format!("sessions/{id}.json")).exists());
}

#[tokio::test]
async fn snapshots_restore_after_restart() {
    let (f, _, app, id) = setup().await;
    let (_, top) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/clusters?threshold=3.2"),
        None,
    )
    .await;
    let (_, sub) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/drill"),
        Some(json!({ "cluster_id": 1, "threshold": 4.0 })),
    )
    .await;
    let (_, hist) = call(&app, Method::GET, &format!("/sessions/{id}/history"), None).await;

    let state = AppState::new(Some(f.dir.path().to_path_buf()), 4);
    assert_eq!(state.restore(), 1);
    let app2 = router(state);
    let (_, hist2) = call(&app2, Method::GET, &format!("/sessions/{id}/history"), None).await;
    assert_eq!(hist, hist2);
    let (_, top2) = call(
        &app2,
        Method::GET,
        &format!("/sessions/{id}/clusters?threshold=3.2"),
        None,
    )
    .await;
    assert_eq!(top, top2);
    let (_, sub2) = call(
        &app2,
        Method::POST,
        &format!("/sessions/{id}/drill"),
        Some(json!({ "node": 0, "cluster_id": 1, "threshold": 4.0 })),
    )
    .await;
    assert_eq!(sub["clusters"], sub2["clusters"]);
}

#[tokio::test]
async fn explicit_voxel_drill() {
    let (_f, _, app, id) = setup().await;
    let (_, top) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/clusters?threshold=3.2&voxels=1"),
        None,
    )
    .await;
    let voxels = top["clusters"][0]["voxels"].clone();
    let (status, v) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/drill"),
        Some(json!({ "voxels": { "coords": voxels }, "threshold": 4.0 })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["parent"], Value::Null);
    let (_, by_id) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/drill"),
        Some(json!({ "node": 0, "cluster_id": 1, "threshold": 4.0 })),
    )
    .await;
    assert_eq!(v["clusters"], by_id["clusters"]);
    let (status, _) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/drill"),
        Some(json!({ "voxels": [0, 1], "cluster_id": 1, "threshold": 5.0 })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}
