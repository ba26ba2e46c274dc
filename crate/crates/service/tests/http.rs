mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use recourse_core::study::{ProbeChoice, ProbeStatus, ProbingSession, Scenario, ScenarioKind};
use recourse_service::{router, Service};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(dir: &std::path::Path) -> Router {
    router(Arc::new(Service::open(common::context(), dir).unwrap()))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn create(app: &Router, seed: u64) -> String {
    let (status, body) = call(app, Method::POST, "/sessions", Some(json!({"participant": "web", "seed": seed}))).await;
    assert_eq!(status, StatusCode::CREATED);
    body["id"].as_str().unwrap().to_owned()
}

#[tokio::test]
async fn sessions_are_created_with_or_without_a_body() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, a) = call(&app, Method::POST, "/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(a["session1"], 25);
    assert_eq!(a["phase"], "session1");
    let b = create(&app, 1).await;
    assert_ne!(a["id"].as_str().unwrap(), b);
    let (status, err) = call(&app, Method::POST, "/sessions", Some(json!({"session1": "many"}))).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid")));
    let (status, err) = call(&app, Method::POST, "/sessions", Some(json!({"session1": 0}))).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid")));
}

#[tokio::test]
async fn responses_are_acknowledged_once() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, 2).await;
    let (status, next) = call(&app, Method::GET, &format!("/sessions/{id}/next"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(next["status"], "scenario");
    assert_eq!(next["position"], 1);
    let sid = next["scenario"]["id"].as_str().unwrap().to_owned();

    let uri = format!("/sessions/{id}/responses");
    let body = json!({"scenario_id": sid, "answer": "a", "reason": "smaller loan change"});
    let (status, ack) = call(&app, Method::POST, &uri, Some(body.clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["responses"], 1);
    let (status, err) = call(&app, Method::POST, &uri, Some(body)).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::CONFLICT, Some("duplicate_response")));
    let (_, record) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(record["responses"].as_array().unwrap().len(), 1);
    assert_eq!(record["responses"][0]["reason"], "smaller loan change");

    let (status, err) = call(&app, Method::POST, &uri, Some(json!({"scenario_id": "zzz", "answer": "a"}))).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_scenario")));
    let (status, err) = call(&app, Method::POST, &uri, Some(json!({"scenario_id": sid, "answer": "maybe"}))).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid")));
    let (status, err) = call(&app, Method::GET, "/sessions/unknown/next", None).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_session")));
    let (status, err) = call(&app, Method::GET, &format!("/sessions/{id}/weights"), None).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::CONFLICT, Some("not_fitted")));
    let (status, err) = call(&app, Method::POST, &format!("/sessions/{id}/fit"), None).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid")));
}

/// A scripted client runs a whole session over HTTP, answering A in
/// Session 1 and rejecting both sides of every Session-2 pair.
#[tokio::test]
async fn a_scripted_client_runs_a_full_session_and_survives_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, 3).await;
    let ctx = common::context();
    let (next_uri, resp_uri) = (format!("/sessions/{id}/next"), format!("/sessions/{id}/responses"));
    let mut transitions = 0;
    let mut probing = 0;
    loop {
        let (status, next) = call(&app, Method::GET, &next_uri, None).await;
        assert_eq!(status, StatusCode::OK);
        match next["status"].as_str().unwrap() {
            "done" => break,
            "phase_transition" => {
                transitions += 1;
                assert_eq!(next["to"], "session2");
                let (_, w) = call(&app, Method::GET, &format!("/sessions/{id}/weights"), None).await;
                assert_eq!(w["weights"], next["weights"]);
            }
            "scenario" => {
                let scenario: Scenario = serde_json::from_value(next["scenario"].clone()).unwrap();
                let session1 = next["phase"] == "session1";
                let answer = if session1 { "a" } else { "reject_both" };
                let body = json!({"scenario_id": scenario.id, "answer": answer, "threshold_exceeded": !session1});
                let (status, ack) = call(&app, Method::POST, &resp_uri, Some(body)).await;
                assert_eq!(status, StatusCode::OK, "{ack}");
                if scenario.kind == ScenarioKind::Probing {
                    probing += 1;
                    let w = scenario.meta.construction_weights;
                    let mut oracle = ProbingSession::new(&scenario, Default::default()).unwrap();
                    let choice = ProbeChoice { pick: recourse_core::study::Answer::RejectBoth, threshold_exceeded: true };
                    let ProbeStatus::Terminated(ivs) = oracle.step(choice, &ctx.tree, &ctx.schema, &w).unwrap() else {
                        panic!()
                    };
                    assert_eq!(ack["intervals"], serde_json::to_value(ivs).unwrap());
                    assert!(ack.get("offer").is_none());
                }
            }
            other => panic!("unexpected status {other}"),
        }
    }
    assert_eq!((transitions, probing), (1, 10));
    let (status, report) = call(&app, Method::GET, &format!("/sessions/{id}/report"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["phase"], "complete");
    assert_eq!(report["session2"]["answered"], 35);
    assert_eq!(report["session2"]["evaluation"]["bins"]["none_acceptable"], 35);
    let (_, before) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;

    let restarted = self::app(dir.path());
    let (_, after) = call(&restarted, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(after, before);
    let (_, again) = call(&restarted, Method::GET, &format!("/sessions/{id}/report"), None).await;
    assert_eq!(again, report);
}
