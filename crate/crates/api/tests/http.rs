use agora_api::{router, Session, TOKEN_HEADER};
use agora_core::agents::{ScriptedBackend, Transcript, TranscriptEntry};
use agora_core::domain::{validate_plan, LandUse, Plan, Violation};
use agora_core::exec::Execution;
use agora_core::metrics::{evaluate, MetricsReport};
use agora_core::pipeline::RunConfig;
use agora_core::planners::{plan_gsca, Method, PlannerConfig};
use agora_core::population::{elicit_needs, synthesize, DemographicStats};
use agora_core::scenario_gen::{generate, ScenarioTemplate};
use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use std::sync::Arc;
use tower::ServiceExt;

fn session() -> Arc<Session> {
    let scenario = generate(&ScenarioTemplate::hlg(), 7).unwrap();
    let pop = synthesize(&scenario, &DemographicStats::hlg(), 200, 5, 7).unwrap();
    let backend = Arc::new(ScriptedBackend::new());
    let pop = elicit_needs(&pop, backend.as_ref(), &Transcript::new(), Execution::Sequential, 1).unwrap();
    let plan = plan_gsca(&scenario, &pop, &PlannerConfig::new(Method::Gsca, 7)).unwrap();
    Arc::new(Session::new(scenario, pop, plan, backend, RunConfig::default()).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>, headers: &[(&str, String)]) -> (StatusCode, Value, Option<String>) {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, v.as_str());
    }
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let res = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = res.status();
    let etag = res.headers().get(header::ETAG).map(|v| v.to_str().unwrap().to_string());
    let bytes = to_bytes(res.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value, etag)
}

async fn current_plan(app: &Router) -> Plan {
    serde_json::from_value(call(app, "GET", "/plan", None, &[]).await.1).unwrap()
}

fn vacant_with(s: &Session, plan: &Plan, u: LandUse) -> Vec<usize> {
    s.scenario.vacant_ids().filter(|&id| plan.get(id) == Some(u)).collect()
}

#[tokio::test]
async fn read_endpoints() {
    let s = session();
    let app = router(s.clone(), None);
    let (st, geo, etag) = call(&app, "GET", "/scenario", None, &[]).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(geo["features"].as_array().unwrap().len(), 63);
    assert_eq!(etag.as_deref(), Some("0"));
    let (_, sess, _) = call(&app, "GET", "/session", None, &[]).await;
    assert_eq!(sess["id"], json!(s.id));
    assert_eq!(sess["backend"], json!("scripted"));
    let (_, traj, _) = call(&app, "GET", "/trajectory", None, &[]).await;
    assert_eq!(traj.as_array().unwrap().len(), 1);
    let (_, violations, _) = call(&app, "GET", "/violations", None, &[]).await;
    assert_eq!(violations, json!([]));
}

#[tokio::test]
async fn edit_metrics_match_offline_evaluation() {
    let s = session();
    let app = router(s.clone(), None);
    let before = current_plan(&app).await;
    let id = vacant_with(&s, &before, LandUse::Business)[0];
    let (st, out, etag) =
        call(&app, "POST", "/plan/edits", Some(json!([{"plot_id": id, "land_use": "School"}])), &[]).await;
    assert_eq!(st, StatusCode::OK, "{out}");
    assert_eq!(etag.as_deref(), Some("1"));
    let expected_plan = before.apply(&s.scenario, &[(id, LandUse::School)]).unwrap();
    let offline = evaluate(&s.scenario, &expected_plan, &s.population).unwrap();
    let served: MetricsReport = serde_json::from_value(out["metrics"].clone()).unwrap();
    for (a, b) in [
        (served.service, offline.service),
        (served.ecology, offline.ecology),
        (served.satisfaction, offline.satisfaction),
        (served.inclusion, offline.inclusion),
    ] {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    let after = current_plan(&app).await;
    assert_eq!(after.assignment, expected_plan.assignment);
    let (_, m, _) = call(&app, "GET", "/metrics", None, &[]).await;
    assert_eq!(m, out["metrics"]);
}

#[tokio::test]
async fn invalid_edits_are_rejected_atomically() {
    let s = session();
    let app = router(s.clone(), None);
    let before = current_plan(&app).await;
    let fixed = s.scenario.residential_plots().next().unwrap().id;
    let vacant = s.scenario.vacant_ids().next().unwrap();
    for body in [
        json!([{"plot_id": fixed, "land_use": "School"}]),
        json!([{"plot_id": 9999, "land_use": "School"}]),
        json!([{"plot_id": vacant, "land_use": "Residential"}]),
        json!([{"plot_id": vacant, "land_use": "Spaceport"}]),
        json!([{"plot_id": vacant, "land_use": "Park"}, {"plot_id": fixed, "land_use": "Park"}]),
        json!([]),
        json!({"nonsense": true}),
    ] {
        let (st, err, _) = call(&app, "POST", "/plan/edits", Some(body.clone()), &[]).await;
        assert_eq!(st, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(err["error"], json!("bad_request"));
    }
    assert_eq!(current_plan(&app).await, before);
    assert_eq!(s.snapshot().version, 0);
}

#[tokio::test]
async fn school_shortfall_is_reported() {
    let s = session();
    let app = router(s.clone(), None);
    let plan = current_plan(&app).await;
    let schools = vacant_with(&s, &plan, LandUse::School);
    assert!(schools.len() >= 6);
    let drop: Vec<Value> =
        schools[..schools.len() - 5].iter().map(|&id| json!({"plot_id": id, "land_use": "Business"})).collect();
    let (st, out, _) = call(&app, "POST", "/plan/edits", Some(json!({"edits": drop})), &[]).await;
    assert_eq!(st, StatusCode::OK);
    let (_, v, _) = call(&app, "GET", "/violations", None, &[]).await;
    let v: Vec<Violation> = serde_json::from_value(v).unwrap();
    assert!(v.contains(&Violation::Shortfall { land_use: LandUse::School, have: 5, need: 6 }), "{v:?}");
    assert_eq!(v, validate_plan(&s.scenario, &current_plan(&app).await));
    assert_eq!(out["violations"], serde_json::to_value(&v).unwrap());
}

#[tokio::test]
async fn undo_restores_exact_plan() {
    let s = session();
    let app = router(s.clone(), None);
    let (_, empty, _) = call(&app, "POST", "/plan/undo", None, &[]).await;
    assert_eq!(empty["error"], json!("conflict"));
    let original = call(&app, "GET", "/plan", None, &[]).await.1;
    let original_metrics = call(&app, "GET", "/metrics", None, &[]).await.1;
    let id = s.scenario.vacant_ids().next().unwrap();
    for u in ["Park", "Office", "Clinic"] {
        let (st, ..) = call(&app, "POST", "/plan/edits", Some(json!([{"plot_id": id, "land_use": u}])), &[]).await;
        assert_eq!(st, StatusCode::OK);
    }
    let mid = call(&app, "GET", "/plan", None, &[]).await.1;
    call(&app, "POST", "/plan/edits", Some(json!([{"plot_id": id, "land_use": "Hospital"}])), &[]).await;
    let (st, _, etag) = call(&app, "POST", "/plan/undo", None, &[]).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(etag.as_deref(), Some("5"));
    assert_eq!(call(&app, "GET", "/plan", None, &[]).await.1.to_string(), mid.to_string());
    for _ in 0..3 {
        assert_eq!(call(&app, "POST", "/plan/undo", None, &[]).await.0, StatusCode::OK);
    }
    assert_eq!(call(&app, "GET", "/plan", None, &[]).await.1.to_string(), original.to_string());
    assert_eq!(call(&app, "GET", "/metrics", None, &[]).await.1, original_metrics);
    assert_eq!(call(&app, "GET", "/trajectory", None, &[]).await.1.as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn stale_version_and_foreign_token_conflict() {
    let s = session();
    let app = router(s.clone(), None);
    let id = s.scenario.vacant_ids().next().unwrap();
    let edit = json!([{"plot_id": id, "land_use": "Park"}]);
    let (st, ..) = call(&app, "POST", "/plan/edits", Some(edit.clone()), &[("if-match", "\"0\"".into())]).await;
    assert_eq!(st, StatusCode::OK);
    let (st, ..) = call(&app, "POST", "/plan/edits", Some(edit.clone()), &[("if-match", "0".into())]).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, ..) = call(&app, "POST", "/plan/edits", Some(edit.clone()), &[(TOKEN_HEADER, "deadbeef".into())]).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, ..) = call(&app, "POST", "/plan/edits", Some(edit), &[(TOKEN_HEADER, s.id.clone()), ("if-match", "1".into())]).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(s.snapshot().version, 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_writers_are_serialized() {
    let s = session();
    let app = router(s.clone(), None);
    let ids: Vec<usize> = s.scenario.vacant_ids().take(10).collect();
    let tasks: Vec<_> = ids
        .iter()
        .map(|&id| {
            let app = app.clone();
            tokio::spawn(async move {
                call(&app, "POST", "/plan/edits", Some(json!([{"plot_id": id, "land_use": "Recreation"}])), &[]).await.0
            })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let snap = s.snapshot();
    assert_eq!(snap.version, 10);
    assert_eq!(snap.trajectory.len(), 11);
    assert!(ids.iter().all(|&id| snap.plan.get(id) == Some(LandUse::Recreation)));

    // all based on the same version: exactly one wins
    let tasks: Vec<_> = ids
        .iter()
        .map(|&id| {
            let app = app.clone();
            tokio::spawn(async move {
                call(&app, "POST", "/plan/edits", Some(json!([{"plot_id": id, "land_use": "Park"}])), &[("if-match", "10".into())])
                    .await
                    .0
            })
        })
        .collect();
    let mut ok = 0;
    for t in tasks {
        match t.await.unwrap() {
            StatusCode::OK => ok += 1,
            st => assert_eq!(st, StatusCode::CONFLICT),
        }
    }
    assert_eq!(ok, 1);
}

#[tokio::test]
async fn discussion_revises_and_logs() {
    let s = session();
    let app = router(s.clone(), None);
    assert_eq!(call(&app, "POST", "/discuss/9", None, &[]).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "POST", "/discuss/abc", None, &[]).await.0, StatusCode::NOT_FOUND);
    let before = current_plan(&app).await;
    let (st, out, _) = call(&app, "POST", "/discuss/1", None, &[]).await;
    assert_eq!(st, StatusCode::OK, "{out}");
    let after = current_plan(&app).await;
    let changed: Vec<usize> = serde_json::from_value(out["changed"].clone()).unwrap();
    assert_eq!(changed, before.changed_from(&after).into_iter().collect::<Vec<_>>());
    assert!(changed.len() <= 3);
    assert!(!out["opinions"].as_array().unwrap().is_empty());
    let offline = evaluate(&s.scenario, &after, &s.population).unwrap();
    assert_eq!(out["metrics"]["satisfaction"], json!(offline.satisfaction));

    let (_, log, _) = call(&app, "GET", "/transcript", None, &[]).await;
    let log: Vec<TranscriptEntry> = serde_json::from_value(log).unwrap();
    assert!(!log.is_empty());
    assert!(log.iter().enumerate().all(|(i, e)| e.seq == i as u64));
    let cut = log[log.len() / 2].seq;
    let (_, tail, _) = call(&app, "GET", &format!("/transcript?after={cut}"), None, &[]).await;
    let tail: Vec<TranscriptEntry> = serde_json::from_value(tail).unwrap();
    assert_eq!(tail.first().map(|e| e.seq), Some(cut + 1));
    assert_eq!(tail.len(), log.len() - cut as usize - 1);
    assert_eq!(call(&app, "GET", "/transcript?after=x", None, &[]).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn residents_answer_questions() {
    let s = session();
    let app = router(s.clone(), None);
    assert_eq!(call(&app, "POST", "/residents/999999/ask", None, &[]).await.0, StatusCode::NOT_FOUND);
    let id = s.population.agents[3].profile.id;
    let (st, op, _) =
        call(&app, "POST", &format!("/residents/{id}/ask"), Some(json!({"question": "Is the clinic close?"})), &[]).await;
    assert_eq!(st, StatusCode::OK, "{op}");
    assert_eq!(op["agent_id"], json!(id));
    let (st, _, _) = call(&app, "POST", &format!("/residents/{id}/ask"), None, &[]).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(s.snapshot().version, 0);
    assert_eq!(s.transcript.len() % 2, 0);
}

#[tokio::test]
async fn export_matches_served_state() {
    let s = session();
    let app = router(s.clone(), None);
    let id = s.scenario.vacant_ids().nth(4).unwrap();
    call(&app, "POST", "/plan/edits", Some(json!([{"plot_id": id, "land_use": "GreenSpace"}])), &[]).await;
    call(&app, "POST", "/discuss/2", None, &[]).await;
    let (_, bundle, _) = call(&app, "GET", "/export", None, &[]).await;
    let plan: Plan = serde_json::from_value(bundle["plan"].clone()).unwrap();
    let offline = evaluate(&s.scenario, &plan, &s.population).unwrap();
    let (_, served, _) = call(&app, "GET", "/metrics", None, &[]).await;
    for k in ["service", "ecology", "satisfaction", "inclusion"] {
        assert_eq!(served[k], bundle["metrics"][k]);
    }
    assert_eq!(served["satisfaction"], json!(offline.satisfaction));
    assert_eq!(served["inclusion"], json!(offline.inclusion));
    assert_eq!(bundle["trajectory"].as_array().unwrap().len(), 3);
    assert_eq!(bundle["violations"], serde_json::to_value(validate_plan(&s.scenario, &plan)).unwrap());
}

#[tokio::test]
async fn cors_preflight_allows_the_ui() {
    let app = router(session(), Some("http://localhost:5173".parse().unwrap()));
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/plan/edits")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .header("access-control-request-headers", "content-type,if-match")
        .body(Body::empty())
        .unwrap();
    let res = app.oneshot(req).await.unwrap();
    assert_eq!(res.headers().get("access-control-allow-origin").unwrap(), "http://localhost:5173");
}
