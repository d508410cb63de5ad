use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use webcorp_api::{router, AppState};
use webcorp_core::fetch::{FixtureTransport, SystemClock};
use webcorp_core::search::{SearchError, SearchProvider};
use webcorp_core::{
    load_questions, BuildConfig, CorpusStore, ExecMode, FetchPolicy, Fetcher, Pipeline, ProviderConfig, SearchQuery,
    UrlRecord,
};

fn miniweb() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/miniweb")
}

fn app(corpus: &Path) -> Router {
    let mut cfg = BuildConfig::new(miniweb().join("questions.jsonl"), corpus, ProviderConfig::fixture(miniweb()));
    cfg.fixed_clock = true;
    cfg.cache_dir = corpus.join(".cache");
    let questions = load_questions(&cfg.questions_path).unwrap();
    let pipeline = Pipeline::from_config(&cfg).unwrap();
    let store = CorpusStore::open(corpus).unwrap();
    router(Arc::new(AppState::new(questions, pipeline, store)))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, "GET", uri, None).await
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, "POST", uri, Some(body)).await
}

const Q1_GOLD: &str = "https://ar.wiki.example/wiki/eiffel-tower";
const Q1_NO_GOLD: &str = "https://travel.example/paris/tour";
const Q1_MISSING: &str = "https://news.example/missing";

#[tokio::test]
async fn lists_questions_by_id() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let (status, body) = get(&app, "/api/questions").await;
    assert_eq!(status, StatusCode::OK);
    let list = body.as_array().unwrap();
    assert_eq!(list.len(), 5);
    let ids: Vec<_> = list.iter().map(|q| q["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["q1", "q2", "q3", "q4", "q5"]);
    assert!(list.iter().all(|q| q["status"] == "pending"));
    assert_eq!(list[0]["domain"], "HistoryIslam");
}

#[tokio::test]
async fn empty_bank_lists_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = BuildConfig::new("unused", tmp.path(), ProviderConfig::fixture(miniweb()));
    cfg.cache_dir = tmp.path().join(".cache");
    let state = AppState::new(Vec::new(), Pipeline::from_config(&cfg).unwrap(), CorpusStore::in_memory());
    let (status, body) = get(&router(Arc::new(state)), "/api/questions").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!([]));
}

#[tokio::test]
async fn search_ranks_and_parts() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let (status, body) = get(&app, "/api/questions/q1/search?max=3").await;
    assert_eq!(status, StatusCode::OK);
    let recs = body.as_array().unwrap();
    assert_eq!(recs.len(), 3);
    let ranks: Vec<_> = recs.iter().map(|r| r["rank"].as_u64().unwrap()).collect();
    assert_eq!(ranks, [1, 2, 3]);
    assert_eq!(recs[0]["url"], Q1_GOLD);
    assert_eq!(recs[0]["parts"]["host"], "ar.wiki.example");
    assert_eq!(recs[0]["parts"]["protocol"], "https");
}

#[tokio::test]
async fn search_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let (status, body) = get(&app, "/api/questions/nope/search").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "unknown_question");
    assert!(body["detail"].is_string());
    assert_eq!(get(&app, "/api/questions/q1/search?max=0").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, "/api/questions/q1/search?max=x").await.0, StatusCode::BAD_REQUEST);
}

struct DownProvider;

impl SearchProvider for DownProvider {
    fn search(&self, _: &SearchQuery) -> Result<Vec<UrlRecord>, SearchError> {
        Err(SearchError::Unreachable("connection refused".into()))
    }
}

#[tokio::test]
async fn search_provider_failure_is_502() {
    let fetcher = Fetcher::new(
        Arc::new(FixtureTransport::new(miniweb())),
        Arc::new(SystemClock::fixed()),
        FetchPolicy::default(),
    );
    let tmp = tempfile::tempdir().unwrap();
    let pipeline = Pipeline::new(Arc::new(DownProvider), fetcher, tmp.path(), 25, 9, ExecMode::Sequential);
    let questions = load_questions(miniweb().join("questions.jsonl")).unwrap();
    let app = router(Arc::new(AppState::new(questions, pipeline, CorpusStore::in_memory())));
    let (status, body) = get(&app, "/api/questions/q1/search").await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["error"], "search_failed");
    assert!(body["detail"].as_str().unwrap().contains("connection refused"));
    let (status, _) = post(&app, "/api/questions/q1/extract", json!({"url": Q1_GOLD})).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
}

#[tokio::test]
async fn extract_gold_page() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    get(&app, "/api/questions/q1/search").await;
    let (status, body) = post(&app, "/api/questions/q1/extract", json!({"url": Q1_GOLD})).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["contains_gold"], true);
    assert_eq!(body["qualifies"], true);
    assert!(body["coverage"].as_u64().unwrap() >= 2);
    let passage = body["passage"]["text"].as_str().unwrap();
    assert!(passage.contains("غوستاف"));
    let text: Vec<u16> = body["clean_text"].as_str().unwrap().encode_utf16().collect();
    let gold = body["highlights"]["gold"].as_array().unwrap();
    assert_eq!(gold.len(), 1);
    let (s, e) = (gold[0][0].as_u64().unwrap() as usize, gold[0][1].as_u64().unwrap() as usize);
    assert_eq!(String::from_utf16(&text[s..e]).unwrap(), "غوستاف إيفل");
    assert!(!body["highlights"]["keywords"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn extract_without_prior_search_searches_first() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let (status, _) = post(&app, "/api/questions/q1/extract", json!({"url": Q1_GOLD})).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn extract_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let (status, body) = post(&app, "/api/questions/q1/extract", json!({"url": Q1_MISSING})).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["status"], "http_error(404)");
    assert_eq!(body["error"], "fetch_failed");
    let (status, _) = post(&app, "/api/questions/zz/extract", json!({"url": Q1_GOLD})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = post(&app, "/api/questions/q1/extract", json!({"url": "https://elsewhere.example/"})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "not_a_candidate");
    let (status, body) = post(&app, "/api/questions/q1/extract", json!({"link": Q1_GOLD})).await;
    assert!(status.is_client_error());
    assert_eq!(body["error"], "bad_body");
}

#[tokio::test]
async fn extract_zero_keyword_page() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    // The English page for q5 loses every token to the foreign filter.
    let url = "https://culture.example/alexandria-en";
    let (status, body) = post(&app, "/api/questions/q5/extract", json!({"url": url})).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["coverage"], 0);
    assert!(body["passage"].is_null());
    assert_eq!(body["contains_gold"], false);
}

#[tokio::test]
async fn accept_builds_entry_and_conflicts_after() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let (_, before) = get(&app, "/api/stats").await;
    assert_eq!(before["n_texts"], 0);
    get(&app, "/api/questions/q1/search").await;
    post(&app, "/api/questions/q1/extract", json!({"url": Q1_GOLD})).await;
    post(&app, "/api/questions/q1/extract", json!({"url": Q1_NO_GOLD})).await;
    let decide = |url: &str, accepted: bool| json!({"question_id": "q1", "url": url, "accepted": accepted});
    let (status, body) = post(&app, "/api/questions/q1/decision", decide(Q1_NO_GOLD, false)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["status"], "pending");
    let (status, body) = post(&app, "/api/questions/q1/decision", decide(Q1_GOLD, true)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["status"], "built");
    assert_eq!(body["accepted_by"], "human");
    assert_eq!(body["candidate_count"], 2);

    let (_, after) = get(&app, "/api/stats").await;
    assert_eq!(after["n_texts"], 1);
    assert_eq!(after["per_domain_counts"]["HistoryIslam"], 1);
    let (_, list) = get(&app, "/api/questions").await;
    assert_eq!(list[0]["status"], "built");

    let (status, body) = post(&app, "/api/questions/q1/decision", decide(Q1_GOLD, true)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "already_built");
    let (status, _) = post(&app, "/api/questions/q1/decision", decide(Q1_NO_GOLD, false)).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let store = CorpusStore::load(tmp.path()).unwrap();
    let entry = store.get("q1").unwrap();
    assert!(entry.assembled.text.contains("غوستاف"));
    let flags: Vec<_> = entry.candidate_urls.iter().map(|c| (c.record.url.as_str(), c.qualified)).collect();
    assert_eq!(flags, [(Q1_GOLD, true), (Q1_NO_GOLD, false)]);
}

#[tokio::test]
async fn reject_records_sidecar_only() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    post(&app, "/api/questions/q1/extract", json!({"url": Q1_GOLD})).await;
    let req = json!({"question_id": "q1", "url": Q1_GOLD, "accepted": false, "note": "wrong page"});
    let (status, body) = post(&app, "/api/questions/q1/decision", req).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["status"], "pending");
    let (_, stats) = get(&app, "/api/stats").await;
    assert_eq!(stats["n_texts"], 0);
    let store = CorpusStore::load(tmp.path()).unwrap();
    assert!(store.is_empty());
    let pending = store.pending("q1");
    assert_eq!(pending.len(), 1);
    assert!(!pending[0].qualified);
}

#[tokio::test]
async fn decision_preconditions() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    let req = |url: &str| json!({"question_id": "q1", "url": url, "accepted": true});
    let (status, body) = post(&app, "/api/questions/q1/decision", req(Q1_GOLD)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "not_a_candidate");
    get(&app, "/api/questions/q1/search").await;
    let (status, body) = post(&app, "/api/questions/q1/decision", req(Q1_GOLD)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "not_extracted");
    let (status, _) = post(&app, "/api/questions/q1/decision", req("https://elsewhere.example/")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = post(&app, "/api/questions/q2/decision", req(Q1_GOLD)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = post(&app, "/api/questions/q9/decision", req(Q1_GOLD)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    post(&app, "/api/questions/q1/extract", json!({"url": Q1_MISSING})).await;
    let (status, body) = post(&app, "/api/questions/q1/decision", req(Q1_MISSING)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "nothing_to_accept");
}

#[tokio::test]
async fn two_accepts_in_two_domains() {
    let tmp = tempfile::tempdir().unwrap();
    let app = app(tmp.path());
    for (q, url) in [("q1", Q1_GOLD), ("q2", "https://sport.example/football-rules")] {
        post(&app, &format!("/api/questions/{q}/extract"), json!({"url": url})).await;
        let (status, _) = post(
            &app,
            &format!("/api/questions/{q}/decision"),
            json!({"question_id": q, "url": url, "accepted": true}),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
    }
    let (_, stats) = get(&app, "/api/stats").await;
    assert_eq!(stats["n_questions"], 2);
    assert_eq!(stats["per_domain_counts"]["HistoryIslam"], 1);
    assert_eq!(stats["per_domain_counts"]["Sport"], 1);
    assert_eq!(stats["per_domain_counts"]["WorldNews"], 0);
}

#[tokio::test]
async fn empty_corpus_stats_are_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let (status, stats) = get(&app(tmp.path()), "/api/stats").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(stats["n_questions"], 0);
    assert_eq!(stats["total_urls"], 0);
    assert_eq!(stats["urls_per_question"], json!([0, 0]));
}

#[tokio::test]
async fn responses_are_stable_across_restarts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut bodies = Vec::new();
    for run in 0..2 {
        let corpus = tmp.path().join(format!("c{run}"));
        let app = app(&corpus);
        let (_, s) = get(&app, "/api/questions/q3/search").await;
        let (_, e) = post(&app, "/api/questions/q3/extract", json!({"url": "https://un.example/history"})).await;
        let (_, d) = post(
            &app,
            "/api/questions/q3/decision",
            json!({"question_id": "q3", "url": "https://un.example/history", "accepted": true}),
        )
        .await;
        bodies.push((s, e, d));
        let manifest = std::fs::read(corpus.join("corpus.manifest")).unwrap();
        bodies.push((Value::Null, Value::Null, Value::String(String::from_utf8(manifest).unwrap())));
    }
    assert_eq!(bodies[0], bodies[2]);
    assert_eq!(bodies[1], bodies[3]);
    assert_eq!(bodies[0].1["encoding"], "windows-1256");
}

#[tokio::test]
async fn cors_headers_present() {
    let tmp = tempfile::tempdir().unwrap();
    let req =
        Request::builder().uri("/api/stats").header("origin", "http://localhost:5173").body(Body::empty()).unwrap();
    let resp = app(tmp.path()).oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
}
