//! JSON service over the corpus pipeline, used by the curation front end.
//!
//! | method | route | request | reply |
//! |--------|-------|---------|-------|
//! | GET | `/api/questions` | | `[QuestionSummary]`, ordered by id |
//! | GET | `/api/questions/{id}/search?max=N` | | `[UrlRecord]` |
//! | POST | `/api/questions/{id}/extract` | `{url}` | [`ExtractResponse`] |
//! | POST | `/api/questions/{id}/decision` | [`DecisionRequest`] | [`DecisionResponse`] |
//! | GET | `/api/stats` | | `CorpusStats` |
//!
//! Failures reply with `{"error": <code>, "detail": <message>}`; a failed
//! fetch adds `"status"` with the fetch status string.
//!
//! A URL can only be extracted after it appeared in a search for that
//! question, and only decided after it was extracted. Search results and
//! extractions are kept per session (the lifetime of the [`AppState`]).

use std::collections::{BTreeMap, HashMap};
use std::future::Future;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use webcorp_core::filter::{match_spans, MatchSpans};
use webcorp_core::pipeline::UrlOutcome;
use webcorp_core::search::normalize_url;
use webcorp_core::{
    AcceptedBy, AssembledText, CandidateUrl, CorpusEntry, CorpusStats, CorpusStore, Domain, FetchStatus, Passage,
    Pipeline, Question, StoreError, UrlRecord,
};

pub const DEFAULT_PORT: u16 = 8711;

/// Shared service state: the question bank, the pipeline, the store and the
/// review session.
pub struct AppState {
    questions: BTreeMap<String, Question>,
    pipeline: Pipeline,
    store: Mutex<CorpusStore>,
    session: Mutex<Session>,
    cors_origin: Option<HeaderValue>,
}

#[derive(Default)]
struct Session {
    searches: HashMap<String, Vec<UrlRecord>>,
    extractions: HashMap<(String, String), UrlOutcome>,
}

impl AppState {
    pub fn new(questions: Vec<Question>, pipeline: Pipeline, store: CorpusStore) -> Self {
        AppState {
            questions: questions.into_iter().map(|q| (q.id.clone(), q)).collect(),
            pipeline,
            store: Mutex::new(store),
            session: Mutex::new(Session::default()),
            cors_origin: None,
        }
    }

    /// Restrict CORS to one origin. Without this any origin is allowed.
    pub fn with_cors_origin(mut self, origin: HeaderValue) -> Self {
        self.cors_origin = Some(origin);
        self
    }

    pub fn stats(&self) -> CorpusStats {
        lock(&self.store).compute_stats()
    }

    fn question(&self, id: &str) -> Result<&Question, ApiError> {
        self.questions
            .get(id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_question", format!("no question {id:?}")))
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

pub fn router(state: Arc<AppState>) -> Router {
    let origin = match &state.cors_origin {
        Some(o) => AllowOrigin::exact(o.clone()),
        None => AllowOrigin::from(Any),
    };
    let cors = CorsLayer::new().allow_origin(origin).allow_methods(Any).allow_headers(Any);
    Router::new()
        .route("/api/questions", get(list_questions))
        .route("/api/questions/{id}/search", get(search))
        .route("/api/questions/{id}/extract", post(extract))
        .route("/api/questions/{id}/decision", post(decision))
        .route("/api/stats", get(stats))
        .layer(cors)
        .with_state(state)
}

/// Serve `app` on `listener` until `shutdown` resolves. Requests in flight
/// when it resolves, including store writes, run to completion first.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// Resolves on Ctrl-C.
pub async fn interrupt() {
    if let Err(e) = tokio::signal::ctrl_c().await {
        log::error!("cannot listen for interrupt: {e}");
        std::future::pending::<()>().await;
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    status: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    code: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(code: StatusCode, error: &'static str, detail: impl Into<String>) -> Self {
        ApiError { code, body: ErrorBody { error, detail: detail.into(), status: None } }
    }

    fn bad_request(error: &'static str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, error, detail)
    }

    fn internal(detail: impl ToString) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", detail.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(r.status(), "bad_body", r.body_text())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Duplicate(_) => ApiError::new(StatusCode::CONFLICT, "already_built", e.to_string()),
            StoreError::Invalid { .. } => ApiError::bad_request("invalid_entry", e.to_string()),
            other => ApiError::internal(other),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code, Json(self.body)).into_response()
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionStatus {
    Pending,
    Built,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSummary {
    pub id: String,
    pub text: String,
    pub domain: Domain,
    pub status: QuestionStatus,
}

async fn list_questions(State(st): State<Arc<AppState>>) -> Json<Vec<QuestionSummary>> {
    let store = lock(&st.store);
    Json(
        st.questions
            .values()
            .map(|q| QuestionSummary {
                id: q.id.clone(),
                text: q.text.clone(),
                domain: q.domain,
                status: if store.contains(&q.id) { QuestionStatus::Built } else { QuestionStatus::Pending },
            })
            .collect(),
    )
}

fn run_search(st: &AppState, q: &Question, max: usize) -> Result<Vec<UrlRecord>, ApiError> {
    let records = st
        .pipeline
        .search(q, max)
        .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, "search_failed", e.to_string()))?;
    lock(&st.session).searches.insert(q.id.clone(), records.clone());
    Ok(records)
}

async fn search(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Json<Vec<UrlRecord>>, ApiError> {
    let q = st.question(&id)?.clone();
    let max = match params.get("max") {
        None => st.pipeline.max_urls(),
        Some(raw) => raw
            .parse::<usize>()
            .map_err(|_| ApiError::bad_request("bad_max", format!("max must be a positive integer, got {raw:?}")))?,
    };
    if max == 0 {
        return Err(ApiError::bad_request("bad_max", "max must be at least 1"));
    }
    let records = blocking(move || run_search(&st, &q, max)).await??;
    Ok(Json(records))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractRequest {
    pub url: String,
}

/// Character ranges are in UTF-16 code units of `clean_text`, end exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Highlights {
    pub keywords: Vec<(usize, usize)>,
    pub gold: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractResponse {
    pub question_id: String,
    pub url: String,
    pub rank: usize,
    pub status: FetchStatus,
    pub final_url: Option<String>,
    pub encoding: String,
    pub clean_text: String,
    pub contains_gold: Option<bool>,
    pub coverage: usize,
    pub passage: Option<Passage>,
    pub qualifies: bool,
    pub arabic_char_ratio: f64,
    pub removed_foreign_tokens: usize,
    pub highlights: Highlights,
}

fn same_url(a: &str, b: &str) -> bool {
    a == b || matches!((normalize_url(a), normalize_url(b)), (Ok(x), Ok(y)) if x == y)
}

fn utf16_spans(text: &str, spans: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let at = |byte: usize| text[..byte].encode_utf16().count();
    spans.iter().map(|&(s, e)| (at(s), at(e))).collect()
}

fn extract_response(q: &Question, o: &UrlOutcome) -> Option<ExtractResponse> {
    let (extracted, cand) = (o.extracted.as_ref()?, o.candidate.as_ref()?);
    let MatchSpans { keywords, gold } = match_spans(&cand.clean_text, q);
    Some(ExtractResponse {
        question_id: q.id.clone(),
        url: o.record.url.clone(),
        rank: o.record.rank,
        status: o.page.status,
        final_url: o.page.final_url.clone(),
        encoding: o.page.encoding.clone(),
        contains_gold: cand.contains_gold,
        coverage: cand.coverage,
        passage: cand.passages.first().cloned(),
        qualifies: cand.qualifies(),
        arabic_char_ratio: extracted.arabic_char_ratio,
        removed_foreign_tokens: extracted.removed_foreign_tokens,
        highlights: Highlights {
            keywords: utf16_spans(&cand.clean_text, &keywords),
            gold: utf16_spans(&cand.clean_text, &gold),
        },
        clean_text: cand.clean_text.clone(),
    })
}

fn extract_blocking(st: &AppState, q: &Question, url: &str) -> Result<ExtractResponse, ApiError> {
    let cached = lock(&st.session).searches.get(&q.id).cloned();
    let candidates = match cached {
        Some(c) => c,
        None => run_search(st, q, st.pipeline.max_urls())?,
    };
    let record = candidates.iter().find(|r| same_url(&r.url, url)).ok_or_else(|| {
        ApiError::bad_request("not_a_candidate", format!("{url} is not a search result for {}", q.id))
    })?;
    let outcome = st.pipeline.process_url(q, record);
    let reply = extract_response(q, &outcome);
    lock(&st.session).extractions.insert((q.id.clone(), record.url.clone()), outcome.clone());
    reply.ok_or_else(|| {
        let status = outcome.page.status.to_string();
        let detail = if outcome.page.status.is_ok() {
            format!("{} could not be decoded", record.url)
        } else {
            format!("fetching {} failed: {status}", record.url)
        };
        let mut err = ApiError::new(StatusCode::BAD_GATEWAY, "fetch_failed", detail);
        err.body.status = Some(status);
        err
    })
}

async fn extract(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<ExtractRequest>, JsonRejection>,
) -> Result<Json<ExtractResponse>, ApiError> {
    let q = st.question(&id)?.clone();
    let Json(req) = body?;
    let reply = blocking(move || extract_blocking(&st, &q, &req.url)).await??;
    Ok(Json(reply))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub question_id: String,
    pub url: String,
    pub accepted: bool,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionResponse {
    pub question_id: String,
    pub url: String,
    pub accepted: bool,
    pub status: QuestionStatus,
    /// Set once the question is built.
    pub accepted_by: Option<AcceptedBy>,
    pub passage_count: usize,
    pub source_urls: Vec<String>,
    /// URLs decided or reviewed for the question so far.
    pub candidate_count: usize,
}

/// The entry stored when a reviewer accepts `accepted` for `q`: that page's
/// passage (or its whole text if no passage was found), with every URL
/// extracted for `q` this session and every earlier rejection as candidates.
fn human_entry(
    st: &AppState,
    store: &CorpusStore,
    q: &Question,
    accepted: &UrlOutcome,
) -> Result<CorpusEntry, ApiError> {
    let cand = accepted.candidate.as_ref().filter(|c| !c.clean_text.trim().is_empty()).ok_or_else(|| {
        ApiError::bad_request("nothing_to_accept", format!("{} produced no text", accepted.record.url))
    })?;
    let text = cand.passages.first().map_or_else(|| cand.clean_text.clone(), |p| p.text.clone());
    let rejected = store.pending(&q.id);
    let mut candidates: Vec<CandidateUrl> = {
        let session = lock(&st.session);
        session
            .extractions
            .iter()
            .filter(|((qid, _), _)| *qid == q.id)
            .map(|(_, o)| {
                let mut c = o.to_candidate_url();
                if o.record.url == accepted.record.url {
                    c.qualified = true;
                } else if rejected.iter().any(|r| r.record.url == o.record.url) {
                    c.qualified = false;
                }
                c
            })
            .collect()
    };
    for r in rejected {
        if !candidates.iter().any(|c| c.record.url == r.record.url) {
            candidates.push(r.clone());
        }
    }
    candidates.sort_by(|a, b| (a.record.rank, &a.record.url).cmp(&(b.record.rank, &b.record.url)));
    Ok(CorpusEntry {
        question: q.clone(),
        assembled: AssembledText {
            question_id: q.id.clone(),
            text,
            passage_count: 1,
            source_urls: vec![accepted.record.url.clone()],
        },
        candidate_urls: candidates,
        accepted_by: AcceptedBy::Human,
        created_at: st.pipeline.fetcher().clock().timestamp(),
    })
}

fn decide_blocking(st: &AppState, q: &Question, req: &DecisionRequest) -> Result<DecisionResponse, ApiError> {
    let outcome = {
        let session = lock(&st.session);
        let known = session.searches.get(&q.id).is_some_and(|rs| rs.iter().any(|r| same_url(&r.url, &req.url)));
        if !known {
            return Err(ApiError::bad_request(
                "not_a_candidate",
                format!("{} is not a search result for {}", req.url, q.id),
            ));
        }
        session
            .extractions
            .iter()
            .find(|((qid, url), _)| *qid == q.id && same_url(url, &req.url))
            .map(|(_, o)| o.clone())
            .ok_or_else(|| ApiError::bad_request("not_extracted", format!("extract {} before deciding", req.url)))?
    };
    if let Some(note) = &req.note {
        log::info!("{} {} note: {note}", q.id, outcome.record.url);
    }
    let mut store = lock(&st.store);
    if req.accepted {
        let entry = human_entry(st, &store, q, &outcome)?;
        store.add_entry(entry)?;
    } else {
        store.record_rejection(&q.id, CandidateUrl { qualified: false, ..outcome.to_candidate_url() })?;
    }
    Ok(match store.get(&q.id) {
        Some(e) => DecisionResponse {
            question_id: q.id.clone(),
            url: outcome.record.url.clone(),
            accepted: req.accepted,
            status: QuestionStatus::Built,
            accepted_by: Some(e.accepted_by),
            passage_count: e.assembled.passage_count,
            source_urls: e.assembled.source_urls.clone(),
            candidate_count: e.candidate_urls.len(),
        },
        None => DecisionResponse {
            question_id: q.id.clone(),
            url: outcome.record.url.clone(),
            accepted: req.accepted,
            status: QuestionStatus::Pending,
            accepted_by: None,
            passage_count: 0,
            source_urls: Vec::new(),
            candidate_count: store.pending(&q.id).len(),
        },
    })
}

async fn decision(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<DecisionRequest>, JsonRejection>,
) -> Result<Json<DecisionResponse>, ApiError> {
    let q = st.question(&id)?.clone();
    let Json(req) = body?;
    if req.question_id != id {
        return Err(ApiError::bad_request(
            "id_mismatch",
            format!("body question_id {:?} differs from path id {id:?}", req.question_id),
        ));
    }
    if lock(&st.store).contains(&id) && req.accepted {
        return Err(ApiError::new(StatusCode::CONFLICT, "already_built", format!("{id} already has an entry")));
    }
    let reply = blocking(move || decide_blocking(&st, &q, &req)).await??;
    Ok(Json(reply))
}

async fn stats(State(st): State<Arc<AppState>>) -> Json<CorpusStats> {
    Json(st.stats())
}
