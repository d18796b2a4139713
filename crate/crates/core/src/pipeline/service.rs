//! HTTP service for the curation loop: on-demand generation, item listing,
//! reviews, status changes and export of accepted items.

use std::collections::BTreeMap;
use std::io;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use tokio::sync::{mpsc, oneshot};

use super::store::{accepted_pairs, Candidate, CandidateMetrics, ItemRecord, ItemStatus, ItemStore, ReviewMeans, ReviewRecord, StoreError};
use crate::cefr::CefrLevel;
use crate::controls::{serialize_controls, LabeledConcept, LabeledConceptSet};
use crate::corpus::{Lexicon, Sentence};
use crate::metrics::{sentence_tfidf, BatchInput, TfidfTable};
use crate::seq2seq::{generate_candidates, DecoderConfig, Seq2SeqModel};
use crate::srl::RoleLabel;

/// Upper bound on emitted tokens per candidate.
pub const MAX_CANDIDATE_TOKENS: usize = 64;
pub const MAX_CANDIDATES: usize = 16;
pub const DEFAULT_CANDIDATES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerateRequest {
    pub input: LabeledConceptSet,
    pub n: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct BackendError {
    pub message: String,
    pub retriable: bool,
}

pub trait GenerationBackend: Send + Sync + 'static {
    fn generate(&self, request: &GenerateRequest) -> Result<Vec<Candidate>, BackendError>;
}

/// Samples candidates from a trained model and attaches per-candidate metric
/// snapshots.
pub struct ModelBackend {
    model: Seq2SeqModel,
    lexicon: Lexicon,
    table: TfidfTable,
    decoder: DecoderConfig,
}

impl ModelBackend {
    pub fn new(model: Seq2SeqModel, lexicon: Lexicon, table: TfidfTable, decoder: DecoderConfig) -> Self {
        let decoder = DecoderConfig { max_length: decoder.max_length.min(MAX_CANDIDATE_TOKENS), ..decoder };
        ModelBackend { model, lexicon, table, decoder }
    }
}

pub fn candidate_metrics(
    input: &LabeledConceptSet,
    sentence: &Sentence,
    table: &TfidfTable,
    lexicon: &Lexicon,
    log_prob: f64,
) -> CandidateMetrics {
    let found = input.items().iter().filter(|i| sentence.has_lemma(&i.concept)).count();
    CandidateMetrics {
        coverage_all: if found == input.len() { 100.0 } else { 0.0 },
        coverage_any: if found > 0 { 100.0 } else { 0.0 },
        length: sentence.word_count() as f64,
        diversity: sentence_tfidf(sentence, table, lexicon),
        log_prob,
    }
}

impl GenerationBackend for ModelBackend {
    fn generate(&self, request: &GenerateRequest) -> Result<Vec<Candidate>, BackendError> {
        let dcfg = DecoderConfig { seed: request.seed.unwrap_or(self.decoder.seed), ..self.decoder };
        let tokens = serialize_controls(&request.input);
        let unknown: Vec<&str> =
            request.input.items().iter().map(|i| i.concept.as_str()).filter(|c| self.model.vocabulary().get(c).is_none()).collect();
        if !unknown.is_empty() {
            log::warn!("concepts outside the model vocabulary: {}", unknown.join(", "));
        }
        Ok(generate_candidates(&self.model, &tokens, &dcfg, request.n)
            .into_iter()
            .map(|g| {
                let sentence = Sentence::parse(&g.text, &self.lexicon);
                Candidate { metrics: candidate_metrics(&request.input, &sentence, &self.table, &self.lexicon, g.log_prob), text: g.text }
            })
            .collect())
    }
}

struct Job {
    request: GenerateRequest,
    reply: oneshot::Sender<Result<Vec<Candidate>, BackendError>>,
}

/// Runs one generation at a time on a dedicated worker thread.
#[derive(Clone)]
pub struct GenerationQueue {
    tx: mpsc::Sender<Job>,
}

impl GenerationQueue {
    pub fn start(backend: Arc<dyn GenerationBackend>, capacity: usize) -> GenerationQueue {
        let (tx, mut rx) = mpsc::channel::<Job>(capacity.max(1));
        std::thread::Builder::new()
            .name("generation".into())
            .spawn(move || {
                while let Some(job) = rx.blocking_recv() {
                    let result = catch_unwind(AssertUnwindSafe(|| backend.generate(&job.request)))
                        .unwrap_or_else(|_| Err(BackendError { message: "generation backend panicked".into(), retriable: false }));
                    let _ = job.reply.send(result);
                }
            })
            .expect("spawn generation worker");
        GenerationQueue { tx }
    }

    pub async fn submit(&self, request: GenerateRequest) -> Result<Vec<Candidate>, BackendError> {
        let unavailable = || BackendError { message: "generation queue is unavailable".into(), retriable: true };
        let (reply, rx) = oneshot::channel();
        self.tx.send(Job { request, reply }).await.map_err(|_| unavailable())?;
        rx.await.map_err(|_| unavailable())?
    }
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<ItemStore>,
    pub queue: GenerationQueue,
}

impl AppState {
    pub fn new(store: Arc<ItemStore>, backend: Arc<dyn GenerationBackend>) -> AppState {
        AppState { store, queue: GenerationQueue::start(backend, 64) }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/generate", post(generate_handler))
        .route("/items", get(list_handler))
        .route("/items/{id}", get(item_handler))
        .route("/items/{id}/review", post(review_handler))
        .route("/items/{id}/status", post(status_handler))
        .route("/export/accepted", get(export_handler))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> io::Result<()> {
    axum::serve(listener, router(state)).await
}

#[derive(Debug)]
pub enum ApiError {
    Fields(BTreeMap<String, String>),
    NotFound(String),
    Conflict(String),
    Backend(BackendError),
    Internal(String),
}

impl ApiError {
    fn field(name: &str, message: impl Into<String>) -> ApiError {
        ApiError::Fields(BTreeMap::from([(name.to_string(), message.into())]))
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) => ApiError::NotFound(e.to_string()),
            StoreError::InvalidTransition { .. } => ApiError::Conflict(e.to_string()),
            StoreError::Invalid { field, reason } => ApiError::field(field, reason),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::Fields(fields) => (StatusCode::BAD_REQUEST, json!({ "error": "invalid request", "fields": fields })),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, json!({ "error": m })),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, json!({ "error": m })),
            ApiError::Backend(e) => {
                let status = if e.retriable { StatusCode::SERVICE_UNAVAILABLE } else { StatusCode::INTERNAL_SERVER_ERROR };
                (status, json!({ "error": e.message, "retriable": e.retriable }))
            }
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": m, "retriable": true })),
        };
        (status, Json(body)).into_response()
    }
}

fn parse_object(body: &Bytes) -> Result<Map<String, Value>, ApiError> {
    match serde_json::from_slice::<Value>(body) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(ApiError::field("body", "expected a JSON object")),
        Err(e) => Err(ApiError::field("body", format!("malformed JSON: {e}"))),
    }
}

/// Field lookup accepting short aliases.
fn lookup<'a>(body: &'a Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| body.get(*n)).filter(|v| !v.is_null())
}

/// Validates a generation request. Concepts without a role get OTHER when
/// any role is given.
pub fn parse_generate(body: &Map<String, Value>) -> Result<GenerateRequest, ApiError> {
    let mut errors = BTreeMap::new();
    let mut concepts = Vec::new();
    match lookup(body, &["concepts"]) {
        Some(Value::Array(items)) => {
            for v in items {
                match v.as_str() {
                    Some(s) => concepts.push(s.trim().to_lowercase()),
                    None => {
                        errors.insert("concepts".into(), "every concept must be a string".into());
                    }
                }
            }
            if !errors.contains_key("concepts") && !(2..=5).contains(&concepts.len()) {
                errors.insert("concepts".into(), format!("expected 2 to 5 concepts, got {}", concepts.len()));
            }
        }
        Some(_) => {
            errors.insert("concepts".into(), "expected an array of strings".into());
        }
        None => {
            errors.insert("concepts".into(), "required".into());
        }
    }
    let cefr = match lookup(body, &["cefr"]) {
        None => None,
        Some(Value::String(s)) => match s.parse::<CefrLevel>() {
            Ok(l) => Some(l),
            Err(e) => {
                errors.insert("cefr".into(), e.to_string());
                None
            }
        },
        Some(_) => {
            errors.insert("cefr".into(), "expected a level such as \"A1\"".into());
            None
        }
    };
    let mut roles = BTreeMap::new();
    match lookup(body, &["roles"]) {
        None => {}
        Some(Value::Object(map)) => {
            for (concept, role) in map {
                let concept = concept.trim().to_lowercase();
                let key = format!("roles.{concept}");
                if !concepts.contains(&concept) {
                    errors.insert(key, "not one of the requested concepts".into());
                    continue;
                }
                match role.as_str().map(str::parse::<RoleLabel>) {
                    Some(Ok(r)) => {
                        roles.insert(concept, r);
                    }
                    Some(Err(e)) => {
                        errors.insert(key, e.to_string());
                    }
                    None => {
                        errors.insert(key, "expected a role name".into());
                    }
                }
            }
        }
        Some(_) => {
            errors.insert("roles".into(), "expected an object mapping concepts to roles".into());
        }
    }
    let n = match lookup(body, &["n"]) {
        None => DEFAULT_CANDIDATES,
        Some(v) => match v.as_u64() {
            Some(n) if (1..=MAX_CANDIDATES as u64).contains(&n) => n as usize,
            _ => {
                errors.insert("n".into(), format!("expected an integer between 1 and {MAX_CANDIDATES}"));
                0
            }
        },
    };
    let seed = match lookup(body, &["seed"]) {
        None => None,
        Some(v) => {
            let s = v.as_u64();
            if s.is_none() {
                errors.insert("seed".into(), "expected a non-negative integer".into());
            }
            s
        }
    };
    if !errors.is_empty() {
        return Err(ApiError::Fields(errors));
    }
    let mut sorted = concepts.clone();
    sorted.sort();
    let any_roles = !roles.is_empty();
    let items = sorted
        .into_iter()
        .map(|concept| {
            let role = roles.get(&concept).copied().or(any_roles.then_some(RoleLabel::Other));
            LabeledConcept { concept, role }
        })
        .collect();
    let input = LabeledConceptSet::new(items, cefr).map_err(|e| ApiError::field("concepts", e.to_string()))?;
    Ok(GenerateRequest { input, n, seed })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GenerateResponse {
    pub item_id: String,
    pub candidates: Vec<Candidate>,
}

async fn generate_handler(State(state): State<AppState>, body: Bytes) -> Result<Json<GenerateResponse>, ApiError> {
    let request = parse_generate(&parse_object(&body)?)?;
    let candidates = state.queue.submit(request.clone()).await.map_err(ApiError::Backend)?;
    if candidates.is_empty() {
        return Err(ApiError::Backend(BackendError { message: "backend returned no candidates".into(), retriable: true }));
    }
    let store = state.store.clone();
    let request_record = BatchInput::from_labeled(&request.input);
    let item = tokio::task::spawn_blocking(move || store.create(request_record, candidates))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(GenerateResponse { item_id: item.item_id, candidates: item.candidates }))
}

/// An item with its review means.
#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ItemView {
    #[serde(flatten)]
    pub item: ItemRecord,
    pub means: Option<ReviewMeans>,
    pub candidate_means: Vec<Option<ReviewMeans>>,
}

impl From<ItemRecord> for ItemView {
    fn from(item: ItemRecord) -> Self {
        let means = item.means();
        let candidate_means = (0..item.candidates.len()).map(|i| item.candidate_means(i)).collect();
        ItemView { item, means, candidate_means }
    }
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    status: Option<String>,
}

async fn list_handler(State(state): State<AppState>, Query(q): Query<ListQuery>) -> Result<Json<Value>, ApiError> {
    let status = match q.status.as_deref().filter(|s| !s.is_empty()) {
        None => None,
        Some(s) => Some(s.parse::<ItemStatus>().map_err(|e| ApiError::field("status", e))?),
    };
    let items: Vec<ItemView> = state.store.list(status).into_iter().map(ItemView::from).collect();
    Ok(Json(json!({ "items": items })))
}

async fn item_handler(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<ItemView>, ApiError> {
    let item = state.store.get(&id).ok_or_else(|| ApiError::NotFound(format!("no item `{id}`")))?;
    Ok(Json(item.into()))
}

fn parse_review(body: &Map<String, Value>) -> Result<ReviewRecord, ApiError> {
    let mut errors = BTreeMap::new();
    let reviewer_id = match lookup(body, &["reviewerId"]).map(|v| v.as_str()) {
        Some(Some(s)) if !s.trim().is_empty() => s.to_string(),
        _ => {
            errors.insert("reviewerId".to_string(), "required non-empty string".to_string());
            String::new()
        }
    };
    let mut score = |name: &str, alias: &str| -> u8 {
        match lookup(body, &[name, alias]) {
            None => {
                errors.insert(name.to_string(), "required".into());
                0
            }
            Some(v) => match v.as_u64() {
                Some(s) if (1..=4).contains(&s) => s as u8,
                _ => {
                    errors.insert(name.to_string(), format!("{v} is not an integer between 1 and 4"));
                    0
                }
            },
        }
    };
    let grammaticality = score("grammaticality", "g");
    let complexity = score("complexity", "c");
    let plausibility = score("plausibility", "p");
    let candidate = match lookup(body, &["candidate", "candidateIdx"]) {
        None => 0,
        Some(v) => v.as_u64().map(|c| c as usize).unwrap_or_else(|| {
            errors.insert("candidate".into(), "expected a non-negative integer".into());
            0
        }),
    };
    let note = match lookup(body, &["note"]) {
        None => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            errors.insert("note".into(), "expected a string".into());
            None
        }
    };
    if !errors.is_empty() {
        return Err(ApiError::Fields(errors));
    }
    Ok(ReviewRecord { reviewer_id, candidate, grammaticality, complexity, plausibility, timestamp: 0, note })
}

async fn review_handler(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<ItemView>, ApiError> {
    let review = parse_review(&parse_object(&body)?)?;
    let store = state.store.clone();
    let item = tokio::task::spawn_blocking(move || store.review(&id, review)).await.map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(item.into()))
}

async fn status_handler(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<ItemView>, ApiError> {
    let body = parse_object(&body)?;
    let status = match lookup(&body, &["status"]) {
        Some(Value::String(s)) => s.parse::<ItemStatus>().map_err(|e| ApiError::field("status", e))?,
        Some(_) => return Err(ApiError::field("status", "expected a string")),
        None => return Err(ApiError::field("status", "required")),
    };
    let store = state.store.clone();
    let item =
        tokio::task::spawn_blocking(move || store.set_status(&id, status)).await.map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(item.into()))
}

async fn export_handler(State(state): State<AppState>) -> Result<Response, ApiError> {
    let pairs = accepted_pairs(&state.store.snapshot());
    let mut body = Vec::new();
    crate::jsonl::write_to(&mut body, &pairs).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}
