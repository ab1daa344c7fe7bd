use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use futures::{Stream, StreamExt};
use ideaspace_core::engine::{CorrectionNote, EngineError, DEFAULT_DIMENSION_COUNT};
use ideaspace_core::geometry::{
    node_display_size, score_to_position, vectors, ActiveAxes, GeometryConfig, Position3, DRAG_REASONING,
};
use ideaspace_core::model::{
    Axis, AxisAssignment, CorrectionRecord, DimensionDraft, DimensionPair, EventKind, FragmentNode, IdeaDraft,
    IdeaNode, InteractionEvent, LineageEntry, NewIdea, ProvenanceTree, Score, ScoreVector, Session, SessionDocument,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{created, ok, ApiError};
use crate::state::{AppState, SessionHandle};

/// JSON body whose rejections use the error envelope.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(rej) => Err(json_rejection(rej)),
        }
    }
}

fn json_rejection(rej: JsonRejection) -> ApiError {
    ApiError::bad_request(rej.body_text())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(|| async { ok(json!({"healthy": true})) }))
        .route("/geometry/vectors", get(geometry_vectors))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/import", post(import_session))
        .route("/sessions/{id}/dimensions", post(select_dimensions))
        .route("/sessions/{id}/axes/{axis}", post(toggle_axis))
        .route("/sessions/{id}/generate", post(generate))
        .route("/sessions/{id}/nodes/{nid}/steer", post(steer))
        .route("/sessions/{id}/nodes/{nid}/reevaluate", post(reevaluate))
        .route("/sessions/{id}/nodes/{nid}/lineage", get(lineage))
        .route("/sessions/{id}/merge", post(merge))
        .route("/sessions/{id}/fragments", post(create_fragment))
        .route("/sessions/{id}/fragments/{fid}/apply", post(apply_fragment))
        .route("/sessions/{id}/events", post(post_events))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/tree", get(get_tree))
        .route("/sessions/{id}/export", get(export_session))
        .with_state(state)
}

type ApiResult<T> = Result<T, ApiError>;

// ---- views ----------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct NodeView {
    #[serde(flatten)]
    pub node: IdeaNode,
    /// Absent when the node lacks a score for an enabled axis, e.g. after
    /// the dimensions were re-selected; re-evaluate to place it.
    pub position: Option<Position3>,
    pub display_size: Option<f64>,
}

fn node_view(session: &Session, node: &IdeaNode, geometry: &GeometryConfig) -> NodeView {
    let position = score_to_position(&node.scores, &ActiveAxes::of(session)).ok();
    NodeView {
        node: node.clone(),
        position,
        display_size: position.map(|p| node_display_size(p.z, geometry.display_scale())),
    }
}

#[derive(Debug, Serialize)]
struct StateView {
    id: String,
    intent: String,
    created_at: DateTime<Utc>,
    dimensions: Vec<DimensionPair>,
    selected_dimensions: Vec<AxisAssignment>,
    enabled_axes: Vec<Axis>,
    geometry: GeometryConfig,
    generating: bool,
    nodes: Vec<NodeView>,
    fragments: Vec<FragmentNode>,
    corrections: Vec<CorrectionRecord>,
    event_count: usize,
}

fn state_view(session: &Session, handle: &SessionHandle, geometry: &GeometryConfig) -> StateView {
    StateView {
        id: session.id().to_string(),
        intent: session.intent().to_string(),
        created_at: session.created_at(),
        dimensions: session.dimension_candidates().to_vec(),
        selected_dimensions: session.selected_dimensions().to_vec(),
        enabled_axes: ActiveAxes::of(session).enabled().map(|(a, _)| a).collect(),
        geometry: *geometry,
        generating: handle.is_generating(),
        nodes: session.nodes().map(|n| node_view(session, n, geometry)).collect(),
        fragments: session.fragments().cloned().collect(),
        corrections: session.corrections().to_vec(),
        event_count: session.events().len(),
    }
}

fn node_of(state: &AppState, session: &Session, id: &str) -> ApiResult<NodeView> {
    let node = session.node(id).ok_or_else(|| ApiError::not_found("node", id))?;
    Ok(node_view(session, node, &state.geometry))
}

fn selected(session: &Session) -> Vec<DimensionPair> {
    session.selected_pairs().into_iter().cloned().collect()
}

fn require_token(token: &Option<String>) -> ApiResult<String> {
    match token.as_deref().map(str::trim) {
        Some(t) if !t.is_empty() => Ok(t.to_string()),
        _ => Err(ApiError::bad_request("request_token is required")),
    }
}

fn score_vector(raw: &BTreeMap<String, i64>, reasoning: &str) -> ApiResult<ScoreVector> {
    let mut v = ScoreVector::new();
    for (dim, value) in raw {
        v.set(dim.clone(), Score::new(*value)?, reasoning);
    }
    Ok(v)
}

/// Scores one draft against the session's selected dimensions.
async fn evaluate_one(state: &AppState, session: &Session, draft: &IdeaDraft) -> ApiResult<ScoreVector> {
    let dims = selected(session);
    let notes = CorrectionNote::from_session(session);
    let mut scores = state
        .engine
        .evaluate_ideas(session.intent(), std::slice::from_ref(draft), &dims, &notes)
        .await?;
    Ok(scores.remove(0))
}

/// Adds a node unless the token was already used, returning the node either way.
async fn add_idea_once(
    state: &AppState,
    handle: &SessionHandle,
    idea: NewIdea,
    token: &str,
) -> ApiResult<(NodeView, bool)> {
    let (session, m) = handle
        .commit(|s| {
            if s.token_outcome(token).is_some() {
                return Ok(None);
            }
            Ok(Some(s.prepare_add_idea(idea.with_token(Some(token.to_string())))?))
        })
        .await?;
    let id = session
        .token_outcome(token)
        .ok_or_else(|| ApiError::conflict("request token was not recorded"))?
        .to_string();
    Ok((node_of(state, &session, &id)?, m.is_some()))
}

fn replayed(state: &AppState, session: &Session, token: &str) -> ApiResult<Option<NodeView>> {
    session.token_outcome(token).map(|id| node_of(state, session, id)).transpose()
}

fn node_response(view: NodeView, fresh: bool) -> Response {
    let body = json!({ "node": view, "replayed": !fresh });
    if fresh {
        created(body).into_response()
    } else {
        ok(body).into_response()
    }
}

// ---- sessions ---------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    intent: String,
    count: Option<usize>,
}

#[derive(Serialize)]
struct Created {
    session_id: String,
    dimension_candidates: Vec<DimensionPair>,
}

async fn create_session(State(state): State<Arc<AppState>>, Body(body): Body<CreateBody>) -> ApiResult<Response> {
    if body.intent.trim().is_empty() {
        return Err(ApiError::bad_request("intent must not be empty"));
    }
    let drafts: Vec<DimensionDraft> = state
        .engine
        .suggest_dimensions(&body.intent, body.count.unwrap_or(DEFAULT_DIMENSION_COUNT))
        .await?;
    let (session, created_m) = Session::create(uuid::Uuid::new_v4().to_string(), &body.intent)?;
    let add = session.prepare_add_candidates(drafts)?;
    let handle = state.insert_created(&created_m, &[add])?;
    let view = handle.view();
    Ok(created(Created {
        session_id: view.id().to_string(),
        dimension_candidates: view.dimension_candidates().to_vec(),
    })
    .into_response())
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> ApiResult<Response> {
    let mut out = Vec::new();
    for id in state.session_ids() {
        let s = state.session(&id)?.view();
        out.push(json!({"id": id, "intent": s.intent(), "node_count": s.node_count()}));
    }
    Ok(ok(out).into_response())
}

async fn import_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::bad_request("body is not UTF-8"))?;
    let session = Session::import_json(text)?;
    let handle = state.insert_imported(session)?;
    Ok(created(json!({"session_id": handle.view().id()})).into_response())
}

async fn export_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let doc: SessionDocument = state.session(&id)?.view().export();
    Ok(ok(doc).into_response())
}

// ---- dimensions ---------------------------------------------------------------

#[derive(Deserialize)]
#[serde(untagged)]
enum SelectBody {
    Wrapped { assignments: Vec<AxisAssignment> },
    Bare(Vec<AxisAssignment>),
}

async fn select_dimensions(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Body(body): Body<SelectBody>,
) -> ApiResult<Response> {
    let handle = state.session(&id)?;
    if handle.is_generating() {
        return Err(ApiError::conflict("a generation stream is in flight"));
    }
    let assignments = match body {
        SelectBody::Wrapped { assignments } | SelectBody::Bare(assignments) => assignments,
    };
    let (session, _) = handle
        .commit(|s| Ok(Some(s.prepare_select_dimensions(&assignments)?)))
        .await?;
    Ok(ok(json!({
        "dimensions": session.dimension_candidates(),
        "selected_dimensions": session.selected_dimensions(),
    }))
    .into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ToggleBody {
    enabled: bool,
}

async fn toggle_axis(
    State(state): State<Arc<AppState>>,
    Path((id, axis)): Path<(String, String)>,
    Body(body): Body<ToggleBody>,
) -> ApiResult<Response> {
    let axis: Axis = axis.parse().map_err(ApiError::from)?;
    let handle = state.session(&id)?;
    let (session, _) = handle
        .commit(|s| Ok(Some(s.prepare_set_axis_enabled(axis, body.enabled)?)))
        .await?;
    let enabled: Vec<Axis> = ActiveAxes::of(&session).enabled().map(|(a, _)| a).collect();
    Ok(ok(json!({ "enabled_axes": enabled })).into_response())
}

// ---- generation ---------------------------------------------------------------

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct GenerateBody {
    related_works: Option<String>,
}

struct Sequencer(u64);

impl Sequencer {
    fn event(&mut self, kind: &str, mut payload: Value) -> Event {
        let seq = self.0;
        self.0 += 1;
        payload["sequence"] = json!(seq);
        Event::default()
            .event(kind)
            .id(seq.to_string())
            .data(payload.to_string())
    }
}

fn error_payload(e: ApiError) -> Value {
    json!({"code": e.body.code, "message": e.body.message, "detail": e.body.detail})
}

async fn generate(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let body: GenerateBody = if body.iter().all(u8::is_ascii_whitespace) {
        GenerateBody::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?
    };
    let handle = state.session(&id)?;
    if handle.view().selected_dimensions().is_empty() {
        return Err(ApiError::conflict("select dimensions before generating"));
    }
    let guard = handle
        .begin_generation()
        .ok_or_else(|| ApiError::conflict("a generation stream is already running for this session"))?;

    let stream = async_stream::stream! {
        let _guard = guard;
        let _permit = handle.provider_permit().await;
        let mut seq = Sequencer(0);
        let view = handle.view();
        let dims = selected(&view);
        let existing: Vec<String> = view.nodes().map(|n| n.title.clone()).collect();

        let mut drafts = Vec::new();
        let mut failure: Option<EngineError> = None;
        {
            let mut items = state
                .engine
                .stream_seed_ideas(view.intent(), &dims, body.related_works.as_deref(), &existing);
            while let Some(item) = items.next().await {
                match item {
                    Ok(d) => {
                        yield seq.event("idea_draft", json!({"index": drafts.len(), "draft": d}));
                        drafts.push(d);
                    }
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                }
            }
        }
        if let Some(e) = failure {
            yield seq.event("error", error_payload(e.into()));
            yield seq.event("batch_done", json!({"partial": true, "node_ids": []}));
            return;
        }

        let notes = CorrectionNote::from_session(&view);
        let scores = match state.engine.evaluate_ideas(view.intent(), &drafts, &dims, &notes).await {
            Ok(s) => s,
            Err(e) => {
                yield seq.event("error", error_payload(e.into()));
                yield seq.event("batch_done", json!({"partial": true, "node_ids": []}));
                return;
            }
        };
        let mut node_ids = Vec::new();
        for (index, (draft, score)) in drafts.into_iter().zip(scores).enumerate() {
            let result = handle
                .commit(|s| Ok(Some(s.prepare_add_idea(NewIdea::seed(draft, score))?)))
                .await;
            match result {
                Ok((session, Some(m))) => {
                    let nid = m.subject_id().unwrap_or_default().to_string();
                    match node_of(&state, &session, &nid) {
                        Ok(node) => yield seq.event("idea_scored", json!({"index": index, "node": node})),
                        Err(e) => {
                            yield seq.event("error", error_payload(e));
                            yield seq.event("batch_done", json!({"partial": true, "node_ids": node_ids}));
                            return;
                        }
                    }
                    node_ids.push(nid);
                }
                Ok((_, None)) => unreachable!("seed commit always mutates"),
                Err(e) => {
                    yield seq.event("error", error_payload(e));
                    yield seq.event("batch_done", json!({"partial": true, "node_ids": node_ids}));
                    return;
                }
            }
        }
        yield seq.event("batch_done", json!({"partial": false, "node_ids": node_ids}));
    };
    Ok(Sse::new(stream.map(Ok)).keep_alive(KeepAlive::default()))
}

// ---- node actions ---------------------------------------------------------------

#[derive(Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum SteerMode {
    Iterate,
    Correct,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SteerBody {
    target_scores: BTreeMap<String, i64>,
    mode: SteerMode,
    request_token: Option<String>,
}

async fn steer(
    State(state): State<Arc<AppState>>,
    Path((id, nid)): Path<(String, String)>,
    Body(body): Body<SteerBody>,
) -> ApiResult<Response> {
    let token = require_token(&body.request_token)?;
    let handle = state.session(&id)?;
    let view = handle.view();
    if let Some(node) = replayed(&state, &view, &token)? {
        return Ok(node_response(node, false));
    }
    let node = view.node(&nid).ok_or_else(|| ApiError::not_found("node", &nid))?;
    match body.mode {
        SteerMode::Correct => {
            let scores = score_vector(&body.target_scores, "")?;
            let (session, m) = handle
                .commit(|s| {
                    if s.token_outcome(&token).is_some() {
                        return Ok(None);
                    }
                    Ok(Some(s.prepare_correction(&nid, &scores, Some(token.clone()))?))
                })
                .await?;
            Ok(ok(json!({"node": node_of(&state, &session, &nid)?, "replayed": m.is_none()})).into_response())
        }
        SteerMode::Iterate => {
            let target = score_vector(&body.target_scores, DRAG_REASONING)?;
            let dims = selected(&view);
            if !target.has_exact_keys(dims.iter().map(|d| d.id.as_str())) {
                return Err(ApiError::bad_request(
                    "target_scores must cover exactly the selected dimensions",
                ));
            }
            let draft = {
                let _permit = handle.provider_permit().await;
                state.engine.steer_idea(view.intent(), node, &target, &dims).await?
            };
            let (node, fresh) = add_idea_once(&state, &handle, NewIdea::steered(&nid, draft, target), &token).await?;
            Ok(node_response(node, fresh))
        }
    }
}

/// Re-scores a node on the current dimensions, e.g. after they changed.
async fn reevaluate(
    State(state): State<Arc<AppState>>,
    Path((id, nid)): Path<(String, String)>,
) -> ApiResult<Response> {
    let handle = state.session(&id)?;
    let view = handle.view();
    let node = view.node(&nid).ok_or_else(|| ApiError::not_found("node", &nid))?;
    let scores = {
        let _permit = handle.provider_permit().await;
        evaluate_one(&state, &view, &node.draft()).await?
    };
    let (session, _) = handle
        .commit(|s| Ok(Some(s.prepare_reevaluation(&nid, scores)?)))
        .await?;
    Ok(ok(json!({"node": node_of(&state, &session, &nid)?})).into_response())
}

async fn lineage(
    State(state): State<Arc<AppState>>,
    Path((id, nid)): Path<(String, String)>,
) -> ApiResult<Response> {
    let entries: Vec<LineageEntry> = state.session(&id)?.view().lineage(&nid)?;
    Ok(ok(entries).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MergeBody {
    node_a: String,
    node_b: String,
    request_token: Option<String>,
}

async fn merge(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Body(body): Body<MergeBody>,
) -> ApiResult<Response> {
    let token = require_token(&body.request_token)?;
    if body.node_a == body.node_b {
        return Err(ApiError::bad_request("cannot merge a node with itself"));
    }
    let handle = state.session(&id)?;
    let view = handle.view();
    if let Some(node) = replayed(&state, &view, &token)? {
        return Ok(node_response(node, false));
    }
    let a = view.node(&body.node_a).ok_or_else(|| ApiError::not_found("node", &body.node_a))?;
    let b = view.node(&body.node_b).ok_or_else(|| ApiError::not_found("node", &body.node_b))?;
    let (draft, scores) = {
        let _permit = handle.provider_permit().await;
        let draft = state.engine.merge_ideas(a, b).await?;
        let scores = evaluate_one(&state, &view, &draft).await?;
        (draft, scores)
    };
    let idea = NewIdea::merged(&body.node_a, &body.node_b, draft, scores);
    let (node, fresh) = add_idea_once(&state, &handle, idea, &token).await?;
    Ok(node_response(node, fresh))
}

// ---- fragments ---------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FragmentBody {
    source_node: String,
    text: String,
}

async fn create_fragment(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Body(body): Body<FragmentBody>,
) -> ApiResult<Response> {
    let handle = state.session(&id)?;
    let (session, m) = handle
        .commit(|s| Ok(Some(s.prepare_fragment(&body.source_node, &body.text)?)))
        .await?;
    let fid = m.as_ref().and_then(|m| m.subject_id()).unwrap_or_default();
    let fragment = session.fragment(fid).ok_or_else(|| ApiError::not_found("fragment", fid))?;
    Ok(created(json!({ "fragment": fragment })).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ApplyBody {
    target_node: String,
    request_token: Option<String>,
}

async fn apply_fragment(
    State(state): State<Arc<AppState>>,
    Path((id, fid)): Path<(String, String)>,
    Body(body): Body<ApplyBody>,
) -> ApiResult<Response> {
    let token = require_token(&body.request_token)?;
    let handle = state.session(&id)?;
    let view = handle.view();
    if let Some(node) = replayed(&state, &view, &token)? {
        return Ok(node_response(node, false));
    }
    let fragment = view.fragment(&fid).ok_or_else(|| ApiError::not_found("fragment", &fid))?;
    let target = view
        .node(&body.target_node)
        .ok_or_else(|| ApiError::not_found("node", &body.target_node))?;
    let (draft, scores) = {
        let _permit = handle.provider_permit().await;
        let draft = state.engine.incorporate_fragment(target, fragment).await?;
        let scores = evaluate_one(&state, &view, &draft).await?;
        (draft, scores)
    };
    let idea = NewIdea::from_fragment(&body.target_node, &fid, draft, scores);
    let (node, fresh) = add_idea_once(&state, &handle, idea, &token).await?;
    Ok(node_response(node, fresh))
}

// ---- events and queries ---------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClientEvent {
    kind: String,
    #[serde(default)]
    payload: Value,
    timestamp: DateTime<Utc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EventsBody {
    events: Vec<ClientEvent>,
}

async fn post_events(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Body(body): Body<EventsBody>,
) -> ApiResult<Response> {
    let handle = state.session(&id)?;
    let mut events = Vec::with_capacity(body.events.len());
    for (i, e) in body.events.into_iter().enumerate() {
        let kind: EventKind = e
            .kind
            .parse()
            .ok()
            .filter(|k: &EventKind| k.client_may_send())
            .ok_or_else(|| ApiError::bad_request(format!("events[{i}]: kind {:?} not accepted from clients", e.kind)))?;
        events.push(InteractionEvent::client(kind, e.payload, e.timestamp));
    }
    let accepted = events.len();
    handle.commit(|s| Ok(Some(s.prepare_events(events)?))).await?;
    Ok(ok(json!({ "accepted": accepted })).into_response())
}

async fn get_state(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let handle = state.session(&id)?;
    let view = handle.view();
    Ok(ok(state_view(&view, &handle, &state.geometry)).into_response())
}

async fn get_tree(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let tree = ProvenanceTree::build(&state.session(&id)?.view());
    let depth = tree.depth();
    Ok(ok(json!({ "depth": depth, "nodes": tree.nodes, "edges": tree.edges })).into_response())
}

#[derive(Deserialize)]
struct VectorQuery {
    count: Option<usize>,
    seed: Option<u64>,
}

const MAX_VECTORS: usize = 100_000;

async fn geometry_vectors(Query(q): Query<VectorQuery>) -> ApiResult<Response> {
    let count = q.count.unwrap_or(1000);
    if count > MAX_VECTORS {
        return Err(ApiError::bad_request(format!("count must be at most {MAX_VECTORS}")));
    }
    Ok(ok(vectors::generate(count, q.seed.unwrap_or(0))).into_response())
}
