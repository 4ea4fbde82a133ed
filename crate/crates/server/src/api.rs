use std::convert::Infallible;

use axum::body::{Body, Bytes};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value as JsonValue};
use tower_http::services::ServeDir;

use argtree_core::demo::run_experiment;
use argtree_core::tree::{to_dot, PathStep};
use argtree_core::Value;

use crate::session::{parse_document, SessionError};
use crate::AppState;

const PLACEHOLDER_PAGE: &str = "<!doctype html>\n<html><head><title>argtree editor</title></head>\n<body><h1>argtree editor backend</h1>\n<p>No frontend assets are installed. The JSON API is served under <code>/api/v1/</code>.</p>\n</body></html>\n";

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/registry", get(registry))
        .route("/tree", get(tree))
        .route("/tree/children", post(add_child).delete(remove_child))
        .route("/tree/args", axum::routing::patch(set_arg))
        .route("/validate", post(validate))
        .route("/search", get(search))
        .route("/save", post(save))
        .route("/load", post(load))
        .route("/generate", post(generate))
        .route("/run", post(run))
        .route("/dot", get(dot))
        .route("/reset", post(reset))
        .fallback(|| async { ApiError::not_found("no such endpoint") });

    let app = Router::new().nest("/api/v1", api);
    let app = match &state.static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(|| async { Html(PLACEHOLDER_PAGE) })),
    };
    app.with_state(state)
}

struct ApiError {
    status: StatusCode,
    body: JsonValue,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        SessionError::BadRequest(message.into()).into()
    }

    fn not_found(message: impl Into<String>) -> Self {
        SessionError::NotFound(message.into()).into()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, code) = match &e {
            SessionError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            SessionError::Conflict { .. } => (StatusCode::CONFLICT, "conflict"),
            SessionError::Stale { .. } => (StatusCode::CONFLICT, "stale_revision"),
            SessionError::Unprocessable { .. } => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid_value")
            }
            SessionError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
        };
        let mut body = json!({
            "error": code,
            "message": e.to_string(),
            "violations": e.violations(),
        });
        if let SessionError::Stale { actual, .. } = e {
            body["revision"] = json!(actual);
        }
        ApiError { status, body }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

/// Request bodies are parsed by hand so every malformed one is a 400.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return serde_json::from_str("{}")
            .map_err(|e| ApiError::bad_request(format!("request body required: {e}")));
    }
    serde_json::from_slice(bytes)
        .map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

fn ok(value: impl serde::Serialize) -> ApiResult {
    Ok(Json(value).into_response())
}

macro_rules! read {
    ($state:expr) => {
        $state.session.read().expect("session lock poisoned")
    };
}

macro_rules! write {
    ($state:expr) => {
        $state.session.write().expect("session lock poisoned")
    };
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RevisionOnly {
    expected_revision: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AddChild {
    #[serde(default)]
    path: Vec<PathStep>,
    req_key: String,
    class_name: String,
    expected_revision: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RemoveChild {
    path: Vec<PathStep>,
    expected_revision: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SetArg {
    path: Vec<PathStep>,
    arg_name: String,
    value: JsonValue,
    expected_revision: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Save {
    scope_path: Option<Vec<PathStep>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Load {
    config: JsonValue,
    graft_path: Option<Vec<PathStep>>,
    expected_revision: Option<u64>,
}

#[derive(Deserialize)]
struct SearchQuery {
    q: Option<String>,
}

async fn registry(State(state): State<AppState>) -> ApiResult {
    let s = read!(state);
    let modules: Vec<_> = s.registry().iter().map(|d| d.as_ref()).collect();
    let missing: serde_json::Map<String, JsonValue> = s
        .registry()
        .missing()
        .map(|(name, reason)| (name.to_string(), json!(reason)))
        .collect();
    ok(json!({
        "root": s.root_descriptor(),
        "entry": {"req_key": s.entry().req_key, "kind": s.entry().kind},
        "modules": modules,
        "missing": missing,
    }))
}

async fn tree(State(state): State<AppState>) -> ApiResult {
    let s = read!(state);
    ok(json!({
        "revision": s.revision(),
        "tree": s.tree(),
        "violations": s.violations(),
    }))
}

async fn add_child(State(state): State<AppState>, bytes: Bytes) -> ApiResult {
    let req: AddChild = body(&bytes)?;
    let mut s = write!(state);
    s.check_revision(req.expected_revision)?;
    ok(s.add_child(&req.path, &req.req_key, &req.class_name)?)
}

async fn remove_child(State(state): State<AppState>, bytes: Bytes) -> ApiResult {
    let req: RemoveChild = body(&bytes)?;
    let mut s = write!(state);
    s.check_revision(req.expected_revision)?;
    ok(s.remove_child(&req.path)?)
}

async fn set_arg(State(state): State<AppState>, bytes: Bytes) -> ApiResult {
    let req: SetArg = body(&bytes)?;
    let raw = Value::from_json(&req.value)
        .ok_or_else(|| ApiError::bad_request("value must be a string, number or boolean"))?;
    let mut s = write!(state);
    s.check_revision(req.expected_revision)?;
    ok(s.set_arg(&req.path, &req.arg_name, &raw)?)
}

async fn validate(State(state): State<AppState>) -> ApiResult {
    let mut s = write!(state);
    let violations = s.validate().to_vec();
    ok(json!({"revision": s.revision(), "violations": violations}))
}

async fn search(State(state): State<AppState>, Query(q): Query<SearchQuery>) -> ApiResult {
    let query =
        q.q.filter(|q| !q.is_empty())
            .ok_or_else(|| ApiError::bad_request("query parameter 'q' is required"))?;
    let s = read!(state);
    ok(json!({"revision": s.revision(), "matches": s.search(&query)}))
}

async fn save(State(state): State<AppState>, bytes: Bytes) -> ApiResult {
    let req: Save = body(&bytes)?;
    let s = read!(state);
    let doc = s.save(req.scope_path.as_deref())?;
    ok(json!({"revision": s.revision(), "config": doc.to_json_value()}))
}

async fn load(State(state): State<AppState>, bytes: Bytes) -> ApiResult {
    let req: Load = body(&bytes)?;
    let doc = parse_document(&req.config).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let mut s = write!(state);
    s.check_revision(req.expected_revision)?;
    ok(s.load(&doc, req.graft_path.as_deref())?)
}

async fn generate(State(state): State<AppState>) -> ApiResult {
    let s = read!(state);
    let doc = s.generate()?;
    ok(
        json!({"revision": s.revision(), "config": doc.to_json_value(), "text": doc.to_json_string()}),
    )
}

async fn reset(State(state): State<AppState>, bytes: Bytes) -> ApiResult {
    let req: RevisionOnly = body(&bytes)?;
    let mut s = write!(state);
    s.check_revision(req.expected_revision)?;
    ok(s.reset())
}

async fn dot(State(state): State<AppState>) -> ApiResult {
    let text = to_dot(read!(state).tree(), true);
    Ok((
        [(header::CONTENT_TYPE, "text/vnd.graphviz; charset=utf-8")],
        text,
    )
        .into_response())
}

fn event(value: JsonValue) -> Bytes {
    let mut line = value.to_string();
    line.push('\n');
    Bytes::from(line)
}

/// Streams the run as newline-delimited JSON: one `log` event per log line,
/// then a final `done` or `error` event.
async fn run(State(state): State<AppState>) -> ApiResult {
    let tree = read!(state).runnable()?;
    let (tx, rx) = tokio::sync::mpsc::unbounded_channel::<Bytes>();
    tokio::task::spawn_blocking(move || {
        let result = run_experiment(&tree, &mut |line| {
            let _ = tx.send(event(json!({"event": "log", "line": line})));
        });
        let last = match result {
            Ok(report) => {
                let mut report = serde_json::to_value(report).expect("report serializes");
                if let Some(map) = report.as_object_mut() {
                    map.remove("log_lines");
                }
                json!({"event": "done", "report": report})
            }
            Err(e) => json!({"event": "error", "error": e.to_string()}),
        };
        let _ = tx.send(event(last));
    });
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        rx.recv()
            .await
            .map(|chunk| (Ok::<_, Infallible>(chunk), rx))
    });
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        Body::from_stream(stream),
    )
        .into_response())
}
