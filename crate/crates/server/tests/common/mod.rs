#![allow(dead_code)]

use std::sync::Arc;

use argtree_core::demo::build_demo_registry_with;
use argtree_core::{EntryPoint, Placeholders, Registry};
use argtree_server::{router, AppState, EditorSession};
use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub fn session_with(registry: Registry, save_root: &str) -> EditorSession {
    let env = Placeholders::from([("path_tmp".to_string(), save_root.to_string())]);
    EditorSession::new(Arc::new(registry), env, EntryPoint::default())
}

pub fn demo_session(save_root: &str) -> EditorSession {
    session_with(build_demo_registry_with(false), save_root)
}

pub fn app(session: EditorSession) -> Router {
    router(AppState::new(session))
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: String,
    pub text: String,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or_else(|e| panic!("{e}: {}", self.text))
    }

    pub fn codes(&self) -> Vec<String> {
        self.json()["violations"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v["code"].as_str().unwrap().to_string())
            .collect()
    }
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> Reply {
    let body = match body {
        Some(v) => Body::from(v.to_string()),
        None => Body::empty(),
    };
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body)
        .unwrap();
    raw(app, request).await
}

pub async fn raw(app: &Router, request: Request<Body>) -> Reply {
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let content_type = response
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    Reply {
        status,
        content_type,
        text: String::from_utf8(bytes.to_vec()).unwrap(),
    }
}

pub async fn add(app: &Router, path: Value, req_key: &str, class_name: &str) -> Reply {
    call(
        app,
        Method::POST,
        "/api/v1/tree/children",
        Some(json!({"path": path, "req_key": req_key, "class_name": class_name})),
    )
    .await
}

pub async fn set(app: &Router, path: Value, arg: &str, value: Value) -> Reply {
    call(
        app,
        Method::PATCH,
        "/api/v1/tree/args",
        Some(json!({"path": path, "arg_name": arg, "value": value})),
    )
    .await
}

pub fn task() -> Value {
    json!([["cls_task", 0]])
}

pub fn under_task(key: &str, index: usize) -> Value {
    json!([["cls_task", 0], [key, index]])
}

/// The scripted editing sequence: task, device, trainer, a search method
/// with its data, and three argument edits.
pub async fn build_experiment(app: &Router) {
    for (path, key, class) in [
        (json!([]), "cls_task", "SingleSearchTask"),
        (task(), "cls_device", "CpuDevicesManager"),
        (task(), "cls_trainer", "SimpleTrainer"),
        (task(), "cls_method", "UniformRandomMethod"),
        (
            under_task("cls_method", 0),
            "cls_data",
            "QuadraticObjective",
        ),
    ] {
        let r = add(app, path, key, class).await;
        assert_eq!(r.status, StatusCode::OK, "{key} {class}: {}", r.text);
    }
    for (path, arg, value) in [
        (under_task("cls_trainer", 0), "max_epochs", json!("3")),
        (under_task("cls_trainer", 0), "ema_decay", json!(0.5)),
        (task(), "seed", json!(7)),
    ] {
        let r = set(app, path, arg, value).await;
        assert_eq!(r.status, StatusCode::OK, "{arg}: {}", r.text);
    }
}
