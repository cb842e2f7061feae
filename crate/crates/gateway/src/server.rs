//! HTTP surface: Messenger webhook, REST channel, debug view and health.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use chrono::Utc;
use serde::Deserialize;

use crate::config::Credentials;
use crate::lanes::Lanes;
use crate::messenger::{signature_valid, webhook_receive, webhook_verify, Channel, InboundMessage, VerifyOutcome};

pub const SIGNATURE_HEADER: &str = "x-hub-signature-256";

#[derive(Debug, Clone)]
pub struct AppState {
    pub lanes: Arc<Lanes>,
    pub credentials: Arc<Credentials>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route(
            "/webhooks/facebook/webhook",
            get(facebook_verify).post(facebook_receive),
        )
        .route("/webhooks/rest/webhook", axum::routing::post(rest_receive))
        .route("/conversations/{sender}/debug", get(debug))
        .route("/health", get(|| async { "ok" }))
        .with_state(state)
}

fn error(status: StatusCode, message: &str) -> Response {
    (status, Json(serde_json::json!({ "error": message }))).into_response()
}

async fn facebook_verify(State(state): State<AppState>, Query(q): Query<HashMap<String, String>>) -> Response {
    let p = |k: &str| q.get(k).map(String::as_str);
    match webhook_verify(
        p("hub.mode"),
        p("hub.verify_token"),
        p("hub.challenge"),
        &state.credentials.verify_token,
    ) {
        VerifyOutcome::Accept(challenge) => (StatusCode::OK, challenge).into_response(),
        VerifyOutcome::Forbidden => error(StatusCode::FORBIDDEN, "verification failed"),
        VerifyOutcome::BadRequest => error(StatusCode::BAD_REQUEST, "missing hub parameters"),
    }
}

async fn facebook_receive(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    if let Some(secret) = &state.credentials.app_secret {
        let header = headers.get(SIGNATURE_HEADER).and_then(|v| v.to_str().ok());
        if !signature_valid(secret, &body, header) {
            return error(StatusCode::FORBIDDEN, "bad signature");
        }
    }
    let messages = match webhook_receive(&body) {
        Ok(m) => m,
        Err(e) => {
            tracing::warn!(error = %e, "unparseable webhook body");
            return error(StatusCode::BAD_REQUEST, "unparseable payload");
        }
    };
    // Acknowledge at once; the lanes answer through the send API.
    for m in messages {
        state.lanes.submit(m).await;
    }
    (StatusCode::OK, "EVENT_RECEIVED").into_response()
}

#[derive(Debug, Deserialize)]
struct RestRequest {
    sender: String,
    message: String,
}

async fn rest_receive(State(state): State<AppState>, body: Bytes) -> Response {
    let req: RestRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(_) => return error(StatusCode::BAD_REQUEST, "expected {\"sender\": ..., \"message\": ...}"),
    };
    if req.sender.trim().is_empty() || req.message.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "sender and message must be non-empty");
    }
    let inbound = InboundMessage {
        channel: Channel::Rest,
        sender: req.sender,
        text: req.message,
        received_at: Utc::now(),
    };
    match state.lanes.converse(inbound).await {
        Ok(messages) => Json(messages).into_response(),
        Err(e) => {
            tracing::error!(error = %e, "rest message failed");
            error(StatusCode::INTERNAL_SERVER_ERROR, "internal error")
        }
    }
}

async fn debug(State(state): State<AppState>, Path(sender): Path<String>) -> Response {
    match state.lanes.debug(&sender).await {
        Some(record) => Json(record).into_response(),
        None => error(StatusCode::NOT_FOUND, "unknown conversation"),
    }
}
