//! Messenger wire format: verification handshake, inbound events, replies.

use std::future::Future;
use std::pin::Pin;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, TimeZone, Utc};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::config::Secret;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Facebook,
    Rest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InboundMessage {
    pub channel: Channel,
    pub sender: String,
    pub text: String,
    pub received_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifyOutcome {
    /// Echo this challenge with status 200.
    Accept(String),
    /// Token or mode mismatch: 403.
    Forbidden,
    /// Required parameters absent: 400.
    BadRequest,
}

/// Checks the subscription handshake parameters against the verify token.
pub fn webhook_verify(
    mode: Option<&str>,
    token: Option<&str>,
    challenge: Option<&str>,
    expected: &Secret,
) -> VerifyOutcome {
    let (Some(mode), Some(token), Some(challenge)) = (mode, token, challenge) else {
        return VerifyOutcome::BadRequest;
    };
    if mode == "subscribe" && !expected.is_empty() && token == expected.expose() {
        VerifyOutcome::Accept(challenge.to_string())
    } else {
        VerifyOutcome::Forbidden
    }
}

#[derive(Debug, Deserialize)]
struct PageEvent {
    #[allow(dead_code)]
    object: Option<String>,
    #[serde(default)]
    entry: Vec<Entry>,
}

#[derive(Debug, Deserialize)]
struct Entry {
    #[serde(default)]
    messaging: Vec<MessagingEvent>,
}

#[derive(Debug, Deserialize)]
struct Party {
    id: String,
}

#[derive(Debug, Deserialize)]
struct MessagingEvent {
    sender: Option<Party>,
    timestamp: Option<i64>,
    message: Option<MessageBody>,
    postback: Option<Postback>,
}

#[derive(Debug, Deserialize)]
struct MessageBody {
    text: Option<String>,
    #[serde(default)]
    is_echo: bool,
}

#[derive(Debug, Deserialize)]
struct Postback {
    payload: Option<String>,
    title: Option<String>,
}

/// Extracts text messages and postbacks; everything else is ignored.
pub fn webhook_receive(body: &[u8]) -> Result<Vec<InboundMessage>, serde_json::Error> {
    let event: PageEvent = serde_json::from_slice(body)?;
    let mut out = Vec::new();
    for m in event.entry.into_iter().flat_map(|e| e.messaging) {
        let Some(sender) = m.sender else { continue };
        let text = match (m.message, m.postback) {
            (Some(msg), _) if !msg.is_echo => msg.text,
            (_, Some(pb)) => pb.payload.or(pb.title),
            _ => None,
        };
        let Some(text) = text.filter(|t| !t.trim().is_empty()) else {
            continue;
        };
        let received_at = m
            .timestamp
            .and_then(|ms| Utc.timestamp_millis_opt(ms).single())
            .unwrap_or_else(Utc::now);
        out.push(InboundMessage {
            channel: Channel::Facebook,
            sender: sender.id,
            text,
            received_at,
        });
    }
    Ok(out)
}

/// Validates an `X-Hub-Signature-256: sha256=<hex>` header.
pub fn signature_valid(app_secret: &Secret, body: &[u8], header: Option<&str>) -> bool {
    let Some(hex_sig) = header.and_then(|h| h.strip_prefix("sha256=")) else {
        return false;
    };
    let Ok(sig) = hex::decode(hex_sig) else {
        return false;
    };
    let mut mac = Hmac::<Sha256>::new_from_slice(app_secret.expose().as_bytes()).expect("any key length");
    mac.update(body);
    mac.verify_slice(&sig).is_ok()
}

pub fn sign(app_secret: &Secret, body: &[u8]) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(app_secret.expose().as_bytes()).expect("any key length");
    mac.update(body);
    format!("sha256={}", hex::encode(mac.finalize().into_bytes()))
}

pub type SendFuture<'a> = Pin<Box<dyn Future<Output = Result<(), String>> + Send + 'a>>;

/// Delivers one text to one recipient.
pub trait MessageSender: Send + Sync {
    fn send<'a>(&'a self, recipient: &'a str, text: &'a str) -> SendFuture<'a>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DeliveryReport {
    pub sent: usize,
    pub retries: usize,
    pub failed: usize,
}

/// Sends each text in order, retrying a failed send once.
pub async fn send_reply(client: &dyn MessageSender, recipient: &str, texts: &[String]) -> DeliveryReport {
    let mut report = DeliveryReport::default();
    for text in texts {
        match client.send(recipient, text).await {
            Ok(()) => report.sent += 1,
            Err(first) => {
                tracing::warn!(error = %first, "send failed, retrying once");
                report.retries += 1;
                match client.send(recipient, text).await {
                    Ok(()) => report.sent += 1,
                    Err(second) => {
                        tracing::error!(error = %second, "send failed permanently");
                        report.failed += 1;
                    }
                }
            }
        }
    }
    report
}

pub const GRAPH_API_URL: &str = "https://graph.facebook.com/v2.6/me/messages";

/// Messenger Send API client.
pub struct GraphApiSender {
    http: reqwest::Client,
    url: String,
    token: Secret,
}

impl std::fmt::Debug for GraphApiSender {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GraphApiSender")
            .field("url", &self.url)
            .field("token", &self.token)
            .finish()
    }
}

impl GraphApiSender {
    pub fn new(url: impl Into<String>, token: Secret) -> Self {
        GraphApiSender {
            http: reqwest::Client::builder()
                .timeout(std::time::Duration::from_secs(10))
                .build()
                .expect("http client"),
            url: url.into(),
            token,
        }
    }
}

#[derive(Serialize)]
struct Outbound<'a> {
    recipient: Recipient<'a>,
    message: OutText<'a>,
}

#[derive(Serialize)]
struct Recipient<'a> {
    id: &'a str,
}

#[derive(Serialize)]
struct OutText<'a> {
    text: &'a str,
}

impl MessageSender for GraphApiSender {
    fn send<'a>(&'a self, recipient: &'a str, text: &'a str) -> SendFuture<'a> {
        Box::pin(async move {
            if self.token.is_empty() {
                return Err("page access token is not configured".to_string());
            }
            let resp = self
                .http
                .post(&self.url)
                .query(&[("access_token", self.token.expose())])
                .json(&Outbound {
                    recipient: Recipient { id: recipient },
                    message: OutText { text },
                })
                .send()
                .await
                // The URL carries the token, so keep it out of error text.
                .map_err(|e| e.without_url().to_string())?;
            if resp.status().is_success() {
                Ok(())
            } else {
                Err(format!("send API answered {}", resp.status()))
            }
        })
    }
}

/// Records sends in memory; can be told to fail the next few attempts.
#[derive(Debug, Default)]
pub struct CaptureSender {
    sent: Mutex<Vec<(String, String)>>,
    attempts: AtomicUsize,
    fail_next: AtomicUsize,
}

impl CaptureSender {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fail_next(&self, n: usize) {
        self.fail_next.store(n, Ordering::SeqCst);
    }

    pub fn sent(&self) -> Vec<(String, String)> {
        self.sent.lock().expect("capture lock").clone()
    }

    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }
}

impl MessageSender for CaptureSender {
    fn send<'a>(&'a self, recipient: &'a str, text: &'a str) -> SendFuture<'a> {
        Box::pin(async move {
            self.attempts.fetch_add(1, Ordering::SeqCst);
            let failing = self
                .fail_next
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                .is_ok();
            if failing {
                return Err("injected failure".to_string());
            }
            self.sent
                .lock()
                .expect("capture lock")
                .push((recipient.to_string(), text.to_string()));
            Ok(())
        })
    }
}
