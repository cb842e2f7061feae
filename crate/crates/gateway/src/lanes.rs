//! One worker task per sender, so a conversation's messages are handled
//! strictly in arrival order while different senders proceed in parallel.

use std::collections::HashMap;
use std::sync::Arc;

use anyhow::{anyhow, Result};
use dialogforge::dialogue::{BotMessage, DebugRecord, DialogueTracker, Engine, EventLog};
use tokio::sync::{mpsc, oneshot, Mutex};

use crate::messenger::{send_reply, Channel, InboundMessage, MessageSender};

enum Job {
    Message {
        inbound: InboundMessage,
        reply: Option<oneshot::Sender<Result<Vec<BotMessage>>>>,
    },
    Debug(oneshot::Sender<Option<DebugRecord>>),
}

pub struct Lanes {
    engine: Arc<Engine>,
    log: Option<EventLog>,
    outbound: Arc<dyn MessageSender>,
    lanes: Mutex<HashMap<String, mpsc::UnboundedSender<Job>>>,
}

impl std::fmt::Debug for Lanes {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lanes").field("log", &self.log).finish_non_exhaustive()
    }
}

impl Lanes {
    pub fn new(engine: Arc<Engine>, log: Option<EventLog>, outbound: Arc<dyn MessageSender>) -> Self {
        Lanes {
            engine,
            log,
            outbound,
            lanes: Mutex::new(HashMap::new()),
        }
    }

    async fn lane(&self, sender: &str) -> mpsc::UnboundedSender<Job> {
        let mut lanes = self.lanes.lock().await;
        if let Some(tx) = lanes.get(sender).filter(|tx| !tx.is_closed()) {
            return tx.clone();
        }
        let (tx, rx) = mpsc::unbounded_channel();
        tokio::spawn(run_lane(
            sender.to_string(),
            rx,
            self.engine.clone(),
            self.log.clone(),
            self.outbound.clone(),
        ));
        lanes.insert(sender.to_string(), tx.clone());
        tx
    }

    async fn has_conversation(&self, sender: &str) -> bool {
        self.lanes.lock().await.contains_key(sender) || self.log.as_ref().is_some_and(|l| l.exists(sender))
    }

    /// Queues a Messenger message; replies go out through the send API.
    pub async fn submit(&self, inbound: InboundMessage) {
        let lane = self.lane(&inbound.sender).await;
        if lane.send(Job::Message { inbound, reply: None }).is_err() {
            tracing::error!("conversation worker stopped unexpectedly");
        }
    }

    /// Handles a message and waits for the bot's replies.
    pub async fn converse(&self, inbound: InboundMessage) -> Result<Vec<BotMessage>> {
        let (tx, rx) = oneshot::channel();
        let lane = self.lane(&inbound.sender).await;
        lane.send(Job::Message {
            inbound,
            reply: Some(tx),
        })
        .map_err(|_| anyhow!("conversation worker stopped"))?;
        rx.await
            .map_err(|_| anyhow!("conversation worker dropped the request"))?
    }

    /// Debug view of a conversation, or `None` if the sender is unknown.
    pub async fn debug(&self, sender: &str) -> Option<DebugRecord> {
        if !self.has_conversation(sender).await {
            return None;
        }
        let (tx, rx) = oneshot::channel();
        self.lane(sender).await.send(Job::Debug(tx)).ok()?;
        rx.await.ok().flatten()
    }
}

async fn run_lane(
    sender: String,
    mut rx: mpsc::UnboundedReceiver<Job>,
    engine: Arc<Engine>,
    log: Option<EventLog>,
    outbound: Arc<dyn MessageSender>,
) {
    let mut tracker = match &log {
        Some(log) => match log.load(&sender) {
            Ok(t) => t,
            Err(e) => {
                tracing::error!(error = %e, "could not load event log; starting afresh");
                None
            }
        },
        None => None,
    };
    while let Some(job) = rx.recv().await {
        match job {
            Job::Debug(reply) => {
                let _ = reply.send(tracker.as_ref().map(DialogueTracker::debug_record));
            }
            Job::Message { inbound, reply } => {
                let t = tracker.take().unwrap_or_else(|| DialogueTracker::new(sender.clone()));
                let (t, result) = handle(&engine, log.as_ref(), t, inbound.text).await;
                // After a panic the in-memory tracker is gone; the log still has it.
                tracker = t.or_else(|| log.as_ref().and_then(|l| l.load(&sender).ok().flatten()));
                match (inbound.channel, reply) {
                    (_, Some(reply)) => {
                        let _ = reply.send(result);
                    }
                    (Channel::Facebook, None) => match result {
                        Ok(messages) => {
                            let texts: Vec<String> = messages.into_iter().map(|m| m.text).collect();
                            let report = send_reply(outbound.as_ref(), &sender, &texts).await;
                            tracing::debug!(?report, "reply delivered");
                        }
                        Err(e) => tracing::error!(error = %e, "message handling failed"),
                    },
                    (Channel::Rest, None) => {}
                }
            }
        }
    }
}

async fn handle(
    engine: &Arc<Engine>,
    log: Option<&EventLog>,
    mut tracker: DialogueTracker,
    text: String,
) -> (Option<DialogueTracker>, Result<Vec<BotMessage>>) {
    let before = tracker.events().len();
    let engine = engine.clone();
    // Actions may block on HTTP, so keep them off the async workers.
    let joined = tokio::task::spawn_blocking(move || {
        let messages = engine.handle_message(&mut tracker, &text);
        (tracker, messages)
    })
    .await;
    let (tracker, messages) = match joined {
        Ok(v) => v,
        Err(e) => return (None, Err(anyhow!("engine task failed: {e}"))),
    };
    if let Some(log) = log {
        if let Err(e) = log.append(tracker.sender(), &tracker.events()[before..]) {
            tracing::error!(error = %e, "could not persist events");
        }
    }
    (Some(tracker), Ok(messages))
}
