use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Serialize;

use crate::actions::ActionRegistry;
use crate::corpus::{Domain, Story, UtteranceExample, ACTION_LISTEN};
use crate::entity::{train_crf, CrfConfig, CrfModel, EntitySpan};
use crate::error::Result;
use crate::intent::{train_intent, IntentConfig, IntentModel};

use super::policy::{ensemble_select, memo_train, rnn_train, MemoPolicy, PolicyConfig, PolicyPrediction, RnnPolicy};
use super::{state_window, stories_to_training, user_events, DialogueEvent, DialogueTracker, EventLog, UserEntity};

/// Most actions the bot may take in reply to one user message.
pub const MAX_ACTIONS_PER_MESSAGE: usize = 10;
pub const ERROR_MESSAGE: &str = "maaf, terjadi kesalahan";
/// User text that resets the conversation.
pub const RESTART_COMMAND: &str = "/restart";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BotMessage {
    pub recipient_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedIntent {
    pub name: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParseResult {
    pub text: String,
    pub intent: RankedIntent,
    pub intent_ranking: Vec<RankedIntent>,
    pub low_confidence: bool,
    pub entities: Vec<EntitySpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnDecision {
    pub action: String,
    pub policy: String,
    pub confidence: f64,
    pub predictions: Vec<PolicyPrediction>,
}

/// What happened while handling the most recent message.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnTrace {
    pub parse: ParseResult,
    pub decisions: Vec<TurnDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DebugRecord {
    pub sender: String,
    pub slots: BTreeMap<String, String>,
    pub latest_intent: Option<String>,
    pub last_action: String,
    pub parse: Option<ParseResult>,
    pub last_decision: Option<TurnDecision>,
    pub decisions: Vec<TurnDecision>,
}

/// The four trained models.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub intent: IntentModel,
    pub crf: CrfModel,
    pub memo: MemoPolicy,
    pub rnn: RnnPolicy,
}

impl Models {
    pub const INTENT_FILE: &'static str = "intent.dfm";
    pub const CRF_FILE: &'static str = "crf.dfm";
    pub const MEMO_FILE: &'static str = "memo.dfm";
    pub const RNN_FILE: &'static str = "rnnpolicy.dfm";

    pub fn train(examples: &[UtteranceExample], stories: &[Story], domain: &Domain, seed: u64) -> Result<Self> {
        let intent = train_intent(examples, domain, &IntentConfig::default(), seed)?;
        let crf = train_crf(examples, domain, &CrfConfig::default())?;
        let policy_config = PolicyConfig::for_domain(domain);
        let samples = stories_to_training(stories, domain, policy_config.max_history)?;
        let memo = memo_train(&samples, domain)?;
        let (rnn, _) = rnn_train(&samples, domain, &policy_config, seed.wrapping_add(1))?;
        Ok(Models { intent, crf, memo, rnn })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.intent.save(&dir.join(Self::INTENT_FILE))?;
        self.crf.save(&dir.join(Self::CRF_FILE))?;
        self.memo.save(&dir.join(Self::MEMO_FILE))?;
        self.rnn.save(&dir.join(Self::RNN_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Models {
            intent: IntentModel::load(&dir.join(Self::INTENT_FILE))?,
            crf: CrfModel::load(&dir.join(Self::CRF_FILE))?,
            memo: MemoPolicy::load(&dir.join(Self::MEMO_FILE))?,
            rnn: RnnPolicy::load(&dir.join(Self::RNN_FILE))?,
        })
    }
}

/// Trained NLU, policies, domain and actions. Read-only while serving.
#[derive(Debug, Clone)]
pub struct Engine {
    pub domain: Domain,
    pub models: Models,
    pub actions: ActionRegistry,
}

impl Engine {
    pub fn new(domain: Domain, models: Models, actions: ActionRegistry) -> Self {
        Engine {
            domain,
            models,
            actions,
        }
    }

    pub fn parse(&self, text: &str) -> ParseResult {
        let p = self.models.intent.predict(text);
        let ranking: Vec<RankedIntent> = p
            .ranking
            .iter()
            .map(|(name, confidence)| RankedIntent {
                name: name.clone(),
                confidence: *confidence,
            })
            .collect();
        ParseResult {
            text: text.to_string(),
            intent: RankedIntent {
                name: p.intent,
                confidence: p.confidence,
            },
            intent_ranking: ranking,
            low_confidence: p.low_confidence,
            entities: self.models.crf.extract(text, &self.domain.synonyms),
        }
    }

    /// Policy predictions for the tracker's current window.
    pub fn predict_next(&self, tracker: &DialogueTracker) -> Result<Vec<PolicyPrediction>> {
        let window = state_window(tracker, &self.domain, self.models.rnn.config.max_history)?;
        Ok(vec![
            self.models.memo.predict(&window),
            self.models.rnn.predict(&window),
        ])
    }

    fn fail(&self, tracker: &mut DialogueTracker, out: &mut Vec<BotMessage>) {
        tracker.apply(DialogueEvent::BotUttered {
            text: ERROR_MESSAGE.to_string(),
        });
        tracker.apply(DialogueEvent::ActionExecuted {
            name: ACTION_LISTEN.to_string(),
        });
        out.push(BotMessage {
            recipient_id: tracker.sender().to_string(),
            text: ERROR_MESSAGE.to_string(),
        });
    }

    /// Parses `text`, then runs actions until the policies choose to listen.
    pub fn handle_message(&self, tracker: &mut DialogueTracker, text: &str) -> Vec<BotMessage> {
        let mut out = Vec::new();
        if text.trim() == RESTART_COMMAND {
            tracker.apply(DialogueEvent::Restarted);
            tracker.trace = None;
            return out;
        }
        let parse = self.parse(text);
        let entities = parse
            .entities
            .iter()
            .map(|e| UserEntity {
                entity_type: e.entity_type.clone(),
                value: e.value.clone(),
                confidence: e.confidence,
            })
            .collect();
        for e in user_events(
            &self.domain,
            text,
            &parse.intent.name,
            parse.intent.confidence,
            entities,
        ) {
            tracker.apply(e);
        }
        let mut decisions = Vec::new();
        let mut listened = false;
        for _ in 0..MAX_ACTIONS_PER_MESSAGE {
            let predictions = match self.predict_next(tracker) {
                Ok(p) => p,
                Err(e) => {
                    tracing::error!(error = %e, "could not featurise conversation state");
                    break;
                }
            };
            let d = ensemble_select(&predictions);
            decisions.push(TurnDecision {
                action: d.action.clone(),
                policy: d.policy,
                confidence: d.confidence,
                predictions,
            });
            let result = self.actions.execute(&d.action, tracker, &self.domain);
            tracker.apply(DialogueEvent::ActionExecuted { name: d.action.clone() });
            if d.action == ACTION_LISTEN {
                listened = true;
                break;
            }
            match result {
                Ok(r) => {
                    for text in r.messages {
                        tracker.apply(DialogueEvent::BotUttered { text: text.clone() });
                        out.push(BotMessage {
                            recipient_id: tracker.sender().to_string(),
                            text,
                        });
                    }
                    for e in r.events {
                        tracker.apply(e);
                    }
                }
                Err(e) => {
                    tracing::error!(error = %e, action = %d.action, "action failed");
                    break;
                }
            }
        }
        if !listened {
            self.fail(tracker, &mut out);
        }
        tracker.trace = Some(TurnTrace { parse, decisions });
        out
    }
}

/// Trackers for many senders, optionally persisted as event logs.
#[derive(Debug, Default)]
pub struct Conversations {
    trackers: HashMap<String, DialogueTracker>,
    log: Option<EventLog>,
}

impl Conversations {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_log(log: EventLog) -> Self {
        Conversations {
            trackers: HashMap::new(),
            log: Some(log),
        }
    }

    /// Existing tracker for `sender`, from memory or the event log.
    pub fn get(&mut self, sender: &str) -> Result<Option<&DialogueTracker>> {
        if !self.trackers.contains_key(sender) {
            let loaded = match &self.log {
                Some(log) => log.load(sender)?,
                None => None,
            };
            match loaded {
                Some(t) => {
                    self.trackers.insert(sender.to_string(), t);
                }
                None => return Ok(None),
            }
        }
        Ok(self.trackers.get(sender))
    }

    pub fn handle(&mut self, engine: &Engine, sender: &str, text: &str) -> Result<Vec<BotMessage>> {
        self.get(sender)?;
        let tracker = self
            .trackers
            .entry(sender.to_string())
            .or_insert_with(|| DialogueTracker::new(sender));
        let before = tracker.events().len();
        let messages = engine.handle_message(tracker, text);
        if let Some(log) = &self.log {
            log.append(sender, &tracker.events()[before..])?;
        }
        Ok(messages)
    }

    pub fn debug(&mut self, sender: &str) -> Result<Option<DebugRecord>> {
        Ok(self.get(sender)?.map(DialogueTracker::debug_record))
    }
}
