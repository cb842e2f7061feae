//! Conversation tracking, story featurisation, policies and the message loop.

mod engine;
mod policy;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Domain, Step, Story, ACTION_LISTEN};
use crate::error::{Error, Result};
use crate::neuralcore::Matrix;

pub use engine::{
    BotMessage, Conversations, DebugRecord, Engine, Models, ParseResult, RankedIntent, TurnDecision, TurnTrace,
    ERROR_MESSAGE, MAX_ACTIONS_PER_MESSAGE, RESTART_COMMAND,
};
pub use policy::{
    ensemble_select, memo_predict, memo_train, rnn_predict, rnn_train, Decision, MemoPolicy, PolicyConfig,
    PolicyPrediction, RnnPolicy, FALLBACK_POLICY, MEMO_PRIORITY, RNN_PRIORITY,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserEntity {
    pub entity_type: String,
    pub value: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum DialogueEvent {
    UserUttered {
        text: String,
        intent: String,
        entities: Vec<UserEntity>,
        confidence: f64,
    },
    ActionExecuted {
        name: String,
    },
    BotUttered {
        text: String,
    },
    SlotSet {
        slot: String,
        value: Option<String>,
    },
    Restarted,
}

/// The featurisable part of the conversation at one decision point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StateSnapshot {
    pub prev_action: String,
    pub intent: Option<String>,
    pub entities: BTreeSet<String>,
    pub filled_slots: BTreeSet<String>,
}

/// State derived by folding the event log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    pub slots: BTreeMap<String, String>,
    pub latest_text: Option<String>,
    pub latest_intent: Option<String>,
    pub latest_entities: Vec<UserEntity>,
    pub last_action: String,
    /// Snapshot taken before each executed action since the last restart.
    pub history: Vec<StateSnapshot>,
}

impl Default for TrackerState {
    fn default() -> Self {
        TrackerState {
            slots: BTreeMap::new(),
            latest_text: None,
            latest_intent: None,
            latest_entities: Vec::new(),
            last_action: ACTION_LISTEN.to_string(),
            history: Vec::new(),
        }
    }
}

impl TrackerState {
    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            prev_action: self.last_action.clone(),
            intent: self.latest_intent.clone(),
            entities: self.latest_entities.iter().map(|e| e.entity_type.clone()).collect(),
            filled_slots: self.slots.keys().cloned().collect(),
        }
    }

    fn apply(&mut self, event: &DialogueEvent) {
        match event {
            DialogueEvent::UserUttered {
                text, intent, entities, ..
            } => {
                self.latest_text = Some(text.clone());
                self.latest_intent = Some(intent.clone());
                self.latest_entities = entities.clone();
            }
            DialogueEvent::ActionExecuted { name } => {
                let snap = self.snapshot();
                self.history.push(snap);
                self.last_action = name.clone();
            }
            DialogueEvent::BotUttered { .. } => {}
            DialogueEvent::SlotSet { slot, value } => match value {
                Some(v) => {
                    self.slots.insert(slot.clone(), v.clone());
                }
                None => {
                    self.slots.remove(slot);
                }
            },
            DialogueEvent::Restarted => *self = TrackerState::default(),
        }
    }
}

/// Event-sourced record of one conversation.
#[derive(Debug, Clone)]
pub struct DialogueTracker {
    sender: String,
    events: Vec<DialogueEvent>,
    state: TrackerState,
    /// Parse and policy trace of the most recent message; not part of the log.
    pub(crate) trace: Option<TurnTrace>,
}

impl DialogueTracker {
    pub fn new(sender: impl Into<String>) -> Self {
        DialogueTracker {
            sender: sender.into(),
            events: Vec::new(),
            state: TrackerState::default(),
            trace: None,
        }
    }

    pub fn from_events(sender: impl Into<String>, events: impl IntoIterator<Item = DialogueEvent>) -> Self {
        let mut t = DialogueTracker::new(sender);
        for e in events {
            t.apply(e);
        }
        t
    }

    pub fn sender(&self) -> &str {
        &self.sender
    }

    pub fn events(&self) -> &[DialogueEvent] {
        &self.events
    }

    pub fn state(&self) -> &TrackerState {
        &self.state
    }

    pub fn slots(&self) -> &BTreeMap<String, String> {
        &self.state.slots
    }

    pub fn slot(&self, name: &str) -> Option<&str> {
        self.state.slots.get(name).map(String::as_str)
    }

    pub fn latest_intent(&self) -> Option<&str> {
        self.state.latest_intent.as_deref()
    }

    pub fn last_action(&self) -> &str {
        &self.state.last_action
    }

    pub fn trace(&self) -> Option<&TurnTrace> {
        self.trace.as_ref()
    }

    /// Latest parse, policy decisions and current slots.
    pub fn debug_record(&self) -> DebugRecord {
        DebugRecord {
            sender: self.sender.clone(),
            slots: self.state.slots.clone(),
            latest_intent: self.state.latest_intent.clone(),
            last_action: self.state.last_action.clone(),
            parse: self.trace.as_ref().map(|t| t.parse.clone()),
            last_decision: self.trace.as_ref().and_then(|t| t.decisions.last().cloned()),
            decisions: self.trace.as_ref().map(|t| t.decisions.clone()).unwrap_or_default(),
        }
    }

    pub fn apply(&mut self, event: DialogueEvent) {
        self.state.apply(&event);
        self.events.push(event);
    }

    /// Re-derives the state from scratch; always equals `state()`.
    pub fn replay(&self) -> TrackerState {
        let mut s = TrackerState::default();
        for e in &self.events {
            s.apply(e);
        }
        s
    }
}

pub fn tracker_apply(mut tracker: DialogueTracker, event: DialogueEvent) -> DialogueTracker {
    tracker.apply(event);
    tracker
}

/// Events for a parsed user message: the utterance plus a `SlotSet` for every
/// entity whose type names a slot.
pub fn user_events(
    domain: &Domain,
    text: &str,
    intent: &str,
    confidence: f64,
    entities: Vec<UserEntity>,
) -> Vec<DialogueEvent> {
    let slot_sets: Vec<DialogueEvent> = entities
        .iter()
        .filter(|e| domain.slot_index(&e.entity_type).is_some())
        .map(|e| DialogueEvent::SlotSet {
            slot: e.entity_type.clone(),
            value: Some(e.value.clone()),
        })
        .collect();
    let mut out = vec![DialogueEvent::UserUttered {
        text: text.to_string(),
        intent: intent.to_string(),
        entities,
        confidence,
    }];
    out.extend(slot_sets);
    out
}

/// State dimension: previous action, intent, entity flags, slot flags.
pub fn state_dim(domain: &Domain) -> usize {
    domain.actions.len() + domain.intents.len() + domain.entity_types.len() + domain.slots.len()
}

pub fn featurize_snapshot(snap: &StateSnapshot, domain: &Domain) -> Result<Vec<f64>> {
    let (na, ni, ne) = (domain.actions.len(), domain.intents.len(), domain.entity_types.len());
    let mut v = vec![0.0; state_dim(domain)];
    let a = domain
        .action_index(&snap.prev_action)
        .ok_or_else(|| Error::unknown("action", &snap.prev_action))?;
    v[a] = 1.0;
    if let Some(intent) = &snap.intent {
        let i = domain
            .intent_index(intent)
            .ok_or_else(|| Error::unknown("intent", intent))?;
        v[na + i] = 1.0;
    }
    for e in &snap.entities {
        let i = domain.entity_index(e).ok_or_else(|| Error::unknown("entity type", e))?;
        v[na + ni + i] = 1.0;
    }
    for s in &snap.filled_slots {
        if let Some(i) = domain.slot_index(s) {
            v[na + ni + ne + i] = 1.0;
        }
    }
    Ok(v)
}

/// Current state of the tracker as a binary vector.
pub fn featurize_state(tracker: &DialogueTracker, domain: &Domain) -> Result<Vec<f64>> {
    featurize_snapshot(&tracker.state().snapshot(), domain)
}

/// The last `max_history` decision states (previous ones plus the current
/// one), zero-padded at the oldest end.
pub fn state_window(tracker: &DialogueTracker, domain: &Domain, max_history: usize) -> Result<Matrix> {
    let state = tracker.state();
    let current = state.snapshot();
    let all: Vec<&StateSnapshot> = state.history.iter().chain(std::iter::once(&current)).collect();
    let take = all.len().min(max_history);
    let dim = state_dim(domain);
    let mut m = Matrix::zeros(max_history, dim);
    for (row, snap) in (max_history - take..max_history).zip(&all[all.len() - take..]) {
        m.row_mut(row).copy_from_slice(&featurize_snapshot(snap, domain)?);
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub window: Matrix,
    pub action: usize,
}

fn story_user_events(domain: &Domain, intent: &str, entities: &BTreeMap<String, String>) -> Vec<DialogueEvent> {
    let ents = entities
        .iter()
        .map(|(t, v)| UserEntity {
            entity_type: t.clone(),
            value: domain.canonical_value(v),
            confidence: 1.0,
        })
        .collect();
    user_events(domain, "", intent, 1.0, ents)
}

/// Replays one story, yielding a sample for every bot decision including the
/// implicit `action_listen` that closes each bot turn.
pub fn story_samples(story: &Story, domain: &Domain, max_history: usize) -> Result<Vec<TrainingSample>> {
    if max_history == 0 {
        return Err(Error::InvalidArgument("max_history must be at least 1".into()));
    }
    let mut tracker = DialogueTracker::new(story.name.clone());
    let mut out = Vec::new();
    let act = |tracker: &mut DialogueTracker, name: &str, out: &mut Vec<TrainingSample>| -> Result<()> {
        let action = domain
            .action_index(name)
            .ok_or_else(|| Error::unknown("action", name))?;
        out.push(TrainingSample {
            window: state_window(tracker, domain, max_history)?,
            action,
        });
        tracker.apply(DialogueEvent::ActionExecuted { name: name.to_string() });
        Ok(())
    };
    let mut in_bot_turn = false;
    for step in &story.steps {
        match step {
            Step::User { intent, entities } => {
                if in_bot_turn && tracker.last_action() != ACTION_LISTEN {
                    act(&mut tracker, ACTION_LISTEN, &mut out)?;
                }
                in_bot_turn = false;
                for e in story_user_events(domain, intent, entities) {
                    tracker.apply(e);
                }
            }
            Step::Bot(name) => {
                in_bot_turn = true;
                act(&mut tracker, name, &mut out)?;
            }
        }
    }
    if in_bot_turn && tracker.last_action() != ACTION_LISTEN {
        act(&mut tracker, ACTION_LISTEN, &mut out)?;
    }
    Ok(out)
}

pub fn stories_to_training(stories: &[Story], domain: &Domain, max_history: usize) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::new();
    for story in stories {
        out.extend(story_samples(story, domain, max_history)?);
    }
    Ok(out)
}

/// Append-only newline-delimited event log, one file per sender.
#[derive(Debug, Clone)]
pub struct EventLog {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    timestamp: String,
    #[serde(flatten)]
    event: DialogueEvent,
}

impl EventLog {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(EventLog { dir })
    }

    /// Sender ids are hex-encoded so any id maps to a safe file name.
    pub fn path_for(&self, sender: &str) -> PathBuf {
        let name: String = sender.bytes().map(|b| format!("{b:02x}")).collect();
        self.dir.join(format!("{name}.ndjson"))
    }

    pub fn exists(&self, sender: &str) -> bool {
        self.path_for(sender).exists()
    }

    pub fn append(&self, sender: &str, events: &[DialogueEvent]) -> Result<()> {
        if events.is_empty() {
            return Ok(());
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path_for(sender))?;
        let now = chrono::Utc::now().to_rfc3339();
        let mut buf = String::new();
        for event in events {
            buf.push_str(&serde_json::to_string(&LogLine {
                timestamp: now.clone(),
                event: event.clone(),
            })?);
            buf.push('\n');
        }
        f.write_all(buf.as_bytes())?;
        Ok(())
    }

    pub fn load(&self, sender: &str) -> Result<Option<DialogueTracker>> {
        load_log(&self.path_for(sender), sender)
    }
}

fn load_log(path: &Path, sender: &str) -> Result<Option<DialogueTracker>> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let mut tracker = DialogueTracker::new(sender);
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogLine = serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        tracker.apply(rec.event);
    }
    Ok(Some(tracker))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SlotDef, SlotKind};
    use proptest::prelude::*;

    pub(crate) fn toy_domain() -> Domain {
        Domain {
            intents: vec!["greet".into(), "ask".into()],
            entity_types: vec!["city".into(), "program".into()],
            slots: vec![SlotDef {
                name: "city".into(),
                kind: SlotKind::Text,
            }],
            actions: vec![ACTION_LISTEN.into(), "utter_hello".into(), "action_lookup".into()],
            templates: Default::default(),
            synonyms: BTreeMap::from([("jogja".to_string(), "yogyakarta".to_string())]),
        }
    }

    fn utter(intent: &str) -> DialogueEvent {
        DialogueEvent::UserUttered {
            text: String::new(),
            intent: intent.into(),
            entities: vec![],
            confidence: 1.0,
        }
    }

    #[test]
    fn initial_state_and_slots() {
        let mut t = DialogueTracker::new("u");
        t.apply(utter("greet"));
        assert_eq!(t.latest_intent(), Some("greet"));
        assert_eq!(t.last_action(), ACTION_LISTEN);
        t.apply(DialogueEvent::SlotSet {
            slot: "city".into(),
            value: Some("yogyakarta".into()),
        });
        assert_eq!(t.slot("city"), Some("yogyakarta"));
        t.apply(DialogueEvent::Restarted);
        assert!(t.slots().is_empty());
        assert_eq!(t.sender(), "u");
        assert_eq!(t.events().len(), 3);
    }

    #[test]
    fn state_vector_layout() {
        let d = toy_domain();
        assert_eq!(state_dim(&d), 3 + 2 + 2 + 1);
        let mut t = DialogueTracker::new("u");
        t.apply(utter("greet"));
        let v = featurize_state(&t, &d).unwrap();
        assert_eq!(v.iter().filter(|x| **x == 1.0).count(), 2);
        assert_eq!((v[0], v[3]), (1.0, 1.0));
        t.apply(utter("nope"));
        assert!(featurize_state(&t, &d).is_err());
    }

    #[test]
    fn window_is_padded_oldest_first() {
        let d = toy_domain();
        let mut t = DialogueTracker::new("u");
        t.apply(utter("greet"));
        let w = state_window(&t, &d, 5).unwrap();
        assert!(w.row(0).iter().all(|x| *x == 0.0));
        assert!(w.row(3).iter().all(|x| *x == 0.0));
        assert_eq!(w.row(4)[0], 1.0);
    }

    fn story(steps: Vec<Step>) -> Story {
        Story {
            name: "s".into(),
            steps,
        }
    }

    fn user(intent: &str) -> Step {
        Step::User {
            intent: intent.into(),
            entities: BTreeMap::new(),
        }
    }

    #[test]
    fn one_turn_story_yields_trailing_listen() {
        let d = toy_domain();
        let s = story(vec![user("greet"), Step::Bot("utter_hello".into())]);
        let samples = story_samples(&s, &d, 5).unwrap();
        assert_eq!(samples.iter().map(|s| s.action).collect::<Vec<_>>(), vec![1, 0]);
        // Before the listen the previous action is utter_hello.
        assert_eq!(samples[1].window.row(4)[1], 1.0);
        assert_eq!(samples[1].window.row(3)[0], 1.0);
        // An explicit listen is not doubled.
        let s = story(vec![
            user("greet"),
            Step::Bot("utter_hello".into()),
            Step::Bot(ACTION_LISTEN.into()),
        ]);
        assert_eq!(story_samples(&s, &d, 5).unwrap().len(), 2);
        assert!(stories_to_training(&[], &d, 5).unwrap().is_empty());
    }

    #[test]
    fn long_story_keeps_last_five_states() {
        let d = toy_domain();
        let mut steps = vec![];
        for _ in 0..6 {
            steps.push(user("greet"));
            steps.push(Step::Bot("utter_hello".into()));
        }
        let samples = story_samples(
            &Story {
                name: "long".into(),
                steps,
            },
            &d,
            5,
        )
        .unwrap();
        assert_eq!(samples.len(), 12);
        for s in &samples[4..] {
            for r in 0..5 {
                assert!(s.window.row(r).contains(&1.0));
            }
        }
    }

    #[test]
    fn story_entities_fill_slots() {
        let d = toy_domain();
        let s = story(vec![
            Step::User {
                intent: "ask".into(),
                entities: BTreeMap::from([("city".to_string(), "jogja".to_string())]),
            },
            Step::Bot("action_lookup".into()),
        ]);
        let samples = story_samples(&s, &d, 5).unwrap();
        let last = samples[0].window.row(4);
        // entity flag for city and slot flag for city
        assert_eq!(last[5], 1.0);
        assert_eq!(last[7], 1.0);
    }

    #[test]
    fn event_log_round_trips() {
        let dir = std::env::temp_dir().join(format!("dlgf-log-{}", std::process::id()));
        let log = EventLog::new(&dir).unwrap();
        let events = vec![
            utter("greet"),
            DialogueEvent::ActionExecuted {
                name: "utter_hello".into(),
            },
            DialogueEvent::BotUttered {
                text: "hi\nthere".into(),
            },
            DialogueEvent::Restarted,
        ];
        log.append("a/b", &events[..2]).unwrap();
        log.append("a/b", &events[2..]).unwrap();
        let t = log.load("a/b").unwrap().unwrap();
        assert_eq!(t.events(), &events[..]);
        assert!(log.load("other").unwrap().is_none());
        fs::remove_dir_all(dir).unwrap();
    }

    fn arb_event() -> impl Strategy<Value = DialogueEvent> {
        let name = prop::sample::select(vec!["action_listen", "utter_hello", "action_lookup"]);
        let intent = prop::sample::select(vec!["greet", "ask"]);
        let slot = prop::sample::select(vec!["city", "other"]);
        prop_oneof![
            (intent, prop::bool::ANY).prop_map(|(i, e)| DialogueEvent::UserUttered {
                text: "x".into(),
                intent: i.into(),
                entities: if e {
                    vec![UserEntity {
                        entity_type: "city".into(),
                        value: "v".into(),
                        confidence: 0.5,
                    }]
                } else {
                    vec![]
                },
                confidence: 0.9,
            }),
            name.prop_map(|n| DialogueEvent::ActionExecuted { name: n.into() }),
            "[a-z]{0,4}".prop_map(|text| DialogueEvent::BotUttered { text }),
            (slot, prop::option::of("[a-z]{1,3}"))
                .prop_map(|(s, value)| DialogueEvent::SlotSet { slot: s.into(), value }),
            Just(DialogueEvent::Restarted),
        ]
    }

    proptest! {
        #[test]
        fn incremental_state_equals_replay(events in prop::collection::vec(arb_event(), 0..40)) {
            let mut t = DialogueTracker::new("p");
            for e in events {
                t.apply(e);
                prop_assert_eq!(t.state(), &t.replay());
            }
        }
    }
}
