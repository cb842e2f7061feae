//! Training artifacts: annotated NLU examples, stories and the bot domain.
//!
//! All three are JSON documents. Entity annotations use inline markup,
//! `[surface](entity_type)`, inside the example text; offsets are counted in
//! Unicode scalar values of the text with the markup stripped.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc;

/// Name of the sentinel action that ends a bot turn.
pub const ACTION_LISTEN: &str = "action_listen";
/// Action run when no policy has an opinion.
pub const UTTER_DEFAULT: &str = "utter_default";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityAnnotation {
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceExample {
    pub text: String,
    pub intent: String,
    pub entities: Vec<EntityAnnotation>,
}

impl UtteranceExample {
    /// Re-inserts inline markup so the example can be written back out.
    pub fn to_markup(&self) -> String {
        let chars: Vec<char> = self.text.chars().collect();
        let mut out = String::with_capacity(self.text.len() + 16);
        let mut pos = 0;
        let mut spans: Vec<&EntityAnnotation> = self.entities.iter().collect();
        spans.sort_by_key(|s| s.start);
        for span in spans {
            push_escaped(&mut out, &chars[pos..span.start]);
            out.push('[');
            push_escaped(&mut out, &chars[span.start..span.end]);
            out.push_str("](");
            out.push_str(&span.entity_type);
            out.push(')');
            pos = span.end;
        }
        push_escaped(&mut out, &chars[pos..]);
        out
    }
}

fn push_escaped(out: &mut String, chars: &[char]) {
    for &c in chars {
        if matches!(c, '[' | ']' | '\\') {
            out.push('\\');
        }
        out.push(c);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    User {
        intent: String,
        entities: BTreeMap<String, String>,
    },
    Bot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Story {
    pub name: String,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Text,
    Flag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotDef {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: SlotKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub intents: Vec<String>,
    #[serde(rename = "entities")]
    pub entity_types: Vec<String>,
    #[serde(default)]
    pub slots: Vec<SlotDef>,
    pub actions: Vec<String>,
    #[serde(default)]
    pub templates: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub synonyms: BTreeMap<String, String>,
}

impl Domain {
    pub fn intent_index(&self, name: &str) -> Option<usize> {
        self.intents.iter().position(|i| i == name)
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }

    pub fn entity_index(&self, name: &str) -> Option<usize> {
        self.entity_types.iter().position(|e| e == name)
    }

    pub fn slot_index(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == name)
    }

    /// Maps a raw entity surface to its canonical value.
    pub fn canonical_value(&self, surface: &str) -> String {
        canonicalize(&self.synonyms, surface)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub(crate) fn canonicalize(synonyms: &BTreeMap<String, String>, surface: &str) -> String {
    synonyms
        .get(&surface.to_lowercase())
        .cloned()
        .unwrap_or_else(|| surface.to_string())
}

/// Extracts the `{name}` placeholders of a template, in order of appearance.
pub fn placeholders(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let tail = &rest[open + 1..];
        match tail.find('}') {
            Some(close) => {
                out.push(&tail[..close]);
                rest = &tail[close + 1..];
            }
            None => break,
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Problem {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub errors: Vec<Problem>,
    pub warnings: Vec<Problem>,
}

impl ValidationReport {
    pub fn is_trainable(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.errors.push(Problem {
            location: location.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.warnings.push(Problem {
            location: location.into(),
            message: message.into(),
        });
    }
}

/// Line number (1-based) of every element of the top-level JSON array.
fn element_lines(doc: &str) -> Vec<usize> {
    let mut lines = Vec::new();
    let mut line = 1;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    let mut expecting = false;
    for c in doc.chars() {
        if c == '\n' {
            line += 1;
        }
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        if depth == 1 && expecting && !c.is_whitespace() {
            lines.push(line);
            expecting = false;
        }
        match c {
            '"' => in_string = true,
            '[' | '{' => {
                depth += 1;
                if depth == 1 {
                    expecting = true;
                }
            }
            ']' | '}' => depth = depth.saturating_sub(1),
            ',' if depth == 1 => expecting = true,
            _ => {}
        }
    }
    lines
}

#[derive(Deserialize)]
struct RawExample {
    intent: String,
    text: String,
}

/// Strips inline entity markup, returning clean text and its spans.
pub fn parse_markup(markup: &str) -> std::result::Result<(String, Vec<EntityAnnotation>), String> {
    let mut text = String::new();
    let mut len = 0usize;
    let mut spans = Vec::new();
    let mut chars = markup.chars().peekable();
    // Some(start) while inside `[...]`.
    let mut open: Option<usize> = None;
    while let Some(c) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some(e @ ('[' | ']' | '(' | ')' | '\\')) => {
                    text.push(e);
                    len += 1;
                }
                Some(other) => return Err(format!("unknown escape `\\{other}`")),
                None => return Err("dangling escape at end of text".into()),
            },
            '[' => {
                if open.is_some() {
                    return Err("nested `[` inside entity markup".into());
                }
                open = Some(len);
            }
            ']' => {
                let start = open.take().ok_or("`]` without matching `[`")?;
                if chars.next() != Some('(') {
                    return Err("entity markup `[...]` must be followed by `(type)`".into());
                }
                let mut entity_type = String::new();
                loop {
                    match chars.next() {
                        Some(')') => break,
                        Some(c) if c.is_alphanumeric() || c == '_' || c == '-' => entity_type.push(c),
                        Some(c) => return Err(format!("invalid character `{c}` in entity type")),
                        None => return Err("unterminated `(type)` in entity markup".into()),
                    }
                }
                if entity_type.is_empty() {
                    return Err("empty entity type".into());
                }
                if start == len {
                    return Err("empty entity surface".into());
                }
                let surface: String = text.chars().skip(start).collect();
                spans.push(EntityAnnotation {
                    start,
                    end: len,
                    entity_type,
                    surface,
                });
            }
            c => {
                text.push(c);
                len += 1;
            }
        }
    }
    if open.is_some() {
        return Err("unterminated `[` in entity markup".into());
    }
    Ok((text, spans))
}

pub fn parse_nlu_corpus(doc: &str) -> Result<Vec<UtteranceExample>> {
    let raw: Vec<RawExample> = serde_json::from_str(doc).map_err(|e| Error::parse(e.line(), e.to_string()))?;
    let lines = element_lines(doc);
    raw.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let line = lines.get(i).copied().unwrap_or(0);
            let (text, entities) = parse_markup(&r.text).map_err(|m| Error::parse(line, m))?;
            Ok(UtteranceExample {
                text,
                intent: r.intent,
                entities,
            })
        })
        .collect()
}

pub fn serialize_nlu_corpus(examples: &[UtteranceExample]) -> Result<String> {
    let raw: Vec<serde_json::Value> = examples
        .iter()
        .map(|e| serde_json::json!({ "intent": e.intent, "text": e.to_markup() }))
        .collect();
    Ok(serde_json::to_string_pretty(&raw)?)
}

#[derive(Serialize, Deserialize)]
struct RawUserStep {
    intent: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    entities: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawStep {
    User(RawUserStep),
    Bot(String),
}

#[derive(Serialize, Deserialize)]
struct RawStory {
    name: String,
    steps: Vec<RawStep>,
}

pub fn parse_stories(doc: &str) -> Result<Vec<Story>> {
    let raw: Vec<RawStory> = serde_json::from_str(doc).map_err(|e| Error::parse(e.line(), e.to_string()))?;
    let lines = element_lines(doc);
    raw.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let line = lines.get(i).copied().unwrap_or(0);
            if r.steps.is_empty() {
                return Err(Error::parse(line, format!("story `{}` has no steps", r.name)));
            }
            if matches!(r.steps[0], RawStep::Bot(_)) {
                return Err(Error::parse(line, format!("story `{}` starts with a bot step", r.name)));
            }
            let steps = r
                .steps
                .into_iter()
                .map(|s| match s {
                    RawStep::User(u) => Step::User {
                        intent: u.intent,
                        entities: u.entities,
                    },
                    RawStep::Bot(a) => Step::Bot(a),
                })
                .collect();
            Ok(Story { name: r.name, steps })
        })
        .collect()
}

pub fn serialize_stories(stories: &[Story]) -> Result<String> {
    let raw: Vec<RawStory> = stories
        .iter()
        .map(|s| RawStory {
            name: s.name.clone(),
            steps: s
                .steps
                .iter()
                .map(|step| match step {
                    Step::User { intent, entities } => RawStep::User(RawUserStep {
                        intent: intent.clone(),
                        entities: entities.clone(),
                    }),
                    Step::Bot(a) => RawStep::Bot(a.clone()),
                })
                .collect(),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&raw)?)
}

pub fn parse_domain(doc: &str) -> Result<Domain> {
    let mut domain: Domain = serde_json::from_str(doc).map_err(|e| Error::parse(e.line(), e.to_string()))?;

    let mut seen = BTreeSet::new();
    for a in &domain.actions {
        if !seen.insert(a.as_str()) {
            return Err(Error::Domain(format!("duplicate action `{a}`")));
        }
    }
    let mut slot_names = BTreeSet::new();
    for s in &domain.slots {
        if !slot_names.insert(s.name.as_str()) {
            return Err(Error::Domain(format!("duplicate slot `{}`", s.name)));
        }
    }
    for (action, variants) in &domain.templates {
        for t in variants {
            for p in placeholders(t) {
                if !slot_names.contains(p) {
                    return Err(Error::Domain(format!(
                        "template for `{action}` references undeclared slot `{p}`"
                    )));
                }
            }
        }
    }
    if let Some(pos) = domain.action_index(ACTION_LISTEN) {
        let listen = domain.actions.remove(pos);
        domain.actions.insert(0, listen);
    } else {
        domain.actions.insert(0, ACTION_LISTEN.to_string());
    }
    domain.synonyms = domain
        .synonyms
        .into_iter()
        .map(|(k, v)| (k.to_lowercase(), v))
        .collect();
    Ok(domain)
}

/// Cross-checks the three artifacts against each other.
pub fn validate(domain: &Domain, stories: &[Story], examples: &[UtteranceExample]) -> ValidationReport {
    let mut report = ValidationReport::default();
    let intents: BTreeSet<&str> = domain.intents.iter().map(String::as_str).collect();
    let actions: BTreeSet<&str> = domain.actions.iter().map(String::as_str).collect();
    let entities: BTreeSet<&str> = domain.entity_types.iter().map(String::as_str).collect();

    for action in &domain.actions {
        if action.starts_with("utter_") && domain.templates.get(action).is_none_or(|t| t.is_empty()) {
            report.error(format!("domain action `{action}`"), "utter action has no template");
        }
    }
    for name in domain.templates.keys() {
        if !actions.contains(name.as_str()) {
            report.warn(format!("domain template `{name}`"), "template for undeclared action");
        }
    }

    let mut counts: HashMap<&str, usize> = HashMap::new();
    for (i, ex) in examples.iter().enumerate() {
        let loc = format!("example {} ({:?})", i + 1, ex.text);
        if intents.contains(ex.intent.as_str()) {
            *counts.entry(ex.intent.as_str()).or_default() += 1;
        } else {
            report.error(&loc, format!("unknown intent `{}`", ex.intent));
        }
        for span in &ex.entities {
            if !entities.contains(span.entity_type.as_str()) {
                report.error(&loc, format!("unknown entity type `{}`", span.entity_type));
            }
        }
        let tokens = textproc::tokenize(&ex.text);
        if let Err(e) = crate::entity::spans_to_bio(&tokens, &ex.entities) {
            report.error(&loc, e.to_string());
        }
    }

    for story in stories {
        let loc = format!("story `{}`", story.name);
        for step in &story.steps {
            match step {
                Step::User { intent, entities: ents } => {
                    if !intents.contains(intent.as_str()) {
                        report.error(&loc, format!("unknown intent `{intent}`"));
                    }
                    for name in ents.keys() {
                        if !entities.contains(name.as_str()) {
                            report.error(&loc, format!("unknown entity type `{name}`"));
                        }
                    }
                }
                Step::Bot(action) => {
                    if !actions.contains(action.as_str()) {
                        report.error(&loc, format!("unknown action `{action}`"));
                    }
                }
            }
        }
    }

    for intent in &domain.intents {
        if !counts.contains_key(intent.as_str()) {
            report.warn(format!("intent `{intent}`"), "no NLU examples");
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL_DOMAIN: &str = r#"{
        "intents": ["greet"],
        "entities": [],
        "actions": ["utter_hello"],
        "templates": {"utter_hello": ["halo"]}
    }"#;

    #[test]
    fn strips_markup_and_recomputes_spans() {
        let doc = r#"[{"intent":"intent requests a schedule","text":"jadwal [fd](concentration) dong"}]"#;
        let ex = parse_nlu_corpus(doc).unwrap();
        assert_eq!(ex[0].text, "jadwal fd dong");
        assert_eq!(
            ex[0].entities,
            vec![EntityAnnotation {
                start: 7,
                end: 9,
                entity_type: "concentration".into(),
                surface: "fd".into()
            }]
        );
    }

    #[test]
    fn plain_text_has_no_entities() {
        let ex = parse_nlu_corpus(r#"[{"intent":"g","text":"halo bot"}]"#).unwrap();
        assert_eq!(ex[0].text, "halo bot");
        assert!(ex[0].entities.is_empty());
    }

    #[test]
    fn offsets_count_scalar_values() {
        let (text, spans) = parse_markup("café [ñandú](animal)").unwrap();
        assert_eq!(text, "café ñandú");
        assert_eq!((spans[0].start, spans[0].end), (5, 10));
    }

    #[test]
    fn malformed_markup_reports_line() {
        let doc = "[\n {\"intent\":\"a\",\"text\":\"ok\"},\n {\"intent\":\"a\",\"text\":\"bad [x\"}\n]";
        match parse_nlu_corpus(doc) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_markup("no [type]").is_err());
        assert!(parse_markup("stray ] here").is_err());
    }

    #[test]
    fn unknown_escape_is_an_error() {
        let err = parse_markup(r"tab \t here").unwrap_err();
        assert!(err.contains("unknown escape"));
        let (text, spans) = parse_markup(r"lit \[x\] [y](t)").unwrap();
        assert_eq!(text, "lit [x] y");
        assert_eq!(spans[0].surface, "y");
    }

    #[test]
    fn parses_story_steps_in_order() {
        let doc = r#"[{"name":"greet","steps":[{"user":{"intent":"greet"}},{"bot":"utter_say_hello"},{"bot":"action_listen"}]}]"#;
        let stories = parse_stories(doc).unwrap();
        assert_eq!(stories.len(), 1);
        assert_eq!(stories[0].steps.len(), 3);
        assert_eq!(stories[0].steps[1], Step::Bot("utter_say_hello".into()));
    }

    #[test]
    fn story_entity_assignment_preserved() {
        let doc = r#"[{"name":"s","steps":[{"user":{"intent":"req","entities":{"concentration":"fd"}}}]}]"#;
        let stories = parse_stories(doc).unwrap();
        match &stories[0].steps[0] {
            Step::User { entities, .. } => assert_eq!(entities["concentration"], "fd"),
            _ => unreachable!(),
        }
    }

    #[test]
    fn story_shape_errors() {
        assert!(parse_stories(r#"[{"name":"e","steps":[]}]"#).is_err());
        assert!(parse_stories(r#"[{"name":"b","steps":[{"bot":"utter_x"}]}]"#).is_err());
    }

    #[test]
    fn minimal_domain_gets_listen_at_front() {
        let d = parse_domain(MINIMAL_DOMAIN).unwrap();
        assert_eq!(d.actions, vec!["action_listen", "utter_hello"]);
        assert!(validate(&d, &[], &[]).errors.is_empty());
    }

    #[test]
    fn domain_errors() {
        let undeclared = r#"{"intents":["a"],"entities":[],"actions":["utter_x"],
            "templates":{"utter_x":["NIM {nim}"]}}"#;
        let err = parse_domain(undeclared).unwrap_err().to_string();
        assert!(err.contains("nim"), "{err}");
        let dup = r#"{"intents":["a"],"entities":[],"actions":["utter_x","utter_x"],
            "templates":{"utter_x":["x"]}}"#;
        assert!(parse_domain(dup).is_err());
    }

    #[test]
    fn validation_flags_unknown_action_and_unused_intent() {
        let d = parse_domain(
            r#"{"intents":["greet","bye"],"entities":[],"actions":["utter_hello"],
               "templates":{"utter_hello":["halo"]}}"#,
        )
        .unwrap();
        let stories =
            parse_stories(r#"[{"name":"s","steps":[{"user":{"intent":"greet"}},{"bot":"utter_missing"}]}]"#).unwrap();
        let examples = parse_nlu_corpus(r#"[{"intent":"greet","text":"halo"}]"#).unwrap();
        let report = validate(&d, &stories, &examples);
        assert_eq!(report.errors.len(), 1);
        assert!(report.errors[0].message.contains("utter_missing"));
        assert_eq!(report.warnings.len(), 1);
        assert!(report.warnings[0].location.contains("bye"));
    }

    #[test]
    fn placeholder_scan() {
        assert_eq!(
            placeholders("Jadwal {concentration} / {nim}"),
            vec!["concentration", "nim"]
        );
        assert!(placeholders("tanpa slot").is_empty());
    }
}
