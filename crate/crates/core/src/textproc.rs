//! Tokenization, vocabulary, bag-of-words vectors and CRF token features.

use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::UtteranceExample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    /// Char offsets into the source text, `end` exclusive.
    pub start: usize,
    pub end: usize,
}

/// Splits on whitespace, keeping exact char offsets.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut idx = 0;
    for c in text.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                tokens.push(Token {
                    surface: std::mem::take(&mut current),
                    start,
                    end: idx,
                });
            }
        } else {
            if current.is_empty() {
                start = idx;
            }
            current.push(c);
        }
        idx += 1;
    }
    if !current.is_empty() {
        tokens.push(Token {
            surface: current,
            start,
            end: idx,
        });
    }
    tokens
}

/// Lowercased token → dense id, assigned in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    ids: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = words.into_iter().map(Into::into).collect();
        let ids = set.into_iter().enumerate().map(|(i, w)| (w, i)).collect();
        Vocabulary { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.ids.get(word).copied()
    }

    /// Words in id order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.ids.keys().map(String::as_str)
    }
}

pub fn build_vocab(examples: &[UtteranceExample]) -> Result<Vocabulary> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot build a vocabulary from an empty corpus".into(),
        ));
    }
    Ok(Vocabulary::from_words(examples.iter().flat_map(|e| {
        tokenize(&e.text).into_iter().map(|t| t.surface.to_lowercase())
    })))
}

/// Sparse count vector keyed by feature id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SparseVector {
    pub counts: BTreeMap<usize, u32>,
}

impl SparseVector {
    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn add(&self, other: &SparseVector) -> SparseVector {
        let mut counts = self.counts.clone();
        for (&k, &v) in &other.counts {
            *counts.entry(k).or_default() += v;
        }
        SparseVector { counts }
    }
}

pub fn featurize_bow(tokens: &[Token], vocab: &Vocabulary) -> SparseVector {
    let mut counts = BTreeMap::new();
    for t in tokens {
        if let Some(id) = vocab.get(&t.surface.to_lowercase()) {
            *counts.entry(id).or_insert(0) += 1;
        }
    }
    SparseVector { counts }
}

/// Window-prefixed features describing one token position.
pub type TokenFeatureSet = Vec<(String, String)>;

pub const BOS: &str = "before:BOS";
pub const EOS: &str = "after:EOS";

fn is_lower(s: &str) -> bool {
    let mut cased = false;
    for c in s.chars() {
        if c.is_uppercase() {
            return false;
        }
        cased |= c.is_lowercase();
    }
    cased
}

fn is_upper(s: &str) -> bool {
    let mut cased = false;
    for c in s.chars() {
        if c.is_lowercase() {
            return false;
        }
        cased |= c.is_uppercase();
    }
    cased
}

fn is_title(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) if first.is_uppercase() => chars.all(|c| !c.is_alphabetic() || c.is_lowercase()),
        _ => false,
    }
}

fn is_digit(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_digit())
}

fn prefix(chars: &[char], n: usize) -> String {
    chars[..n.min(chars.len())].iter().collect()
}

fn suffix(chars: &[char], n: usize) -> String {
    chars[chars.len().saturating_sub(n)..].iter().collect()
}

fn push_token_features(out: &mut TokenFeatureSet, window: &str, surface: &str) {
    let lower: Vec<char> = surface.to_lowercase().chars().collect();
    let flag = |b: bool| if b { "true" } else { "false" }.to_string();
    let feats = [
        ("lowercase", flag(is_lower(surface))),
        ("uppercase", flag(is_upper(surface))),
        ("title", flag(is_title(surface))),
        ("digit", flag(is_digit(surface))),
        ("prefix5", prefix(&lower, 5)),
        ("prefix2", prefix(&lower, 2)),
        ("suffix5", suffix(&lower, 5)),
        ("suffix3", suffix(&lower, 3)),
        ("suffix2", suffix(&lower, 2)),
        ("suffix1", suffix(&lower, 1)),
        ("bias", "1".to_string()),
    ];
    for (name, value) in feats {
        out.push((format!("{window}:{name}"), value));
    }
}

/// Features of the `[before, token, after]` window around `index`.
pub fn crf_token_features(tokens: &[Token], index: usize) -> Result<TokenFeatureSet> {
    if index >= tokens.len() {
        return Err(Error::InvalidArgument(format!(
            "token index {index} out of range for {} tokens",
            tokens.len()
        )));
    }
    let mut out = Vec::with_capacity(35);
    match index.checked_sub(1) {
        Some(prev) => push_token_features(&mut out, "before", &tokens[prev].surface),
        None => out.push((BOS.to_string(), "1".to_string())),
    }
    push_token_features(&mut out, "token", &tokens[index].surface);
    match tokens.get(index + 1) {
        Some(next) => push_token_features(&mut out, "after", &next.surface),
        None => out.push((EOS.to_string(), "1".to_string())),
    }
    Ok(out)
}

/// Features for every position of a token sequence.
pub fn crf_sequence_features(tokens: &[Token]) -> Vec<TokenFeatureSet> {
    (0..tokens.len())
        .map(|i| crf_token_features(tokens, i).expect("index in range"))
        .collect()
}
