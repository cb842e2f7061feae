//! Linear-chain CRF entity extractor over BIO tags.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::corpus::{canonicalize, Domain, EntityAnnotation, UtteranceExample};
use crate::error::{Error, Result};
use crate::modelio::{ModelReader, ModelWriter};
use crate::neuralcore::{log_sum_exp, Adam, AdamConfig, Matrix};
use crate::textproc::{crf_sequence_features, tokenize, Token, TokenFeatureSet};

pub const SECTION: &str = "crf-v1";
pub const OUTSIDE: &str = "O";

/// `O` followed by `B-t`, `I-t` for each entity type, in domain order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    tags: Vec<String>,
}

impl TagSet {
    pub fn new<S: AsRef<str>>(entity_types: &[S]) -> Self {
        let mut tags = vec![OUTSIDE.to_string()];
        for t in entity_types {
            tags.push(format!("B-{}", t.as_ref()));
            tags.push(format!("I-{}", t.as_ref()));
        }
        TagSet { tags }
    }

    fn from_tags(tags: Vec<String>) -> Result<Self> {
        if tags.first().map(String::as_str) != Some(OUTSIDE) {
            return Err(Error::Model("tag set must start with O".into()));
        }
        Ok(TagSet { tags })
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn id(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }

    pub fn name(&self, id: usize) -> &str {
        &self.tags[id]
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }
}

/// Converts character spans into per-token BIO tags.
pub fn spans_to_bio(tokens: &[Token], spans: &[EntityAnnotation]) -> Result<Vec<String>> {
    let mut tags = vec![OUTSIDE.to_string(); tokens.len()];
    let mut sorted: Vec<&EntityAnnotation> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    for pair in sorted.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(Error::InvalidArgument(format!(
                "overlapping entity spans {}..{} and {}..{}",
                pair[0].start, pair[0].end, pair[1].start, pair[1].end
            )));
        }
    }
    for span in sorted {
        let first = tokens.iter().position(|t| t.start == span.start);
        let last = tokens.iter().position(|t| t.end == span.end);
        match (first, last) {
            (Some(a), Some(b)) if a <= b => {
                tags[a] = format!("B-{}", span.entity_type);
                for tag in &mut tags[a + 1..=b] {
                    *tag = format!("I-{}", span.entity_type);
                }
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "entity span {}..{} ({:?}, {}) does not align with token boundaries",
                    span.start, span.end, span.surface, span.entity_type
                )))
            }
        }
    }
    Ok(tags)
}

/// Merges BIO runs back into `(first token, last token, entity type)`.
/// An `I-t` that does not continue a `t` run opens a new span.
pub fn bio_to_runs(tags: &[&str]) -> Vec<(usize, usize, String)> {
    let mut runs: Vec<(usize, usize, String)> = Vec::new();
    let mut open = false;
    for (i, tag) in tags.iter().enumerate() {
        if let Some(t) = tag.strip_prefix("B-") {
            runs.push((i, i, t.to_string()));
            open = true;
        } else if let Some(t) = tag.strip_prefix("I-") {
            match runs.last_mut() {
                Some(run) if open && run.2 == t && run.1 + 1 == i => run.1 = i,
                _ => runs.push((i, i, t.to_string())),
            }
            open = true;
        } else {
            open = false;
        }
    }
    runs
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrfConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    pub grad_tolerance: f64,
}

impl Default for CrfConfig {
    fn default() -> Self {
        CrfConfig {
            learning_rate: 0.05,
            l2: 0.01,
            epochs: 100,
            grad_tolerance: 1e-4,
        }
    }
}

/// Per-sequence input: active feature ids at each position.
pub type SequenceFeatures = Vec<Vec<usize>>;

#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    pub tags: TagSet,
    features: BTreeMap<String, usize>,
    /// Emission weights, one row per feature, one column per tag.
    pub emissions: Matrix,
    /// `transitions[prev][next]`.
    pub transitions: Matrix,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfGradient {
    pub emissions: Matrix,
    pub transitions: Matrix,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EntitySpan {
    pub entity_type: String,
    pub value: String,
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub confidence: f64,
}

fn feature_key(name: &str, value: &str) -> String {
    format!("{name}={value}")
}

/// Forward-backward tables in log space.
struct Lattice {
    emit: Vec<Vec<f64>>,
    alpha: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
    log_z: f64,
}

impl CrfModel {
    /// A model with all weights zero over the given features.
    pub fn zeros<S: AsRef<str>>(entity_types: &[S], feature_keys: impl IntoIterator<Item = String>, l2: f64) -> Self {
        let tags = TagSet::new(entity_types);
        let set: BTreeSet<String> = feature_keys.into_iter().collect();
        let features: BTreeMap<String, usize> = set.into_iter().enumerate().map(|(i, k)| (k, i)).collect();
        let k = tags.len();
        CrfModel {
            emissions: Matrix::zeros(features.len(), k),
            transitions: Matrix::zeros(k, k),
            tags,
            features,
            l2,
        }
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature_id(&self, name: &str, value: &str) -> Option<usize> {
        self.features.get(&feature_key(name, value)).copied()
    }

    /// Maps feature sets to ids; unknown features are skipped.
    pub fn encode(&self, feats: &[TokenFeatureSet]) -> SequenceFeatures {
        feats
            .iter()
            .map(|set| set.iter().filter_map(|(n, v)| self.feature_id(n, v)).collect())
            .collect()
    }

    pub fn encode_tokens(&self, tokens: &[Token]) -> SequenceFeatures {
        self.encode(&crf_sequence_features(tokens))
    }

    fn emission_scores(&self, x: &SequenceFeatures) -> Vec<Vec<f64>> {
        let k = self.tags.len();
        x.iter()
            .map(|active| {
                let mut row = vec![0.0; k];
                for &f in active {
                    for (r, w) in row.iter_mut().zip(self.emissions.row(f)) {
                        *r += w;
                    }
                }
                row
            })
            .collect()
    }

    fn lattice(&self, x: &SequenceFeatures) -> Lattice {
        let emit = self.emission_scores(x);
        let n = emit.len();
        let k = self.tags.len();
        let mut alpha = vec![vec![0.0; k]; n];
        let mut beta = vec![vec![0.0; k]; n];
        if n == 0 {
            return Lattice {
                emit,
                alpha,
                beta,
                log_z: 0.0,
            };
        }
        alpha[0] = emit[0].clone();
        let mut buf = vec![0.0; k];
        for t in 1..n {
            for next in 0..k {
                for prev in 0..k {
                    buf[prev] = alpha[t - 1][prev] + self.transitions.get(prev, next);
                }
                alpha[t][next] = emit[t][next] + log_sum_exp(&buf);
            }
        }
        for t in (0..n - 1).rev() {
            for prev in 0..k {
                for next in 0..k {
                    buf[next] = self.transitions.get(prev, next) + emit[t + 1][next] + beta[t + 1][next];
                }
                beta[t][prev] = log_sum_exp(&buf);
            }
        }
        let log_z = log_sum_exp(&alpha[n - 1]);
        Lattice {
            emit,
            alpha,
            beta,
            log_z,
        }
    }

    /// Unnormalised score of a tag sequence.
    pub fn sequence_score(&self, x: &SequenceFeatures, tags: &[usize]) -> f64 {
        let emit = self.emission_scores(x);
        let mut s = 0.0;
        for (t, &y) in tags.iter().enumerate() {
            s += emit[t][y];
            if t > 0 {
                s += self.transitions.get(tags[t - 1], y);
            }
        }
        s
    }

    pub fn log_partition(&self, x: &SequenceFeatures) -> f64 {
        self.lattice(x).log_z
    }

    /// Per-position tag marginals.
    pub fn marginals(&self, x: &SequenceFeatures) -> Vec<Vec<f64>> {
        let lat = self.lattice(x);
        lat.alpha
            .iter()
            .zip(&lat.beta)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x + y - lat.log_z).exp()).collect())
            .collect()
    }

    fn l2_norm_sq(&self) -> f64 {
        self.emissions
            .as_slice()
            .iter()
            .chain(self.transitions.as_slice())
            .map(|w| w * w)
            .sum()
    }

    fn zero_gradient(&self) -> CrfGradient {
        CrfGradient {
            emissions: Matrix::zeros(self.emissions.rows(), self.emissions.cols()),
            transitions: Matrix::zeros(self.transitions.rows(), self.transitions.cols()),
        }
    }

    /// `log p(tags | x)` without regularisation; its gradient is added to `grad`.
    fn accumulate(&self, x: &SequenceFeatures, tags: &[usize], grad: &mut CrfGradient) -> f64 {
        let lat = self.lattice(x);
        let n = x.len();
        let k = self.tags.len();
        let mut score = 0.0;
        for t in 0..n {
            let y = tags[t];
            score += lat.emit[t][y];
            for &f in &x[t] {
                let row = grad.emissions.row_mut(f);
                row[y] += 1.0;
                for (tag, g) in row.iter_mut().enumerate() {
                    *g -= (lat.alpha[t][tag] + lat.beta[t][tag] - lat.log_z).exp();
                }
            }
            if t > 0 {
                score += self.transitions.get(tags[t - 1], y);
                let cur = grad.transitions.get(tags[t - 1], y);
                grad.transitions.set(tags[t - 1], y, cur + 1.0);
                for prev in 0..k {
                    for next in 0..k {
                        let p = (lat.alpha[t - 1][prev]
                            + self.transitions.get(prev, next)
                            + lat.emit[t][next]
                            + lat.beta[t][next]
                            - lat.log_z)
                            .exp();
                        let cur = grad.transitions.get(prev, next);
                        grad.transitions.set(prev, next, cur - p);
                    }
                }
            }
        }
        score - lat.log_z
    }

    fn add_l2(&self, grad: &mut CrfGradient) {
        for (g, w) in grad.emissions.as_mut_slice().iter_mut().zip(self.emissions.as_slice()) {
            *g -= 2.0 * self.l2 * w;
        }
        for (g, w) in grad
            .transitions
            .as_mut_slice()
            .iter_mut()
            .zip(self.transitions.as_slice())
        {
            *g -= 2.0 * self.l2 * w;
        }
    }

    /// Regularised log-likelihood of one tagged sequence and its gradient.
    pub fn log_likelihood(&self, x: &SequenceFeatures, tags: &[usize]) -> Result<(f64, CrfGradient)> {
        if x.len() != tags.len() {
            return Err(Error::Shape(format!("{} positions but {} tags", x.len(), tags.len())));
        }
        if let Some(&bad) = tags.iter().find(|&&t| t >= self.tags.len()) {
            return Err(Error::InvalidArgument(format!("tag id {bad} out of range")));
        }
        let mut grad = self.zero_gradient();
        let ll = self.accumulate(x, tags, &mut grad);
        self.add_l2(&mut grad);
        Ok((ll - self.l2 * self.l2_norm_sq(), grad))
    }

    /// Highest-scoring tag sequence; among equal scores the lexicographically
    /// smallest tag-id path wins.
    pub fn viterbi(&self, x: &SequenceFeatures) -> (Vec<usize>, f64) {
        let emit = self.emission_scores(x);
        let n = emit.len();
        let k = self.tags.len();
        if n == 0 {
            return (Vec::new(), 0.0);
        }
        // best[t][y]: best score of positions t.. given tag y at t.
        let mut best = vec![vec![0.0; k]; n];
        best[n - 1] = emit[n - 1].clone();
        for t in (0..n - 1).rev() {
            for y in 0..k {
                let tail = (0..k)
                    .map(|next| self.transitions.get(y, next) + best[t + 1][next])
                    .fold(f64::NEG_INFINITY, f64::max);
                best[t][y] = emit[t][y] + tail;
            }
        }
        let mut path = Vec::with_capacity(n);
        let pick = |scores: &mut dyn Iterator<Item = f64>| {
            let mut arg = 0;
            let mut top = f64::NEG_INFINITY;
            for (i, s) in scores.enumerate() {
                if s > top {
                    top = s;
                    arg = i;
                }
            }
            (arg, top)
        };
        let (first, total) = pick(&mut best[0].iter().copied());
        path.push(first);
        for t in 1..n {
            let prev = path[t - 1];
            let (y, _) = pick(&mut (0..k).map(|next| self.transitions.get(prev, next) + best[t][next]));
            path.push(y);
        }
        (path, total)
    }

    pub fn extract(&self, text: &str, synonyms: &BTreeMap<String, String>) -> Vec<EntitySpan> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Vec::new();
        }
        let x = self.encode_tokens(&tokens);
        let (path, _) = self.viterbi(&x);
        let marg = self.marginals(&x);
        let names: Vec<&str> = path.iter().map(|&y| self.tags.name(y)).collect();
        let chars: Vec<char> = text.chars().collect();
        bio_to_runs(&names)
            .into_iter()
            .map(|(a, b, entity_type)| {
                let (start, end) = (tokens[a].start, tokens[b].end);
                let surface: String = chars[start..end].iter().collect();
                let confidence = (a..=b).map(|t| marg[t][path[t]]).sum::<f64>() / (b - a + 1) as f64;
                EntitySpan {
                    value: canonicalize(synonyms, &surface),
                    entity_type,
                    surface,
                    start,
                    end,
                    confidence,
                }
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ModelWriter::new(SECTION);
        w.strings(self.tags.tags());
        let keys: Vec<&str> = self.features.keys().map(String::as_str).collect();
        w.strings(&keys);
        w.matrix(&self.emissions).matrix(&self.transitions).f64(self.l2);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ModelReader::open(bytes, SECTION)?;
        let tags = TagSet::from_tags(r.strings()?)?;
        let keys = r.strings()?;
        let emissions = r.matrix()?;
        let transitions = r.matrix()?;
        let l2 = r.f64()?;
        r.finish()?;
        let k = tags.len();
        if emissions.shape() != (keys.len(), k) || transitions.shape() != (k, k) {
            return Err(Error::Model("crf model shapes are inconsistent".into()));
        }
        let features = keys.into_iter().enumerate().map(|(i, k)| (k, i)).collect();
        Ok(CrfModel {
            tags,
            features,
            emissions,
            transitions,
            l2,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::modelio::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn viterbi_decode(model: &CrfModel, x: &SequenceFeatures) -> (Vec<usize>, f64) {
    model.viterbi(x)
}

pub fn crf_log_likelihood(model: &CrfModel, x: &SequenceFeatures, tags: &[usize]) -> Result<(f64, CrfGradient)> {
    model.log_likelihood(x, tags)
}

pub fn extract_entities(model: &CrfModel, text: &str, synonyms: &BTreeMap<String, String>) -> Vec<EntitySpan> {
    model.extract(text, synonyms)
}

/// Fits the CRF by full-batch Adam on the regularised log-likelihood.
pub fn train_crf(examples: &[UtteranceExample], domain: &Domain, config: &CrfConfig) -> Result<CrfModel> {
    let mut sequences = Vec::with_capacity(examples.len());
    let mut keys = BTreeSet::new();
    let mut annotated = 0usize;
    let tagset = TagSet::new(&domain.entity_types);
    for ex in examples {
        let tokens = tokenize(&ex.text);
        if tokens.is_empty() {
            continue;
        }
        annotated += ex.entities.len();
        let bio = spans_to_bio(&tokens, &ex.entities)?;
        let tags = bio
            .iter()
            .map(|t| {
                tagset
                    .id(t)
                    .ok_or_else(|| Error::unknown("entity type", t.trim_start_matches(['B', 'I', '-'])))
            })
            .collect::<Result<Vec<_>>>()?;
        let feats = crf_sequence_features(&tokens);
        for set in &feats {
            for (n, v) in set {
                keys.insert(feature_key(n, v));
            }
        }
        sequences.push((feats, tags));
    }
    if annotated == 0 {
        tracing::warn!("no entity annotations in corpus; extractor will tag everything O");
    }
    let mut model = CrfModel::zeros(&domain.entity_types, keys, config.l2);
    let encoded: Vec<(SequenceFeatures, Vec<usize>)> =
        sequences.into_iter().map(|(f, t)| (model.encode(&f), t)).collect();

    let sizes = [model.emissions.as_slice().len(), model.transitions.as_slice().len()];
    let mut adam = Adam::new(&sizes, AdamConfig::with_learning_rate(config.learning_rate));
    for epoch in 0..config.epochs {
        let mut grad = model.zero_gradient();
        let mut ll = 0.0;
        for (x, y) in &encoded {
            ll += model.accumulate(x, y, &mut grad);
        }
        model.add_l2(&mut grad);
        let objective = ll - model.l2 * model.l2_norm_sq();
        if !objective.is_finite() {
            return Err(Error::Training(format!("crf objective diverged at epoch {epoch}")));
        }
        let max_grad = grad
            .emissions
            .as_slice()
            .iter()
            .chain(grad.transitions.as_slice())
            .fold(0.0f64, |m, g| m.max(g.abs()));
        if max_grad < config.grad_tolerance {
            tracing::debug!(epoch, "crf converged");
            break;
        }
        // Adam minimises, so step along the negated ascent direction.
        grad.emissions.as_mut_slice().iter_mut().for_each(|g| *g = -*g);
        grad.transitions.as_mut_slice().iter_mut().for_each(|g| *g = -*g);
        adam.step(
            vec![model.emissions.as_mut_slice(), model.transitions.as_mut_slice()],
            vec![grad.emissions.as_slice(), grad.transitions.as_slice()],
        )?;
    }
    Ok(model)
}
