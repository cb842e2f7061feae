//! Supervised-embeddings intent classifier.
//!
//! A message tower maps the bag-of-words vector through two ReLU layers into
//! a `d`-dimensional embedding; a label tower holds one `d`-vector per
//! intent. Training pushes the cosine similarity with the true intent above
//! `mu_pos` and the best-scoring sampled wrong intent below `-mu_neg`.

use std::path::Path;

use crate::corpus::{Domain, UtteranceExample};
use crate::error::{Error, Result};
use crate::modelio::{ModelReader, ModelWriter};
use crate::neuralcore::{axpy, dot, dropout_apply, norm, relu, Adam, AdamConfig, Dense, Matrix, Rng};
use crate::textproc::{build_vocab, featurize_bow, tokenize, SparseVector, Vocabulary};

pub const SECTION: &str = "intent-v1";

/// Confidence below which a prediction is flagged.
pub const LOW_CONFIDENCE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct IntentConfig {
    pub epochs: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub embed_dim: usize,
    pub batch_start: usize,
    pub batch_end: usize,
    pub learning_rate: f64,
    pub mu_pos: f64,
    pub mu_neg: f64,
    pub max_negatives: usize,
    pub dropout: f64,
}

impl Default for IntentConfig {
    fn default() -> Self {
        IntentConfig {
            epochs: 300,
            hidden1: 256,
            hidden2: 128,
            embed_dim: 20,
            batch_start: 64,
            batch_end: 256,
            learning_rate: 0.001,
            mu_pos: 0.8,
            mu_neg: -0.4,
            max_negatives: 20,
            dropout: 0.2,
        }
    }
}

impl IntentConfig {
    /// Minibatch size for `epoch` (0-based), linearly interpolated.
    pub fn batch_size(&self, epoch: usize, corpus_size: usize) -> usize {
        let frac = if self.epochs > 1 {
            epoch as f64 / (self.epochs - 1) as f64
        } else {
            0.0
        };
        let raw = self.batch_start as f64 + (self.batch_end as f64 - self.batch_start as f64) * frac;
        (raw.round() as usize).clamp(1, corpus_size.max(1))
    }

    fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(Error::InvalidArgument("layer sizes must be positive".into()));
        }
        if self.batch_start == 0 || self.batch_end < self.batch_start {
            return Err(Error::InvalidArgument(
                "batch schedule must be positive and non-decreasing".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Gradients of `cos(a, b)` with respect to `a` and `b`.
fn cosine_grads(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return (vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let cos = dot(a, b) / (na * nb);
    let ga = a
        .iter()
        .zip(b)
        .map(|(x, y)| y / (na * nb) - cos * x / (na * na))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(x, y)| x / (na * nb) - cos * y / (nb * nb))
        .collect();
    (ga, gb)
}

/// `max(0, mu_pos − sim_pos) + max(0, mu_neg + max(sims_neg))`.
pub fn ranking_loss(sim_pos: f64, sims_neg: &[f64], mu_pos: f64, mu_neg: f64) -> f64 {
    let pos = (mu_pos - sim_pos).max(0.0);
    let neg = sims_neg
        .iter()
        .copied()
        .reduce(f64::max)
        .map_or(0.0, |m| (mu_neg + m).max(0.0));
    pos + neg
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentPrediction {
    pub intent: String,
    pub confidence: f64,
    pub ranking: Vec<(String, f64)>,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentModel {
    pub config: IntentConfig,
    pub vocab: Vocabulary,
    pub intents: Vec<String>,
    /// First layer stored transposed (one row per vocabulary word) so sparse
    /// inputs touch only their own rows.
    w1t: Matrix,
    b1: Vec<f64>,
    l2: Dense,
    l3: Dense,
    labels: Matrix,
}

/// One training instance: input, true label, sampled negatives.
#[derive(Debug, Clone)]
pub struct Instance {
    pub input: SparseVector,
    pub label: usize,
    pub negatives: Vec<usize>,
}

struct Grads {
    w1t: Matrix,
    b1: Vec<f64>,
    l2: Dense,
    l3: Dense,
    labels: Matrix,
}

impl IntentModel {
    fn init(config: &IntentConfig, vocab: Vocabulary, intents: Vec<String>, rng: &mut Rng) -> Self {
        let v = vocab.len();
        // Glorot limit uses fan_in = |V|, fan_out = h1 regardless of storage order.
        let w1t = Matrix::glorot(v, config.hidden1, rng);
        let l2 = Dense::new(config.hidden1, config.hidden2, rng);
        let l3 = Dense::new(config.hidden2, config.embed_dim, rng);
        let labels = Matrix::glorot(intents.len(), config.embed_dim, rng);
        IntentModel {
            config: config.clone(),
            vocab,
            intents,
            w1t,
            b1: vec![0.0; config.hidden1],
            l2,
            l3,
            labels,
        }
    }

    fn zero_grads(&self) -> Grads {
        Grads {
            w1t: Matrix::zeros(self.w1t.rows(), self.w1t.cols()),
            b1: vec![0.0; self.b1.len()],
            l2: self.l2.zeros_like(),
            l3: self.l3.zeros_like(),
            labels: Matrix::zeros(self.labels.rows(), self.labels.cols()),
        }
    }

    fn tensor_sizes(&self) -> Vec<usize> {
        vec![
            self.w1t.as_slice().len(),
            self.b1.len(),
            self.l2.w.as_slice().len(),
            self.l2.b.len(),
            self.l3.w.as_slice().len(),
            self.l3.b.len(),
            self.labels.as_slice().len(),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1t.as_mut_slice(),
            &mut self.b1,
            self.l2.w.as_mut_slice(),
            &mut self.l2.b,
            self.l3.w.as_mut_slice(),
            &mut self.l3.b,
            self.labels.as_mut_slice(),
        ]
    }

    /// All trainable parameters, concatenated.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for t in [
            self.w1t.as_slice(),
            &self.b1,
            self.l2.w.as_slice(),
            &self.l2.b,
            self.l3.w.as_slice(),
            &self.l3.b,
            self.labels.as_slice(),
        ] {
            out.extend_from_slice(t);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.tensor_sizes().iter().sum();
        if flat.len() != total {
            return Err(Error::Shape(format!("{} values for {total} parameters", flat.len())));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn featurize(&self, text: &str) -> SparseVector {
        featurize_bow(&tokenize(text), &self.vocab)
    }

    fn first_layer(&self, x: &SparseVector) -> Vec<f64> {
        let mut z = self.b1.clone();
        for (&j, &count) in &x.counts {
            axpy(count as f64, self.w1t.row(j), &mut z);
        }
        z
    }

    /// Message-tower embedding without dropout.
    pub fn embed(&self, x: &SparseVector) -> Vec<f64> {
        let a1 = relu(&self.first_layer(x));
        let a2 = relu(&self.l2.forward(&a1).expect("layer shapes fixed at init"));
        self.l3.forward(&a2).expect("layer shapes fixed at init")
    }

    pub fn label_embedding(&self, intent: usize) -> &[f64] {
        self.labels.row(intent)
    }

    /// Mean ranking loss over `batch`; gradients accumulate into `grads`
    /// scaled by `1/|batch|`. Dropout is applied only when `rng` is given.
    fn batch_loss(&self, batch: &[Instance], mut rng: Option<&mut Rng>, grads: &mut Grads) -> Result<f64> {
        let scale = 1.0 / batch.len().max(1) as f64;
        let (mu_pos, mu_neg) = (self.config.mu_pos, self.config.mu_neg);
        let mut total = 0.0;
        for inst in batch {
            let z1 = self.first_layer(&inst.input);
            let a1 = relu(&z1);
            let (d1, m1) = match rng.as_deref_mut() {
                Some(r) => dropout_apply(&a1, self.config.dropout, r, true)?,
                None => (a1.clone(), vec![1.0; a1.len()]),
            };
            let z2 = self.l2.forward(&d1)?;
            let a2 = relu(&z2);
            let (d2, m2) = match rng.as_deref_mut() {
                Some(r) => dropout_apply(&a2, self.config.dropout, r, true)?,
                None => (a2.clone(), vec![1.0; a2.len()]),
            };
            let e = self.l3.forward(&d2)?;

            let pos = self.labels.row(inst.label);
            let sim_pos = cosine_similarity(&e, pos);
            let neg_sims: Vec<f64> = inst
                .negatives
                .iter()
                .map(|&n| cosine_similarity(&e, self.labels.row(n)))
                .collect();
            total += ranking_loss(sim_pos, &neg_sims, mu_pos, mu_neg);

            let mut de = vec![0.0; e.len()];
            if mu_pos - sim_pos > 0.0 {
                let (ge, gl) = cosine_grads(&e, pos);
                axpy(-scale, &ge, &mut de);
                axpy(-scale, &gl, grads.labels.row_mut(inst.label));
            }
            let hardest = neg_sims
                .iter()
                .enumerate()
                .fold(None, |best: Option<(usize, f64)>, (i, &s)| match best {
                    Some((_, bs)) if bs >= s => best,
                    _ => Some((i, s)),
                });
            if let Some((i, s)) = hardest {
                if mu_neg + s > 0.0 {
                    let label = inst.negatives[i];
                    let (ge, gl) = cosine_grads(&e, self.labels.row(label));
                    axpy(scale, &ge, &mut de);
                    axpy(scale, &gl, grads.labels.row_mut(label));
                }
            }

            let dd2 = self.l3.backward(&d2, &de, &mut grads.l3)?;
            let dz2: Vec<f64> = (0..z2.len())
                .map(|k| if z2[k] > 0.0 { dd2[k] * m2[k] } else { 0.0 })
                .collect();
            let dd1 = self.l2.backward(&d1, &dz2, &mut grads.l2)?;
            let dz1: Vec<f64> = (0..z1.len())
                .map(|k| if z1[k] > 0.0 { dd1[k] * m1[k] } else { 0.0 })
                .collect();
            axpy(1.0, &dz1, &mut grads.b1);
            for (&j, &count) in &inst.input.counts {
                axpy(count as f64, &dz1, grads.w1t.row_mut(j));
            }
        }
        Ok(total * scale)
    }

    /// Deterministic (dropout-free) mean loss and its gradient over the flat
    /// parameter vector.
    pub fn loss_and_grad(&self, batch: &[Instance]) -> Result<(f64, Vec<f64>)> {
        let mut g = self.zero_grads();
        let loss = self.batch_loss(batch, None, &mut g)?;
        let mut flat = Vec::new();
        for t in [
            g.w1t.as_slice(),
            &g.b1,
            g.l2.w.as_slice(),
            &g.l2.b,
            g.l3.w.as_slice(),
            &g.l3.b,
            g.labels.as_slice(),
        ] {
            flat.extend_from_slice(t);
        }
        Ok((loss, flat))
    }

    pub fn predict(&self, text: &str) -> IntentPrediction {
        self.predict_vector(&self.featurize(text))
    }

    pub fn predict_vector(&self, x: &SparseVector) -> IntentPrediction {
        let e = self.embed(x);
        let raw: Vec<f64> = (0..self.intents.len())
            .map(|i| (cosine_similarity(&e, self.labels.row(i)) + 1.0) / 2.0)
            .collect();
        let sum: f64 = raw.iter().sum();
        let n = raw.len() as f64;
        let mut ranking: Vec<(String, f64)> = self
            .intents
            .iter()
            .zip(&raw)
            .map(|(name, &r)| (name.clone(), if sum > 0.0 { r / sum } else { 1.0 / n }))
            .collect();
        // Stable sort keeps domain order among equal confidences.
        ranking.sort_by(|a, b| b.1.total_cmp(&a.1));
        let (intent, confidence) = ranking[0].clone();
        IntentPrediction {
            intent,
            confidence,
            low_confidence: confidence < LOW_CONFIDENCE || x.is_empty(),
            ranking,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut w = ModelWriter::new(SECTION);
        for v in [
            c.epochs,
            c.hidden1,
            c.hidden2,
            c.embed_dim,
            c.batch_start,
            c.batch_end,
            c.max_negatives,
        ] {
            w.u64(v as u64);
        }
        w.f64(c.learning_rate).f64(c.mu_pos).f64(c.mu_neg).f64(c.dropout);
        let words: Vec<&str> = self.vocab.words().collect();
        w.strings(&words).strings(&self.intents);
        w.matrix(&self.w1t).vector(&self.b1);
        w.matrix(&self.l2.w).vector(&self.l2.b);
        w.matrix(&self.l3.w).vector(&self.l3.b);
        w.matrix(&self.labels);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ModelReader::open(bytes, SECTION)?;
        let mut ints = [0usize; 7];
        for v in ints.iter_mut() {
            *v = r.usize()?;
        }
        let config = IntentConfig {
            epochs: ints[0],
            hidden1: ints[1],
            hidden2: ints[2],
            embed_dim: ints[3],
            batch_start: ints[4],
            batch_end: ints[5],
            max_negatives: ints[6],
            learning_rate: r.f64()?,
            mu_pos: r.f64()?,
            mu_neg: r.f64()?,
            dropout: r.f64()?,
        };
        let vocab = Vocabulary::from_words(r.strings()?);
        let intents = r.strings()?;
        let w1t = r.matrix()?;
        let b1 = r.vector()?;
        let l2 = Dense {
            w: r.matrix()?,
            b: r.vector()?,
        };
        let l3 = Dense {
            w: r.matrix()?,
            b: r.vector()?,
        };
        let labels = r.matrix()?;
        r.finish()?;
        let consistent = w1t.shape() == (vocab.len(), config.hidden1)
            && b1.len() == config.hidden1
            && l2.w.shape() == (config.hidden2, config.hidden1)
            && l3.w.shape() == (config.embed_dim, config.hidden2)
            && labels.shape() == (intents.len(), config.embed_dim);
        if !consistent {
            return Err(Error::Model("intent model shapes are inconsistent".into()));
        }
        Ok(IntentModel {
            config,
            vocab,
            intents,
            w1t,
            b1,
            l2,
            l3,
            labels,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::modelio::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn sample_negatives(rng: &mut Rng, n_intents: usize, label: usize, count: usize) -> Vec<usize> {
    rng.sample_indices(n_intents - 1, count)
        .into_iter()
        .map(|i| if i >= label { i + 1 } else { i })
        .collect()
}

pub fn train_intent(
    examples: &[UtteranceExample],
    domain: &Domain,
    config: &IntentConfig,
    seed: u64,
) -> Result<IntentModel> {
    train_intent_logged(examples, domain, config, seed).map(|(m, _)| m)
}

/// Trains and also returns the mean training loss of every epoch.
pub fn train_intent_logged(
    examples: &[UtteranceExample],
    domain: &Domain,
    config: &IntentConfig,
    seed: u64,
) -> Result<(IntentModel, Vec<f64>)> {
    config.validate()?;
    if domain.intents.len() < 2 {
        return Err(Error::Training("intent classifier needs at least two intents".into()));
    }
    let vocab = build_vocab(examples)?;
    let data: Vec<(SparseVector, usize)> = examples
        .iter()
        .map(|e| {
            let label = domain
                .intent_index(&e.intent)
                .ok_or_else(|| Error::unknown("intent", &e.intent))?;
            Ok((featurize_bow(&tokenize(&e.text), &vocab), label))
        })
        .collect::<Result<_>>()?;

    let mut rng = Rng::seeded(seed);
    let mut model = IntentModel::init(config, vocab, domain.intents.clone(), &mut rng);
    let n_intents = model.intents.len();
    let n_neg = (n_intents - 1).min(config.max_negatives);
    let mut adam = Adam::new(
        &model.tensor_sizes(),
        AdamConfig::with_learning_rate(config.learning_rate),
    );
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let batch_size = config.batch_size(epoch, data.len());
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<Instance> = chunk
                .iter()
                .map(|&i| Instance {
                    input: data[i].0.clone(),
                    label: data[i].1,
                    negatives: sample_negatives(&mut rng, n_intents, data[i].1, n_neg),
                })
                .collect();
            let mut grads = model.zero_grads();
            let loss = model.batch_loss(&batch, Some(&mut rng), &mut grads)?;
            epoch_loss += loss * chunk.len() as f64;
            let g: Vec<&[f64]> = vec![
                grads.w1t.as_slice(),
                &grads.b1,
                grads.l2.w.as_slice(),
                &grads.l2.b,
                grads.l3.w.as_slice(),
                &grads.l3.b,
                grads.labels.as_slice(),
            ];
            adam.step(model.tensors_mut(), g)?;
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Training(format!("intent loss diverged at epoch {epoch}")));
        }
        history.push(mean);
    }
    tracing::debug!(
        epochs = config.epochs,
        final_loss = history.last().copied(),
        "intent classifier trained"
    );
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralcore::grad_check;

    fn domain(intents: &[&str]) -> Domain {
        Domain {
            intents: intents.iter().map(|s| s.to_string()).collect(),
            entity_types: vec![],
            slots: vec![],
            actions: vec!["action_listen".into()],
            templates: Default::default(),
            synonyms: Default::default(),
        }
    }

    fn ex(intent: &str, text: &str) -> UtteranceExample {
        UtteranceExample {
            text: text.into(),
            intent: intent.into(),
            entities: vec![],
        }
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine_similarity(&[2.0, 1.0], &[2.0, 1.0]) - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        let s = cosine_similarity(&[1.0, 0.0], &[1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()]);
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn hinge_arithmetic() {
        assert_eq!(ranking_loss(1.0, &[0.4, -0.2], 0.8, -0.4), 0.0);
        assert!(ranking_loss(0.8, &[0.4], 0.8, -0.4).abs() < 1e-12);
        assert!((ranking_loss(0.5, &[0.9, 0.1], 0.8, -0.4) - 0.8).abs() < 1e-12);
        assert!((ranking_loss(0.5, &[], 0.8, -0.4) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn batch_schedule_is_linear_and_clamped() {
        let c = IntentConfig::default();
        assert_eq!(c.batch_size(0, 1000), 64);
        assert_eq!(c.batch_size(299, 1000), 256);
        assert_eq!(c.batch_size(299, 165), 165);
        let sizes: Vec<usize> = (0..300).map(|e| c.batch_size(e, 1000)).collect();
        assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn single_intent_is_rejected() {
        let d = domain(&["only"]);
        assert!(train_intent(&[ex("only", "halo")], &d, &IntentConfig::default(), 1).is_err());
    }

    fn toy_config() -> IntentConfig {
        IntentConfig {
            epochs: 60,
            hidden1: 16,
            hidden2: 8,
            embed_dim: 5,
            batch_start: 4,
            batch_end: 8,
            learning_rate: 0.01,
            ..IntentConfig::default()
        }
    }

    #[test]
    fn separable_toy_corpus_is_learned() {
        let d = domain(&["a", "b"]);
        let mut examples = vec![];
        for _ in 0..10 {
            examples.push(ex("a", "apel"));
            examples.push(ex("b", "jeruk"));
        }
        let (model, history) = train_intent_logged(&examples, &d, &toy_config(), 3).unwrap();
        assert_eq!(model.predict("apel").intent, "a");
        assert_eq!(model.predict("jeruk").intent, "b");
        assert!(history.last().unwrap() < &history[0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let d = domain(&["x", "y", "z"]);
        let examples = vec![ex("x", "satu dua"), ex("y", "dua tiga"), ex("z", "empat")];
        let config = IntentConfig {
            hidden1: 6,
            hidden2: 5,
            embed_dim: 4,
            // Margins chosen so every hinge is active at the probe point.
            mu_pos: 2.0,
            mu_neg: 2.0,
            ..toy_config()
        };
        let vocab = build_vocab(&examples).unwrap();
        let mut rng = Rng::seeded(5);
        let mut model = IntentModel::init(&config, vocab, d.intents.clone(), &mut rng);
        // Nudge biases off zero so no ReLU sits exactly at its kink.
        let mut flat = model.params_flat();
        for v in flat.iter_mut() {
            *v += rng.uniform(-0.05, 0.05);
        }
        model.set_params_flat(&flat).unwrap();
        let batch: Vec<Instance> = examples
            .iter()
            .enumerate()
            .map(|(i, e)| Instance {
                input: model.featurize(&e.text),
                label: i,
                negatives: (0..3).filter(|&j| j != i).collect(),
            })
            .collect();
        let probe = model.clone();
        let err = grad_check(
            |p| {
                let mut m = probe.clone();
                m.set_params_flat(p).unwrap();
                m.loss_and_grad(&batch).unwrap()
            },
            &flat,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn ranking_is_complete_and_normalised() {
        let d = domain(&["a", "b", "c"]);
        let examples = vec![ex("a", "x"), ex("b", "y"), ex("c", "z")];
        let model = train_intent(&examples, &d, &toy_config(), 9).unwrap();
        for text in ["x", "y z", "", "tidak dikenal"] {
            let p = model.predict(text);
            assert_eq!(p.ranking.len(), 3);
            let sum: f64 = p.ranking.iter().map(|r| r.1).sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(p.ranking.windows(2).all(|w| w[0].1 >= w[1].1));
            assert_eq!(p.intent, p.ranking[0].0);
        }
        assert!(model.predict("").low_confidence);
    }

    #[test]
    fn serialisation_round_trips() {
        let d = domain(&["a", "b"]);
        let examples = vec![ex("a", "x"), ex("b", "y")];
        let model = train_intent(&examples, &d, &toy_config(), 1).unwrap();
        let back = IntentModel::from_bytes(&model.to_bytes()).unwrap();
        assert_eq!(back, model);
    }
}
