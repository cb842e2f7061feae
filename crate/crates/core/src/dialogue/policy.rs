use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::corpus::{Domain, UTTER_DEFAULT};
use crate::error::{Error, Result};
use crate::modelio::{ModelReader, ModelWriter};
use crate::neuralcore::{
    dropout_apply, lstm_step, lstm_step_backward, softmax, softmax_xent, Adam, AdamConfig, Dense, LstmCache,
    LstmParams, Matrix, Rng,
};

use super::TrainingSample;

pub const MEMO_SECTION: &str = "memo-v1";
pub const RNN_SECTION: &str = "rnnpolicy-v1";
pub const MEMO_PRIORITY: u8 = 2;
pub const RNN_PRIORITY: u8 = 1;
pub const FALLBACK_POLICY: &str = "fallback";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyPrediction {
    pub policy: String,
    pub action: Option<String>,
    pub confidence: f64,
    pub priority: u8,
}

impl PolicyPrediction {
    pub fn none(policy: &str, priority: u8) -> Self {
        PolicyPrediction {
            policy: policy.to_string(),
            action: None,
            confidence: 0.0,
            priority,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub action: String,
    pub confidence: f64,
    pub policy: String,
}

/// Highest confidence wins; exact ties go to the higher priority. The result
/// does not depend on the order of `predictions`.
pub fn ensemble_select(predictions: &[PolicyPrediction]) -> Decision {
    let rank = |a: &PolicyPrediction, b: &PolicyPrediction| {
        a.confidence
            .partial_cmp(&b.confidence)
            .unwrap_or(Ordering::Equal)
            .then(a.priority.cmp(&b.priority))
            .then_with(|| b.policy.cmp(&a.policy))
            .then_with(|| b.action.cmp(&a.action))
    };
    predictions
        .iter()
        .filter(|p| p.action.is_some())
        .max_by(|a, b| rank(a, b))
        .map(|p| Decision {
            action: p.action.clone().expect("filtered"),
            confidence: p.confidence,
            policy: p.policy.clone(),
        })
        .unwrap_or_else(|| Decision {
            action: UTTER_DEFAULT.to_string(),
            confidence: 0.0,
            policy: FALLBACK_POLICY.to_string(),
        })
}

fn window_key(window: &Matrix) -> String {
    let mut key: String = window
        .as_slice()
        .iter()
        .map(|&v| if v != 0.0 { '1' } else { '0' })
        .collect();
    key.push_str(&format!("/{}", window.cols()));
    key
}

/// Exact-match lookup of training windows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MemoPolicy {
    table: BTreeMap<String, String>,
}

impl MemoPolicy {
    pub const NAME: &'static str = "memoization";

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn predict(&self, window: &Matrix) -> PolicyPrediction {
        match self.table.get(&window_key(window)) {
            Some(action) => PolicyPrediction {
                policy: Self::NAME.into(),
                action: Some(action.clone()),
                confidence: 1.0,
                priority: MEMO_PRIORITY,
            },
            None => PolicyPrediction::none(Self::NAME, MEMO_PRIORITY),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ModelWriter::new(MEMO_SECTION);
        w.u64(self.table.len() as u64);
        for (k, v) in &self.table {
            w.string(k).string(v);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ModelReader::open(bytes, MEMO_SECTION)?;
        let n = r.usize()?;
        let mut table = BTreeMap::new();
        for _ in 0..n {
            let k = r.string()?;
            table.insert(k, r.string()?);
        }
        r.finish()?;
        Ok(MemoPolicy { table })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::modelio::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Builds the lookup table; conflicting duplicates keep the first label.
pub fn memo_train(samples: &[TrainingSample], domain: &Domain) -> Result<MemoPolicy> {
    let mut table = BTreeMap::new();
    for s in samples {
        let action = domain
            .actions
            .get(s.action)
            .ok_or_else(|| Error::InvalidArgument(format!("action id {} out of range", s.action)))?;
        let key = window_key(&s.window);
        match table.get(&key) {
            Some(existing) if existing != action => {
                tracing::warn!(kept = %existing, dropped = %action, "conflicting story windows");
            }
            Some(_) => {}
            None => {
                table.insert(key, action.clone());
            }
        }
    }
    Ok(MemoPolicy { table })
}

pub fn memo_predict(model: &MemoPolicy, window: &Matrix) -> PolicyPrediction {
    model.predict(window)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig {
    pub max_history: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub output_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl PolicyConfig {
    pub fn for_domain(domain: &Domain) -> Self {
        PolicyConfig {
            max_history: 5,
            hidden: 32,
            dropout: 0.2,
            output_dim: domain.actions.len(),
            epochs: 100,
            learning_rate: 0.01,
            batch_size: 16,
        }
    }

    pub fn validate(&self, domain: &Domain) -> Result<()> {
        if self.max_history == 0 || self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "max_history, hidden and batch_size must be positive".into(),
            ));
        }
        if self.output_dim != domain.actions.len() {
            return Err(Error::InvalidArgument(format!(
                "output dimension {} differs from the {} domain actions",
                self.output_dim,
                domain.actions.len()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// LSTM over the non-padding rows of a window, then dense + softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnPolicy {
    pub config: PolicyConfig,
    pub actions: Vec<String>,
    pub lstm: LstmParams,
    pub dense: Dense,
}

struct Forward {
    caches: Vec<LstmCache>,
    h: Vec<f64>,
    mask: Vec<f64>,
    dropped: Vec<f64>,
    logits: Vec<f64>,
}

impl RnnPolicy {
    pub const NAME: &'static str = "rnn";

    pub fn new(config: PolicyConfig, domain: &Domain, state_dim: usize, rng: &mut Rng) -> Result<Self> {
        config.validate(domain)?;
        Ok(RnnPolicy {
            lstm: LstmParams::new(state_dim, config.hidden, rng),
            dense: Dense::new(config.hidden, config.output_dim, rng),
            actions: domain.actions.clone(),
            config,
        })
    }

    fn forward(&self, window: &Matrix, rng: Option<&mut Rng>) -> Result<Forward> {
        if window.cols() != self.lstm.inputs() {
            return Err(Error::Shape(format!(
                "window has {} features, policy expects {}",
                window.cols(),
                self.lstm.inputs()
            )));
        }
        let hid = self.lstm.hidden();
        let mut h = vec![0.0; hid];
        let mut c = vec![0.0; hid];
        let mut caches = Vec::new();
        for r in 0..window.rows() {
            let x = window.row(r);
            if x.iter().all(|v| *v == 0.0) {
                continue;
            }
            let (h2, c2, cache) = lstm_step(&self.lstm, x, &h, &c)?;
            h = h2;
            c = c2;
            caches.push(cache);
        }
        let (dropped, mask) = match rng {
            Some(rng) => dropout_apply(&h, self.config.dropout, rng, true)?,
            None => (h.clone(), vec![1.0; hid]),
        };
        let logits = self.dense.forward(&dropped)?;
        Ok(Forward {
            caches,
            h,
            mask,
            dropped,
            logits,
        })
    }

    /// Action probabilities for a window.
    pub fn probabilities(&self, window: &Matrix) -> Result<Vec<f64>> {
        Ok(softmax(&self.forward(window, None)?.logits))
    }

    pub fn predict(&self, window: &Matrix) -> PolicyPrediction {
        match self.probabilities(window) {
            Ok(p) => {
                let (best, conf) =
                    p.iter().enumerate().fold(
                        (0, f64::NEG_INFINITY),
                        |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
                    );
                PolicyPrediction {
                    policy: Self::NAME.into(),
                    action: Some(self.actions[best].clone()),
                    confidence: conf,
                    priority: RNN_PRIORITY,
                }
            }
            Err(e) => {
                tracing::warn!(error = %e, "rnn policy could not score window");
                PolicyPrediction::none(Self::NAME, RNN_PRIORITY)
            }
        }
    }

    fn zero_grads(&self) -> (LstmParams, Dense) {
        (
            LstmParams::zeros(self.lstm.inputs(), self.lstm.hidden()),
            self.dense.zeros_like(),
        )
    }

    /// Cross-entropy of one sample; gradients accumulate into `grads`.
    fn backprop(&self, sample: &TrainingSample, rng: Option<&mut Rng>, grads: &mut (LstmParams, Dense)) -> Result<f64> {
        let fwd = self.forward(&sample.window, rng)?;
        let (loss, dlogits) = softmax_xent(&fwd.logits, sample.action)?;
        let ddrop = self.dense.backward(&fwd.dropped, &dlogits, &mut grads.1)?;
        let mut dh: Vec<f64> = ddrop.iter().zip(&fwd.mask).map(|(d, m)| d * m).collect();
        let mut dc = vec![0.0; self.lstm.hidden()];
        debug_assert_eq!(fwd.h.len(), dh.len());
        for cache in fwd.caches.iter().rev() {
            let (_, dhp, dcp) = lstm_step_backward(&self.lstm, cache, &dh, &dc, &mut grads.0)?;
            dh = dhp;
            dc = dcp;
        }
        Ok(loss)
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = self.lstm.wx.as_slice().to_vec();
        v.extend_from_slice(self.lstm.wh.as_slice());
        v.extend_from_slice(&self.lstm.b);
        v.extend_from_slice(self.dense.w.as_slice());
        v.extend_from_slice(&self.dense.b);
        v
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.params_flat().len();
        if flat.len() != n {
            return Err(Error::Shape(format!("{} params given, policy has {n}", flat.len())));
        }
        let mut off = 0;
        for dst in [
            self.lstm.wx.as_mut_slice(),
            self.lstm.wh.as_mut_slice(),
            &mut self.lstm.b[..],
            self.dense.w.as_mut_slice(),
            &mut self.dense.b[..],
        ] {
            dst.copy_from_slice(&flat[off..off + dst.len()]);
            off += dst.len();
        }
        Ok(())
    }

    /// Mean loss over `batch` and its flat gradient, without dropout.
    pub fn loss_and_grad(&self, batch: &[TrainingSample]) -> Result<(f64, Vec<f64>)> {
        let mut grads = self.zero_grads();
        let mut loss = 0.0;
        for s in batch {
            loss += self.backprop(s, None, &mut grads)?;
        }
        let n = batch.len().max(1) as f64;
        let mut flat = grads.0.wx.as_slice().to_vec();
        flat.extend_from_slice(grads.0.wh.as_slice());
        flat.extend_from_slice(&grads.0.b);
        flat.extend_from_slice(grads.1.w.as_slice());
        flat.extend_from_slice(&grads.1.b);
        flat.iter_mut().for_each(|g| *g /= n);
        Ok((loss / n, flat))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut w = ModelWriter::new(RNN_SECTION);
        w.u64(c.max_history as u64)
            .u64(c.hidden as u64)
            .f64(c.dropout)
            .u64(c.output_dim as u64)
            .u64(c.epochs as u64)
            .f64(c.learning_rate)
            .u64(c.batch_size as u64)
            .strings(&self.actions)
            .matrix(&self.lstm.wx)
            .matrix(&self.lstm.wh)
            .vector(&self.lstm.b)
            .matrix(&self.dense.w)
            .vector(&self.dense.b);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ModelReader::open(bytes, RNN_SECTION)?;
        let config = PolicyConfig {
            max_history: r.usize()?,
            hidden: r.usize()?,
            dropout: r.f64()?,
            output_dim: r.usize()?,
            epochs: r.usize()?,
            learning_rate: r.f64()?,
            batch_size: r.usize()?,
        };
        let actions = r.strings()?;
        let lstm = LstmParams {
            wx: r.matrix()?,
            wh: r.matrix()?,
            b: r.vector()?,
        };
        let dense = Dense {
            w: r.matrix()?,
            b: r.vector()?,
        };
        r.finish()?;
        let h = config.hidden;
        if actions.len() != config.output_dim
            || lstm.wx.rows() != 4 * h
            || lstm.wh.shape() != (4 * h, h)
            || lstm.b.len() != 4 * h
            || dense.w.shape() != (config.output_dim, h)
            || dense.b.len() != config.output_dim
        {
            return Err(Error::Model("rnn policy shapes are inconsistent".into()));
        }
        Ok(RnnPolicy {
            config,
            actions,
            lstm,
            dense,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::modelio::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Trains the recurrent policy with minibatch Adam; returns the model and
/// the mean loss of every epoch.
pub fn rnn_train(
    samples: &[TrainingSample],
    domain: &Domain,
    config: &PolicyConfig,
    seed: u64,
) -> Result<(RnnPolicy, Vec<f64>)> {
    config.validate(domain)?;
    let first = samples
        .first()
        .ok_or_else(|| Error::Training("no policy training samples".into()))?;
    if first.window.rows() != config.max_history {
        return Err(Error::Shape(format!(
            "windows have {} rows, config expects {}",
            first.window.rows(),
            config.max_history
        )));
    }
    let mut rng = Rng::seeded(seed);
    let mut model = RnnPolicy::new(*config, domain, first.window.cols(), &mut rng)?;
    let sizes = [
        model.lstm.wx.as_slice().len(),
        model.lstm.wh.as_slice().len(),
        model.lstm.b.len(),
        model.dense.w.as_slice().len(),
        model.dense.b.len(),
    ];
    let mut adam = Adam::new(&sizes, AdamConfig::with_learning_rate(config.learning_rate));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut grads = model.zero_grads();
            for &i in chunk {
                total += model.backprop(&samples[i], Some(&mut rng), &mut grads)?;
            }
            let scale = 1.0 / chunk.len() as f64;
            let (gl, gd) = &mut grads;
            for g in gl
                .wx
                .as_mut_slice()
                .iter_mut()
                .chain(gl.wh.as_mut_slice())
                .chain(&mut gl.b)
                .chain(gd.w.as_mut_slice())
                .chain(&mut gd.b)
            {
                *g *= scale;
            }
            adam.step(
                vec![
                    model.lstm.wx.as_mut_slice(),
                    model.lstm.wh.as_mut_slice(),
                    &mut model.lstm.b,
                    model.dense.w.as_mut_slice(),
                    &mut model.dense.b,
                ],
                vec![gl.wx.as_slice(), gl.wh.as_slice(), &gl.b, gd.w.as_slice(), &gd.b],
            )?;
        }
        let mean = total / samples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Training(format!("policy loss diverged at epoch {epoch}")));
        }
        losses.push(mean);
    }
    Ok((model, losses))
}

pub fn rnn_predict(model: &RnnPolicy, window: &Matrix) -> PolicyPrediction {
    model.predict(window)
}
