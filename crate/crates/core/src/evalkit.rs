//! Confusion matrices and precision / recall / F1 reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::corpus::{Domain, Story, UtteranceExample};
use crate::dialogue::{ensemble_select, story_samples, MemoPolicy, RnnPolicy};
use crate::entity::CrfModel;
use crate::error::{Error, Result};
use crate::intent::IntentModel;

/// `counts[actual][predicted]` over a fixed label order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(labels: Vec<String>) -> Self {
        let n = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_counts(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        if counts.len() != labels.len() || counts.iter().any(|r| r.len() != labels.len()) {
            return Err(Error::Shape("confusion counts must be square over the labels".into()));
        }
        Ok(ConfusionMatrix { labels, counts })
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    pub fn fp(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum::<u64>() - self.tp(c)
    }

    pub fn fn_(&self, c: usize) -> u64 {
        self.counts[c].iter().sum::<u64>() - self.tp(c)
    }

    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn is_diagonal(&self) -> bool {
        self.counts
            .iter()
            .enumerate()
            .all(|(i, r)| r.iter().enumerate().all(|(j, &v)| i == j || v == 0))
    }

    fn index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::unknown("label", label))
    }

    pub fn add(&mut self, actual: &str, predicted: &str) -> Result<()> {
        let (a, p) = (self.index(actual)?, self.index(predicted)?);
        self.counts[a][p] += 1;
        Ok(())
    }

    /// Fixed-width text rendering, rows actual, columns predicted.
    pub fn to_table(&self) -> String {
        let width = self.labels.iter().map(|l| l.len()).max().unwrap_or(0).max(6);
        let mut s = format!("{:width$}", "actual \\ predicted");
        for j in 0..self.labels.len() {
            let _ = write!(s, " {j:>5}");
        }
        s.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            let _ = write!(s, "{:width$}", format!("{i:>2} {}", self.labels[i]));
            for v in row {
                let _ = write!(s, " {v:>5}");
            }
            s.push('\n');
        }
        s
    }
}

pub fn confusion_matrix<S: AsRef<str>>(truth: &[S], predicted: &[S], labels: &[S]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "{} truth labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut m = ConfusionMatrix::zeros(labels.iter().map(|l| l.as_ref().to_string()).collect());
    for (t, p) in truth.iter().zip(predicted) {
        m.add(t.as_ref(), p.as_ref())?;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub classes: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// For each class, the wrong labels it was predicted as and how often.
    pub confused_with: BTreeMap<String, BTreeMap<String, u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<ConfusionMatrix>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn report_from_counts(
    labels: &[String],
    counts: &[(u64, u64, u64)],
    confused_with: BTreeMap<String, BTreeMap<String, u64>>,
) -> EvalReport {
    let classes: Vec<ClassMetrics> = labels
        .iter()
        .zip(counts)
        .map(|(label, &(tp, fp, fn_))| {
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            ClassMetrics {
                label: label.clone(),
                precision,
                recall,
                f1: f1(precision, recall),
                support: tp + fn_,
            }
        })
        .collect();
    EvalReport {
        macro_precision: mean(classes.iter().map(|c| c.precision)),
        macro_recall: mean(classes.iter().map(|c| c.recall)),
        macro_f1: mean(classes.iter().map(|c| c.f1)),
        classes,
        confused_with,
        matrix: None,
    }
}

pub fn precision_recall_f1(matrix: &ConfusionMatrix) -> EvalReport {
    let counts: Vec<(u64, u64, u64)> = (0..matrix.labels.len())
        .map(|c| (matrix.tp(c), matrix.fp(c), matrix.fn_(c)))
        .collect();
    let mut confused = BTreeMap::new();
    for (i, row) in matrix.counts.iter().enumerate() {
        let wrong: BTreeMap<String, u64> = row
            .iter()
            .enumerate()
            .filter(|&(j, &v)| j != i && v > 0)
            .map(|(j, &v)| (matrix.labels[j].clone(), v))
            .collect();
        if !wrong.is_empty() {
            confused.insert(matrix.labels[i].clone(), wrong);
        }
    }
    let mut report = report_from_counts(&matrix.labels, &counts, confused);
    report.matrix = Some(matrix.clone());
    report
}

impl EvalReport {
    pub fn class(&self, label: &str) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.label == label)
    }

    /// Per-class table with values rounded to three decimals.
    pub fn to_table(&self) -> String {
        let width = self.classes.iter().map(|c| c.label.len()).max().unwrap_or(0).max(13);
        let mut s = format!(
            "{:width$} {:>9} {:>9} {:>9} {:>8}\n",
            "class", "precision", "recall", "f1", "support"
        );
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:width$} {:>9.3} {:>9.3} {:>9.3} {:>8}",
                c.label, c.precision, c.recall, c.f1, c.support
            );
        }
        let total: u64 = self.classes.iter().map(|c| c.support).sum();
        let _ = writeln!(
            s,
            "{:width$} {:>9.3} {:>9.3} {:>9.3} {:>8}",
            "macro avg", self.macro_precision, self.macro_recall, self.macro_f1, total
        );
        for (label, wrong) in &self.confused_with {
            let parts: Vec<String> = wrong.iter().map(|(w, n)| format!("{w}: {n}")).collect();
            let _ = writeln!(s, "{label} confused with {{{}}}", parts.join(", "));
        }
        s
    }
}

/// Classifies every example and reports per-intent metrics.
pub fn evaluate_nlu(model: &IntentModel, dataset: &[UtteranceExample]) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation dataset".into()));
    }
    let truth: Vec<&str> = dataset.iter().map(|e| e.intent.as_str()).collect();
    let preds: Vec<String> = dataset.iter().map(|e| model.predict(&e.text).intent).collect();
    let preds: Vec<&str> = preds.iter().map(String::as_str).collect();
    let labels: Vec<&str> = model.intents.iter().map(String::as_str).collect();
    Ok(precision_recall_f1(&confusion_matrix(&truth, &preds, &labels)?))
}

/// Span-level evaluation: a prediction counts only if start, end and type
/// all match a gold annotation.
pub fn evaluate_entities(model: &CrfModel, dataset: &[UtteranceExample], domain: &Domain) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation dataset".into()));
    }
    let labels = domain.entity_types.clone();
    let idx = |t: &str| {
        labels
            .iter()
            .position(|l| l == t)
            .ok_or_else(|| Error::unknown("entity type", t))
    };
    let mut counts = vec![(0u64, 0u64, 0u64); labels.len()];
    let mut confused: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for ex in dataset {
        let gold: BTreeSet<(usize, usize, &str)> = ex
            .entities
            .iter()
            .map(|a| (a.start, a.end, a.entity_type.as_str()))
            .collect();
        let spans = model.extract(&ex.text, &domain.synonyms);
        let pred: BTreeSet<(usize, usize, &str)> =
            spans.iter().map(|s| (s.start, s.end, s.entity_type.as_str())).collect();
        for g in &gold {
            if pred.contains(g) {
                counts[idx(g.2)?].0 += 1;
            } else {
                counts[idx(g.2)?].2 += 1;
                if let Some(p) = pred.iter().find(|p| p.0 == g.0 && p.1 == g.1) {
                    *confused
                        .entry(g.2.to_string())
                        .or_default()
                        .entry(p.2.to_string())
                        .or_default() += 1;
                }
            }
        }
        for p in pred.difference(&gold) {
            counts[idx(p.2)?].1 += 1;
        }
    }
    Ok(report_from_counts(&labels, &counts, confused))
}

/// Replays every story and compares the ensemble's choice with the story's
/// action at each bot decision, implicit listens included.
pub fn evaluate_policy(
    memo: &MemoPolicy,
    rnn: &RnnPolicy,
    stories: &[Story],
    domain: &Domain,
) -> Result<ConfusionMatrix> {
    let mut m = ConfusionMatrix::zeros(domain.actions.clone());
    for story in stories {
        for sample in story_samples(story, domain, rnn.config.max_history)? {
            let d = ensemble_select(&[memo.predict(&sample.window), rnn.predict(&sample.window)]);
            m.add(&domain.actions[sample.action], &d.action)?;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralcore::Rng;

    fn labels(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn muslim_greeting_table() {
        let mut truth = vec!["MG"; 3];
        truth.extend(vec!["G"; 7]);
        let mut pred = vec!["MG"; 3];
        pred.extend(vec!["G"; 6]);
        pred.push("MG");
        let m = confusion_matrix(&truth, &pred, &["MG", "G"]).unwrap();
        assert_eq!(m.counts, vec![vec![3, 0], vec![1, 6]]);
        let r = precision_recall_f1(&m);
        let mg = r.class("MG").unwrap();
        let g = r.class("G").unwrap();
        assert!((mg.precision - 0.75).abs() < 1e-9 && (mg.recall - 1.0).abs() < 1e-9);
        assert!((mg.f1 - 6.0 / 7.0).abs() < 1e-9);
        assert!((g.precision - 1.0).abs() < 1e-9 && (g.recall - 6.0 / 7.0).abs() < 1e-9);
        assert!((g.f1 - 12.0 / 13.0).abs() < 1e-9);
        assert_eq!(r.confused_with["G"], BTreeMap::from([("MG".to_string(), 1)]));
        assert!(!r.confused_with.contains_key("MG"));
    }

    #[test]
    fn macro_average_is_unweighted() {
        let n = 14;
        let names: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        let mut counts = vec![vec![0u64; n]; n];
        for (i, row) in counts.iter_mut().enumerate() {
            row[i] = 5;
        }
        // three true hits and one intruder in column 0
        counts[0][0] = 3;
        counts[1][0] = 1;
        counts[1][1] = 6;
        let r = precision_recall_f1(&ConfusionMatrix::from_counts(names, counts).unwrap());
        assert!((r.macro_precision - (13.0 + 0.75) / 14.0).abs() < 1e-9);
        assert_eq!(format!("{:.3}", r.macro_precision), "0.982");
    }

    #[test]
    fn degenerate_matrices() {
        let m = confusion_matrix::<&str>(&[], &[], &["a", "b"]).unwrap();
        assert_eq!(m.counts, vec![vec![0, 0], vec![0, 0]]);
        let r = precision_recall_f1(&m);
        assert!(r
            .classes
            .iter()
            .all(|c| c.precision == 0.0 && c.recall == 0.0 && c.f1 == 0.0));
        assert_eq!(r.macro_f1, 0.0);
        assert!(confusion_matrix(&["a"], &[], &["a"]).is_err());
        assert!(confusion_matrix(&["a"], &["z"], &["a"]).is_err());
        let d = confusion_matrix(&["a", "b", "b"], &["a", "b", "b"], &["a", "b"]).unwrap();
        assert!(d.is_diagonal());
        let r = precision_recall_f1(&d);
        assert!(r
            .classes
            .iter()
            .all(|c| c.precision == 1.0 && c.recall == 1.0 && c.f1 == 1.0));
    }

    /// Counts true/false positives directly from the example pairs.
    fn naive(truth: &[usize], pred: &[usize], k: usize) -> Vec<(f64, f64, f64, u64)> {
        (0..k)
            .map(|c| {
                let mut tp = 0;
                let mut fp = 0;
                let mut fn_ = 0;
                for (t, p) in truth.iter().zip(pred) {
                    match (*t == c, *p == c) {
                        (true, true) => tp += 1,
                        (false, true) => fp += 1,
                        (true, false) => fn_ += 1,
                        _ => {}
                    }
                }
                let p = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
                let r = if tp + fn_ > 0 {
                    tp as f64 / (tp + fn_) as f64
                } else {
                    0.0
                };
                let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
                (p, r, f, (tp + fn_) as u64)
            })
            .collect()
    }

    #[test]
    fn agrees_with_naive_counting() {
        let mut rng = Rng::seeded(21);
        for _ in 0..100 {
            let k = 2 + rng.sample_indices(4, 1)[0];
            let n = rng.sample_indices(30, 1)[0];
            let pick = |rng: &mut Rng| rng.sample_indices(k, 1)[0];
            let truth: Vec<usize> = (0..n).map(|_| pick(&mut rng)).collect();
            let pred: Vec<usize> = (0..n).map(|_| pick(&mut rng)).collect();
            let names = labels(&["a", "b", "c", "d", "e"])[..k].to_vec();
            let t: Vec<&str> = truth.iter().map(|&i| names[i].as_str()).collect();
            let p: Vec<&str> = pred.iter().map(|&i| names[i].as_str()).collect();
            let l: Vec<&str> = names.iter().map(String::as_str).collect();
            let report = precision_recall_f1(&confusion_matrix(&t, &p, &l).unwrap());
            let oracle = naive(&truth, &pred, k);
            for (c, o) in report.classes.iter().zip(&oracle) {
                assert!((c.precision - o.0).abs() < 1e-12);
                assert!((c.recall - o.1).abs() < 1e-12);
                assert!((c.f1 - o.2).abs() < 1e-12);
                assert_eq!(c.support, o.3);
                if c.precision > 0.0 && c.recall > 0.0 {
                    assert!((1.0 / c.f1 - 0.5 * (1.0 / c.precision + 1.0 / c.recall)).abs() < 1e-9);
                }
            }
            assert_eq!(report.classes.iter().map(|c| c.support).sum::<u64>(), n as u64);
        }
    }

    #[test]
    fn table_rounds_to_three_places() {
        let m = ConfusionMatrix::from_counts(labels(&["MG", "G"]), vec![vec![3, 0], vec![1, 6]]).unwrap();
        let t = precision_recall_f1(&m).to_table();
        assert!(t.contains("0.857"), "{t}");
        assert!(t.contains("0.923"), "{t}");
        assert!(t.contains("G confused with {MG: 1}"), "{t}");
    }
}
