//! Document-level and answer-level metrics, and latency summaries.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::generate::{Label, YesNo};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DocMetrics {
    pub recall: f64,
    pub precision: f64,
}

/// Recall against the whole gold set and precision over the retrieved
/// set. An empty retrieval scores zero on both.
pub fn doc_metrics<S: AsRef<str>>(retrieved: &[S], gold: &HashSet<String>) -> Result<DocMetrics, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    let retrieved: HashSet<&str> = retrieved.iter().map(AsRef::as_ref).collect();
    if retrieved.is_empty() {
        return Ok(DocMetrics {
            recall: 0.0,
            precision: 0.0,
        });
    }
    let hits = retrieved.iter().filter(|p| gold.contains(**p)).count() as f64;
    Ok(DocMetrics {
        recall: hits / gold.len() as f64,
        precision: hits / retrieved.len() as f64,
    })
}

/// Yes/no answer metrics. `recall`, `precision` and `f1` are macro-averaged
/// over the two classes; `micro_*` treat every yes/no prediction as one
/// decision and invalid predictions as misses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnswerMetrics {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub micro_recall: f64,
    pub micro_precision: f64,
    pub micro_f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn answer_metrics(predictions: &[(String, Label)], gold: &[(String, YesNo)]) -> Result<AnswerMetrics, EvalError> {
    let gold_map: HashMap<&str, YesNo> = gold.iter().map(|(q, a)| (q.as_str(), *a)).collect();
    let pred_map: HashMap<&str, Label> = predictions.iter().map(|(q, l)| (q.as_str(), *l)).collect();
    if gold_map.len() != gold.len()
        || pred_map.len() != predictions.len()
        || gold_map.len() != pred_map.len()
        || gold_map.keys().any(|q| !pred_map.contains_key(q))
    {
        return Err(EvalError::QidMismatch);
    }
    if gold.is_empty() {
        return Err(EvalError::NoQuestions);
    }
    let n = gold.len();
    let mut correct = 0;
    let mut decided = 0;
    let mut per_class = Vec::new();
    for class in [YesNo::Yes, YesNo::No] {
        let label = Label::from(class);
        let mut tp = 0;
        let mut predicted = 0;
        let mut actual = 0;
        for (q, &g) in &gold_map {
            let p = pred_map[q];
            if p == label {
                predicted += 1;
            }
            if g == class {
                actual += 1;
                if p == label {
                    tp += 1;
                }
            }
        }
        correct += tp;
        decided += predicted;
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        per_class.push((precision, recall, harmonic(precision, recall)));
    }
    let macro_avg = |f: fn(&(f64, f64, f64)) -> f64| per_class.iter().map(f).sum::<f64>() / per_class.len() as f64;
    let micro_precision = ratio(correct, decided);
    let micro_recall = ratio(correct, n);
    Ok(AnswerMetrics {
        accuracy: ratio(correct, n),
        precision: macro_avg(|c| c.0),
        recall: macro_avg(|c| c.1),
        f1: macro_avg(|c| c.2),
        micro_recall,
        micro_precision,
        micro_f1: harmonic(micro_precision, micro_recall),
    })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LatencyStats<T: Scalar> {
    pub mean: T,
    pub std: T,
    pub samples: usize,
}

pub fn latency_stats<T: Scalar>(samples: &[T]) -> Result<LatencyStats<T>, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::NoSamples);
    }
    let n = T::from_count(samples.len());
    let mean = samples.iter().fold(T::zero(), |a, &b| a + b) / n;
    let var = samples.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean)) / n;
    Ok(LatencyStats {
        mean,
        std: var.sqrt(),
        samples: samples.len(),
    })
}

impl<T: Scalar> fmt::Display for LatencyStats<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prec = f.precision().unwrap_or(2);
        write!(f, "{:.prec$} ± {:.prec$}", self.mean, self.std)
    }
}
