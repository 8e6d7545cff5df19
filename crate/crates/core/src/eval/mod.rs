//! Benchmark questions, metrics and experiment runners.
//!
//! Questions use the BioASQ task-B JSON layout:
//!
//! ```json
//! {"questions": [{"id": "...", "body": "...", "type": "yesno",
//!                 "exact_answer": "yes",
//!                 "documents": ["http://www.ncbi.nlm.nih.gov/pubmed/123"]}]}
//! ```
//!
//! Document entries may be PubMed URLs or bare PMIDs.

mod metrics;
mod runner;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::generate::{GoldAnswer, YesNo};

pub use metrics::{answer_metrics, doc_metrics, latency_stats, AnswerMetrics, DocMetrics, LatencyStats};
pub use runner::{
    bench_retrieval_latency, run_depth_sweep, run_retriever_comparison, Experiment, Journal, LatencyBreakdown,
    MetricsReport, QuestionOutcome, ReferenceRow, Report, RunOptions, SPARSE_LATENCY_REFERENCE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed question file at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("question file is empty")]
    EmptyFile,
    #[error("question {qid}: {message}")]
    InvalidQuestion { qid: String, message: String },
    #[error("gold set is empty")]
    EmptyGold,
    #[error("prediction and gold question ids differ")]
    QidMismatch,
    #[error("no questions to evaluate")]
    NoQuestions,
    #[error("no latency samples")]
    NoSamples,
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error("journal: {0}")]
    Journal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    Yesno,
    Factoid,
    List,
    Summary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuestion {
    pub qid: String,
    pub body: String,
    pub qtype: QuestionType,
    /// Present for yes/no questions.
    pub gold_answer: Option<YesNo>,
    pub gold_pmids: HashSet<String>,
}

#[derive(Deserialize)]
struct RawFile {
    questions: Vec<RawQuestion>,
}

#[derive(Deserialize)]
struct RawQuestion {
    id: String,
    body: String,
    #[serde(rename = "type")]
    qtype: QuestionType,
    #[serde(default)]
    exact_answer: Option<Value>,
    #[serde(default)]
    documents: Vec<String>,
}

/// PMID from a PubMed URL or a bare identifier.
fn pmid_of(entry: &str) -> Option<String> {
    let tail = entry.trim().trim_end_matches('/').rsplit('/').next()?;
    (!tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit())).then(|| tail.to_owned())
}

fn yes_no(value: &Value) -> Option<YesNo> {
    let s = match value {
        Value::String(s) => s.as_str(),
        Value::Array(items) if items.len() == 1 => items[0].as_str()?,
        _ => return None,
    };
    match s.trim().to_ascii_lowercase().as_str() {
        "yes" => Some(YesNo::Yes),
        "no" => Some(YesNo::No),
        _ => None,
    }
}

/// Parses a question file and keeps yes/no questions (plus summary ones if
/// asked) with at least one gold PMID in `corpus_pmids`. Gold sets are kept
/// whole, including PMIDs outside the corpus.
pub fn parse_eval(text: &str, corpus_pmids: &HashSet<String>, include_summary: bool) -> Result<Vec<EvalQuestion>, EvalError> {
    if text.trim().is_empty() {
        return Err(EvalError::EmptyFile);
    }
    let raw: RawFile = serde_json::from_str(text).map_err(|e| EvalError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for q in raw.questions {
        let keep_type = match q.qtype {
            QuestionType::Yesno => true,
            QuestionType::Summary => include_summary,
            QuestionType::Factoid | QuestionType::List => false,
        };
        if !keep_type {
            continue;
        }
        let gold_pmids: HashSet<String> = q.documents.iter().filter_map(|d| pmid_of(d)).collect();
        if !gold_pmids.iter().any(|p| corpus_pmids.contains(p)) {
            continue;
        }
        let gold_answer = match q.qtype {
            QuestionType::Yesno => Some(q.exact_answer.as_ref().and_then(yes_no).ok_or_else(|| {
                EvalError::InvalidQuestion {
                    qid: q.id.clone(),
                    message: "yes/no question without a yes/no exact_answer".into(),
                }
            })?),
            _ => None,
        };
        out.push(EvalQuestion {
            qid: q.id,
            body: q.body,
            qtype: q.qtype,
            gold_answer,
            gold_pmids,
        });
    }
    Ok(out)
}

pub fn load_eval(
    path: impl AsRef<Path>,
    corpus_pmids: &HashSet<String>,
    include_summary: bool,
) -> Result<Vec<EvalQuestion>, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_eval(&text, corpus_pmids, include_summary)
}

/// Serializes questions in the layout [`parse_eval`] reads.
pub fn to_bioasq_json(questions: &[EvalQuestion]) -> String {
    let items: Vec<Value> = questions
        .iter()
        .map(|q| {
            let mut docs: Vec<&String> = q.gold_pmids.iter().collect();
            docs.sort_by(|a, b| crate::corpus::pmid_cmp(a, b));
            let mut obj = serde_json::json!({
                "id": q.qid,
                "body": q.body,
                "type": q.qtype,
                "documents": docs
                    .iter()
                    .map(|p| format!("http://www.ncbi.nlm.nih.gov/pubmed/{p}"))
                    .collect::<Vec<_>>(),
            });
            if let Some(a) = q.gold_answer {
                obj["exact_answer"] = Value::from(a.as_str());
            }
            obj
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({ "questions": items })).expect("JSON serialization")
}

/// Gold answers keyed by question text, as the gold-echo stub expects.
pub fn gold_answers(questions: &[EvalQuestion]) -> HashMap<String, GoldAnswer> {
    questions
        .iter()
        .filter_map(|q| {
            q.gold_answer.map(|answer| {
                (
                    q.body.clone(),
                    GoldAnswer {
                        answer,
                        pmids: q.gold_pmids.clone(),
                    },
                )
            })
        })
        .collect()
}

/// Gold PMID sets keyed by question text, as the oracle reranker expects.
pub fn gold_sets(questions: &[EvalQuestion]) -> HashMap<String, HashSet<String>> {
    questions.iter().map(|q| (q.body.clone(), q.gold_pmids.clone())).collect()
}
