//! Retrieval strategies and the end-to-end question-answering path.
//!
//! | strategy | first stage              | second stage            |
//! |----------|--------------------------|-------------------------|
//! | `bm25`   | BM25, `keep_n` results   | –                       |
//! | `tfidf`  | TF-IDF, `keep_n` results | –                       |
//! | `dense`  | L2 scan, `keep_n` results| –                       |
//! | `hybrid` | BM25, `depth` candidates | rerank, keep `keep_n`   |
//!
//! A [`Pipeline`] holds only shared immutable state, so one instance can
//! serve any number of questions concurrently.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DocStore, Document};
use crate::dense::{DenseIndex, Embedder};
use crate::generate::{build_prompt, parse_answer, Flag, GenerateError, Generator, QAResult, EVAL_TEMPERATURE};
use crate::rerank::{rerank, RerankError, Reranker};
use crate::scored::ScoredDoc;
use crate::sparse::SparseError;
use crate::timing::{ms_since, Timings};
use crate::SparseIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Bm25,
    Tfidf,
    Dense,
    Hybrid,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Bm25, Strategy::Dense, Strategy::Hybrid, Strategy::Tfidf];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Bm25 => "bm25",
            Strategy::Tfidf => "tfidf",
            Strategy::Dense => "dense",
            Strategy::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bm25" => Ok(Strategy::Bm25),
            "tfidf" | "tf-idf" => Ok(Strategy::Tfidf),
            "dense" => Ok(Strategy::Dense),
            "hybrid" => Ok(Strategy::Hybrid),
            other => Err(format!("unknown strategy {other:?} (expected bm25, tfidf, dense or hybrid)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub strategy: Strategy,
    /// First-stage candidate count for `hybrid`.
    pub depth: usize,
    pub keep_n: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Hybrid,
            depth: 50,
            keep_n: 10,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.keep_n == 0 || self.depth == 0 {
            return Err(PipelineError::InvalidConfig("depth and keep_n must be at least 1".into()));
        }
        if self.strategy == Strategy::Hybrid && self.keep_n > self.depth {
            return Err(PipelineError::InvalidConfig(format!(
                "keep_n ({}) must not exceed depth ({}) for hybrid retrieval",
                self.keep_n, self.depth
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineStage {
    Retrieval,
    Rerank,
    Generation,
}

impl fmt::Display for PipelineStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineStage::Retrieval => "retrieval",
            PipelineStage::Rerank => "rerank",
            PipelineStage::Generation => "generation",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("empty query")]
    EmptyQuery,
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error("{0} not loaded")]
    Missing(&'static str),
    #[error("{stage} failed: {message}")]
    Stage { stage: PipelineStage, message: String },
}

impl PipelineError {
    fn at(stage: PipelineStage, e: impl fmt::Display) -> Self {
        PipelineError::Stage {
            stage,
            message: e.to_string(),
        }
    }

    pub fn stage(&self) -> Option<PipelineStage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

impl From<SparseError> for PipelineError {
    fn from(e: SparseError) -> Self {
        match e {
            SparseError::EmptyQuery => PipelineError::EmptyQuery,
            other => PipelineError::at(PipelineStage::Retrieval, other),
        }
    }
}

/// Output of the retrieval stages for one question.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Retrieval {
    /// Documents handed to generation, in rank order.
    pub documents: Vec<ScoredDoc>,
    /// First-stage list; equal to `documents` for single-stage strategies.
    pub candidates: Vec<ScoredDoc>,
    /// Only `retrieval_ms` and `rerank_ms` are filled.
    pub timings: Timings,
}

/// An answered question plus the first-stage candidates behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Answered {
    pub result: QAResult,
    pub candidates: Vec<ScoredDoc>,
}

#[derive(Clone)]
pub struct Pipeline {
    docs: Arc<DocStore>,
    sparse: Option<Arc<SparseIndex>>,
    dense: Option<Arc<DenseIndex<f64>>>,
    embedder: Option<Arc<dyn Embedder<f64>>>,
    reranker: Option<Arc<dyn Reranker>>,
    generator: Option<Arc<dyn Generator>>,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline")
            .field("docs", &self.docs.len())
            .field("sparse", &self.sparse.is_some())
            .field("dense", &self.dense.is_some())
            .field("embedder", &self.embedder.is_some())
            .field("reranker", &self.reranker.is_some())
            .field("generator", &self.generator.is_some())
            .finish()
    }
}

impl Pipeline {
    pub fn new(docs: Arc<DocStore>) -> Self {
        Self {
            docs,
            sparse: None,
            dense: None,
            embedder: None,
            reranker: None,
            generator: None,
        }
    }

    pub fn with_sparse(mut self, index: Arc<SparseIndex>) -> Self {
        self.sparse = Some(index);
        self
    }

    pub fn with_dense(mut self, index: Arc<DenseIndex<f64>>, embedder: Arc<dyn Embedder<f64>>) -> Self {
        self.dense = Some(index);
        self.embedder = Some(embedder);
        self
    }

    pub fn with_reranker(mut self, reranker: Arc<dyn Reranker>) -> Self {
        self.reranker = Some(reranker);
        self
    }

    pub fn with_generator(mut self, generator: Arc<dyn Generator>) -> Self {
        self.generator = Some(generator);
        self
    }

    pub fn documents(&self) -> &DocStore {
        &self.docs
    }

    pub fn sparse(&self) -> Option<&SparseIndex> {
        self.sparse.as_deref()
    }

    pub fn has_generator(&self) -> bool {
        self.generator.is_some()
    }

    /// Whether every component `strategy` needs is present.
    pub fn supports(&self, strategy: Strategy) -> Result<(), PipelineError> {
        match strategy {
            Strategy::Bm25 | Strategy::Tfidf if self.sparse.is_none() => Err(PipelineError::Missing("sparse index")),
            Strategy::Dense if self.dense.is_none() || self.embedder.is_none() => {
                Err(PipelineError::Missing("dense index"))
            }
            Strategy::Hybrid if self.sparse.is_none() => Err(PipelineError::Missing("sparse index")),
            Strategy::Hybrid if self.reranker.is_none() => Err(PipelineError::Missing("reranker")),
            _ => Ok(()),
        }
    }

    fn sparse_index(&self) -> Result<&SparseIndex, PipelineError> {
        self.sparse.as_deref().ok_or(PipelineError::Missing("sparse index"))
    }

    fn doc(&self, pmid: &str) -> Result<&Document, PipelineError> {
        self.docs
            .by_pmid(pmid)
            .ok_or_else(|| PipelineError::at(PipelineStage::Retrieval, format!("PMID {pmid} missing from document store")))
    }

    pub fn retrieve(&self, question: &str, config: &RetrievalConfig) -> Result<Retrieval, PipelineError> {
        config.validate()?;
        if question.trim().is_empty() {
            return Err(PipelineError::EmptyQuery);
        }
        self.supports(config.strategy)?;
        let start = Instant::now();
        let mut timings = Timings::default();
        let single = |documents: Vec<ScoredDoc>, timings: Timings| Retrieval {
            candidates: documents.clone(),
            documents,
            timings,
        };
        match config.strategy {
            Strategy::Bm25 => {
                let docs = self.sparse_index()?.bm25_search(question, config.keep_n)?;
                timings.retrieval_ms = ms_since(start);
                Ok(single(docs, timings))
            }
            Strategy::Tfidf => {
                let docs = self.sparse_index()?.tfidf_search(question, config.keep_n)?;
                timings.retrieval_ms = ms_since(start);
                Ok(single(docs, timings))
            }
            Strategy::Dense => {
                let (index, embedder) = match (&self.dense, &self.embedder) {
                    (Some(i), Some(e)) => (i, e),
                    _ => return Err(PipelineError::Missing("dense index")),
                };
                let query = embedder
                    .embed(question)
                    .map_err(|e| PipelineError::at(PipelineStage::Retrieval, e))?;
                let docs = index
                    .l2_search(&query, config.keep_n)
                    .map_err(|e| PipelineError::at(PipelineStage::Retrieval, e))?;
                timings.retrieval_ms = ms_since(start);
                Ok(single(docs, timings))
            }
            Strategy::Hybrid => {
                let candidates = self.sparse_index()?.bm25_search(question, config.depth)?;
                timings.retrieval_ms = ms_since(start);
                if candidates.is_empty() {
                    return Ok(Retrieval {
                        documents: Vec::new(),
                        candidates,
                        timings,
                    });
                }
                let reranker = self.reranker.as_deref().ok_or(PipelineError::Missing("reranker"))?;
                let rerank_start = Instant::now();
                let pairs = candidates
                    .iter()
                    .map(|c| Ok((c.clone(), self.doc(&c.pmid)?)))
                    .collect::<Result<Vec<_>, PipelineError>>()?;
                let outcome = rerank(reranker, question, &pairs, config.keep_n).map_err(|e| match e {
                    RerankError::EmptyQuery => PipelineError::EmptyQuery,
                    other => PipelineError::at(PipelineStage::Rerank, other),
                })?;
                timings.rerank_ms = ms_since(rerank_start);
                Ok(Retrieval {
                    documents: outcome.kept,
                    candidates,
                    timings,
                })
            }
        }
    }

    /// Retrieval, prompt assembly, generation and answer parsing.
    pub fn answer(&self, question: &str, config: &RetrievalConfig) -> Result<Answered, PipelineError> {
        let start = Instant::now();
        let generator = self.generator.as_deref().ok_or(PipelineError::Missing("generator"))?;
        let retrieval = self.retrieve(question, config)?;
        let pairs = retrieval
            .documents
            .iter()
            .map(|d| Ok((d.clone(), self.doc(&d.pmid)?)))
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let prompt = build_prompt(question, &pairs);
        let gen_start = Instant::now();
        let raw = generator
            .complete(&prompt.system_text, &prompt.user_text, &prompt.context_text, EVAL_TEMPERATURE)
            .map_err(|e| PipelineError::at(PipelineStage::Generation, e))?;
        let context: HashSet<String> = retrieval.documents.iter().map(|d| d.pmid.clone()).collect();
        let parsed = parse_answer(&raw, &context).map_err(|e: GenerateError| PipelineError::at(PipelineStage::Generation, e))?;
        let mut timings = retrieval.timings;
        timings.generation_ms = ms_since(gen_start);
        let mut flags = parsed.flags;
        if retrieval.documents.is_empty() {
            flags.insert(Flag::NoContext);
        }
        timings.total_ms = ms_since(start).max(timings.stage_sum());
        Ok(Answered {
            result: QAResult {
                response: parsed.response,
                used_pmids: parsed.used_pmids,
                documents: retrieval.documents,
                timings,
                flags,
            },
            candidates: retrieval.candidates,
        })
    }

    pub fn answer_question(&self, question: &str, config: &RetrievalConfig) -> Result<QAResult, PipelineError> {
        self.answer(question, config).map(|a| a.result)
    }
}
