//! Second-stage reranking with positive-score filtering.
//!
//! Every candidate is scored against the query; candidates scoring `<= 0`
//! are dropped, the rest are sorted by score (stable, so equal scores keep
//! their first-stage order) and truncated to `keep_n`.

use std::collections::{HashMap, HashSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize, Document, TokenizerConfig};
use crate::http::{endpoint, JsonClient};
use crate::scored::{into_ranked, ScoredDoc, Stage};
use crate::timing::ms_since;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RerankError {
    #[error("empty query")]
    EmptyQuery,
    #[error("no candidates to rerank")]
    NoCandidates,
    #[error("keep_n must be at least 1")]
    ZeroKeep,
    #[error("reranker backend failed after {elapsed_ms:.1} ms: {message}")]
    Backend { message: String, elapsed_ms: f64 },
    #[error("reranker returned {got} scores for {expected} documents")]
    Arity { expected: usize, got: usize },
    #[error("reranker returned a non-finite score")]
    NonFinite,
}

/// Joint query–document relevance scorer.
///
/// Returns one finite score per document, in input order.
pub trait Reranker: Send + Sync {
    fn score_pairs(&self, query: &str, docs: &[&Document]) -> Result<Vec<f64>, RerankError>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RerankOutcome {
    pub kept: Vec<ScoredDoc>,
    /// Candidates not kept, whether filtered out or cut by `keep_n`.
    pub dropped_count: usize,
    pub rerank_time_ms: f64,
}

/// Scores `candidates` and keeps at most `keep_n` with positive scores.
pub fn rerank(
    reranker: &dyn Reranker,
    query: &str,
    candidates: &[(ScoredDoc, &Document)],
    keep_n: usize,
) -> Result<RerankOutcome, RerankError> {
    let start = Instant::now();
    if keep_n == 0 {
        return Err(RerankError::ZeroKeep);
    }
    if candidates.is_empty() {
        return Err(RerankError::NoCandidates);
    }
    let docs: Vec<&Document> = candidates.iter().map(|(_, d)| *d).collect();
    let scores = reranker.score_pairs(query, &docs).map_err(|e| match e {
        RerankError::Backend { message, .. } => RerankError::Backend {
            message,
            elapsed_ms: ms_since(start),
        },
        other => other,
    })?;
    if scores.len() != candidates.len() {
        return Err(RerankError::Arity {
            expected: candidates.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(RerankError::NonFinite);
    }
    let mut positive: Vec<(usize, f64)> = scores
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, s)| s > 0.0)
        .collect();
    // Candidates arrive in first-stage rank order; a stable sort keeps it
    // among equal scores.
    positive.sort_by(|a, b| b.1.total_cmp(&a.1));
    positive.truncate(keep_n);
    let kept = into_ranked(
        positive.into_iter().map(|(i, s)| (candidates[i].0.pmid.clone(), s)),
        Stage::Rerank,
    );
    Ok(RerankOutcome {
        dropped_count: candidates.len() - kept.len(),
        kept,
        rerank_time_ms: ms_since(start),
    })
}

/// Token-overlap relevance in `[-1, 1]`: `2·|Q ∩ D| / |Q| − 1` over
/// stopword-free token sets. Half coverage scores exactly zero and is
/// therefore filtered out.
pub fn overlap_rerank_score(query: &str, doc: &Document, tokenizer: &TokenizerConfig) -> Result<f64, RerankError> {
    let q: HashSet<String> = tokenize(query, tokenizer).into_iter().collect();
    if q.is_empty() {
        return Err(RerankError::EmptyQuery);
    }
    let d: HashSet<String> = tokenize(&doc.text(), tokenizer).into_iter().collect();
    let hit = q.iter().filter(|t| d.contains(*t)).count();
    Ok(2.0 * hit as f64 / q.len() as f64 - 1.0)
}

/// Offline reranker using [`overlap_rerank_score`].
#[derive(Debug, Clone)]
pub struct OverlapReranker {
    tokenizer: TokenizerConfig,
}

impl OverlapReranker {
    pub fn new(tokenizer: TokenizerConfig) -> Self {
        Self { tokenizer }
    }
}

impl Default for OverlapReranker {
    fn default() -> Self {
        Self::new(TokenizerConfig::english())
    }
}

impl Reranker for OverlapReranker {
    fn score_pairs(&self, query: &str, docs: &[&Document]) -> Result<Vec<f64>, RerankError> {
        docs.iter().map(|d| overlap_rerank_score(query, d, &self.tokenizer)).collect()
    }
}

/// Reranker that knows the relevant PMIDs for each query: `+1` for a
/// relevant document, `-1` otherwise. Unknown queries score everything
/// `-1`.
#[derive(Debug, Clone, Default)]
pub struct OracleReranker {
    gold: HashMap<String, HashSet<String>>,
}

impl OracleReranker {
    pub fn new(gold: HashMap<String, HashSet<String>>) -> Self {
        Self { gold }
    }
}

impl Reranker for OracleReranker {
    fn score_pairs(&self, query: &str, docs: &[&Document]) -> Result<Vec<f64>, RerankError> {
        let gold = self.gold.get(query);
        Ok(docs
            .iter()
            .map(|d| match gold {
                Some(g) if g.contains(&d.pmid) => 1.0,
                _ => -1.0,
            })
            .collect())
    }
}

#[derive(Serialize)]
struct RerankRequest<'a> {
    query: &'a str,
    docs: Vec<RerankDoc<'a>>,
}

#[derive(Serialize)]
struct RerankDoc<'a> {
    id: &'a str,
    text: String,
}

#[derive(Deserialize)]
struct RerankResponse {
    scores: Vec<f64>,
}

/// Client for a reranking service speaking
/// `POST /rerank {"query", "docs": [{"id", "text"}]}` → `{"scores": [...]}`.
#[derive(Debug, Clone)]
pub struct RemoteReranker {
    url: String,
    batch_size: usize,
    client: JsonClient,
}

impl RemoteReranker {
    pub fn new(base_url: &str, timeout: Duration, batch_size: usize) -> Self {
        Self {
            url: endpoint(base_url, "/rerank"),
            batch_size: batch_size.max(1),
            client: JsonClient::new(timeout),
        }
    }
}

impl Reranker for RemoteReranker {
    fn score_pairs(&self, query: &str, docs: &[&Document]) -> Result<Vec<f64>, RerankError> {
        let start = Instant::now();
        let mut scores = Vec::with_capacity(docs.len());
        for chunk in docs.chunks(self.batch_size) {
            let body = RerankRequest {
                query,
                docs: chunk
                    .iter()
                    .map(|d| RerankDoc {
                        id: &d.pmid,
                        text: d.text(),
                    })
                    .collect(),
            };
            let resp: RerankResponse = self.client.post(&self.url, None, &body).map_err(|message| {
                RerankError::Backend {
                    message,
                    elapsed_ms: ms_since(start),
                }
            })?;
            if resp.scores.len() != chunk.len() {
                return Err(RerankError::Arity {
                    expected: chunk.len(),
                    got: resp.scores.len(),
                });
            }
            scores.extend(resp.scores);
        }
        Ok(scores)
    }
}
