//! In-memory inverted index with Okapi BM25 and TF-IDF ranking.
//!
//! ```text
//! bm25(D, Q)  = Σ_{t ∈ Q} idf(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·dl/avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! tfidf(D, Q) = Σ_{t ∈ Q} tf · ln(N / df)
//! ```
//!
//! `Q` is the set of distinct query terms after tokenization with the same
//! [`TokenizerConfig`] the index was built with. Documents sharing no term
//! with the query are never returned. Ties go to the numerically smaller
//! PMID.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{pmid_cmp, tokenize, DocStore, Document, TokenizerConfig};
use crate::scalar::Scalar;
use crate::scored::{into_ranked, ScoredDoc, Stage};
use crate::timing::{ms_since, BuildReport};

pub const SNAPSHOT_FORMAT: &str = "medrag-sparse-index";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty query")]
    EmptyQuery,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("too many documents for a 32-bit document reference")]
    TooManyDocuments,
    #[error("invalid index snapshot: {0}")]
    Snapshot(String),
    #[error("snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Bm25Params<T: Scalar> {
    pub k1: T,
    pub b: T,
}

impl<T: Scalar> Default for Bm25Params<T> {
    fn default() -> Self {
        Self {
            k1: T::from_f64_lossy(1.2),
            b: T::from_f64_lossy(0.75),
        }
    }
}

/// Smoothed BM25 inverse document frequency; strictly positive for
/// `1 <= df <= n`.
pub fn bm25_idf<T: Scalar>(n: usize, df: usize) -> T {
    let half = T::from_f64_lossy(0.5);
    let n = T::from_count(n);
    let df = T::from_count(df);
    (T::one() + (n - df + half) / (df + half)).ln()
}

/// Saturated, length-normalized term-frequency component of BM25.
pub fn bm25_tf<T: Scalar>(tf: u32, doc_len: T, avg_doc_len: T, params: Bm25Params<T>) -> T {
    let tf = T::from_u32(tf).expect("u32 fits in float");
    let norm = params.k1 * (T::one() - params.b + params.b * doc_len / avg_doc_len);
    tf * (params.k1 + T::one()) / (tf + norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Immutable inverted index. `doc` references in postings index into the
/// document table, and every postings list is sorted by `doc`.
#[derive(Debug, Clone)]
pub struct InvertedIndex<T: Scalar> {
    postings: HashMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: T,
    docs: DocStore,
    tokenizer: TokenizerConfig,
    params: Bm25Params<T>,
    // Derived on build/load.
    length_norm: Vec<T>,
    pmid_order: Vec<u32>,
}

impl<T: Scalar> InvertedIndex<T> {
    /// Indexes `docs` (title and content) with default BM25 parameters.
    pub fn build(docs: Vec<Document>, tokenizer: &TokenizerConfig) -> Result<(Self, BuildReport), SparseError> {
        Self::build_with(docs, tokenizer, Bm25Params::default())
    }

    pub fn build_with(
        docs: Vec<Document>,
        tokenizer: &TokenizerConfig,
        params: Bm25Params<T>,
    ) -> Result<(Self, BuildReport), SparseError> {
        let start = Instant::now();
        let docs = DocStore::new(docs);
        if docs.is_empty() {
            return Err(SparseError::EmptyCorpus);
        }
        if docs.len() > u32::MAX as usize {
            return Err(SparseError::TooManyDocuments);
        }
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_lengths = Vec::with_capacity(docs.len());
        let mut counts: HashMap<String, u32> = HashMap::new();
        for (i, doc) in docs.iter().enumerate() {
            counts.clear();
            let tokens = tokenize(&doc.text(), tokenizer);
            doc_lengths.push(tokens.len() as u32);
            for t in tokens {
                *counts.entry(t).or_insert(0) += 1;
            }
            for (term, tf) in counts.drain() {
                postings.entry(term).or_default().push(Posting { doc: i as u32, tf });
            }
        }
        let index = Self::assemble(postings, doc_lengths, docs, tokenizer.clone(), params);
        let report = BuildReport::new(index.doc_count(), ms_since(start));
        Ok((index, report))
    }

    fn assemble(
        postings: HashMap<String, Vec<Posting>>,
        doc_lengths: Vec<u32>,
        docs: DocStore,
        tokenizer: TokenizerConfig,
        params: Bm25Params<T>,
    ) -> Self {
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = T::from_u64(total).expect("u64 fits in float") / T::from_count(doc_lengths.len());
        let length_norm = doc_lengths
            .iter()
            .map(|&dl| {
                let dl = T::from_u32(dl).expect("u32 fits in float");
                params.k1 * (T::one() - params.b + params.b * dl / avg_doc_length)
            })
            .collect();
        let mut by_pmid: Vec<u32> = (0..docs.len() as u32).collect();
        by_pmid.sort_by(|&a, &b| pmid_cmp(&docs.as_slice()[a as usize].pmid, &docs.as_slice()[b as usize].pmid));
        let mut pmid_order = vec![0u32; docs.len()];
        for (pos, &doc) in by_pmid.iter().enumerate() {
            pmid_order[doc as usize] = pos as u32;
        }
        Self {
            postings,
            doc_lengths,
            avg_doc_length,
            docs,
            tokenizer,
            params,
            length_norm,
            pmid_order,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_doc_length(&self) -> T {
        self.avg_doc_length
    }

    pub fn doc_length(&self, doc: usize) -> Option<u32> {
        self.doc_lengths.get(doc).copied()
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    pub fn documents(&self) -> &DocStore {
        &self.docs
    }

    pub fn tokenizer(&self) -> &TokenizerConfig {
        &self.tokenizer
    }

    pub fn params(&self) -> Bm25Params<T> {
        self.params
    }

    /// Distinct query terms in first-occurrence order.
    pub fn query_terms(&self, query: &str) -> Result<Vec<String>, SparseError> {
        let mut seen = HashSet::new();
        let terms: Vec<String> = tokenize(query, &self.tokenizer)
            .into_iter()
            .filter(|t| seen.insert(t.clone()))
            .collect();
        if terms.is_empty() {
            return Err(SparseError::EmptyQuery);
        }
        Ok(terms)
    }

    pub fn bm25_search(&self, query: &str, k: usize) -> Result<Vec<ScoredDoc>, SparseError> {
        let n = self.doc_count();
        self.search(query, k, |df| bm25_idf::<T>(n, df), |doc, tf, idf| {
            let tf = T::from_u32(tf).expect("u32 fits in float");
            idf * tf * (self.params.k1 + T::one()) / (tf + self.length_norm[doc])
        })
    }

    /// TF-IDF baseline. A term present in every document contributes zero,
    /// but matching documents are still returned.
    pub fn tfidf_search(&self, query: &str, k: usize) -> Result<Vec<ScoredDoc>, SparseError> {
        let n = T::from_count(self.doc_count());
        self.search(query, k, |df| (n / T::from_count(df)).ln(), |_, tf, idf| {
            T::from_u32(tf).expect("u32 fits in float") * idf
        })
    }

    fn search(
        &self,
        query: &str,
        k: usize,
        term_weight: impl Fn(usize) -> T,
        contribution: impl Fn(usize, u32, T) -> T,
    ) -> Result<Vec<ScoredDoc>, SparseError> {
        if k == 0 {
            return Err(SparseError::ZeroK);
        }
        let terms = self.query_terms(query)?;
        let mut acc: Vec<T> = Vec::new();
        let mut visited: Vec<bool> = Vec::new();
        let mut touched: Vec<u32> = Vec::new();
        for term in &terms {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            if acc.is_empty() {
                acc = vec![T::zero(); self.doc_count()];
                visited = vec![false; self.doc_count()];
            }
            let weight = term_weight(list.len());
            for p in list {
                let doc = p.doc as usize;
                if !visited[doc] {
                    visited[doc] = true;
                    touched.push(p.doc);
                }
                acc[doc] = acc[doc] + contribution(doc, p.tf, weight);
            }
        }
        let cmp = |a: &u32, b: &u32| {
            acc[*b as usize]
                .partial_cmp(&acc[*a as usize])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| self.pmid_order[*a as usize].cmp(&self.pmid_order[*b as usize]))
        };
        if touched.len() > k {
            touched.select_nth_unstable_by(k - 1, cmp);
            touched.truncate(k);
        }
        touched.sort_unstable_by(cmp);
        let docs = self.docs.as_slice();
        Ok(into_ranked(
            touched
                .into_iter()
                .map(|d| (docs[d as usize].pmid.clone(), acc[d as usize].as_f64())),
            Stage::Sparse,
        ))
    }

    /// Writes a version-tagged JSON snapshot.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SparseError> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, &self.to_snapshot())
            .map_err(|e| SparseError::Snapshot(e.to_string()))?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SparseError> {
        let snap: Snapshot<T> = serde_json::from_reader(BufReader::new(File::open(path)?))
            .map_err(|e| SparseError::Snapshot(e.to_string()))?;
        Self::from_snapshot(snap)
    }

    fn to_snapshot(&self) -> Snapshot<T> {
        let mut terms: Vec<_> = self.postings.iter().collect();
        terms.sort_by(|a, b| a.0.cmp(b.0));
        Snapshot {
            format: SNAPSHOT_FORMAT.to_owned(),
            version: SNAPSHOT_VERSION,
            scalar: T::NAME.to_owned(),
            params: self.params,
            tokenizer: self.tokenizer.clone(),
            documents: self.docs.as_slice().to_vec(),
            doc_lengths: self.doc_lengths.clone(),
            postings: terms
                .into_iter()
                .map(|(t, l)| (t.clone(), l.iter().map(|p| (p.doc, p.tf)).collect()))
                .collect(),
        }
    }

    fn from_snapshot(snap: Snapshot<T>) -> Result<Self, SparseError> {
        let bad = |m: String| Err(SparseError::Snapshot(m));
        if snap.format != SNAPSHOT_FORMAT || snap.version != SNAPSHOT_VERSION {
            return bad(format!("unsupported format {} v{}", snap.format, snap.version));
        }
        if snap.scalar != T::NAME {
            return bad(format!("scalar type {} does not match {}", snap.scalar, T::NAME));
        }
        let n = snap.documents.len();
        if n == 0 {
            return Err(SparseError::EmptyCorpus);
        }
        let docs = DocStore::new(snap.documents);
        if docs.len() != n {
            return bad("duplicate PMIDs in document table".into());
        }
        if snap.doc_lengths.len() != n {
            return bad("doc_lengths does not match document table".into());
        }
        let mut seen_len = vec![0u64; n];
        let mut postings = HashMap::with_capacity(snap.postings.len());
        for (term, list) in snap.postings {
            if list.is_empty() {
                return bad(format!("empty postings for {term:?}"));
            }
            if list.windows(2).any(|w| w[0].0 >= w[1].0) {
                return bad(format!("postings for {term:?} not strictly ascending"));
            }
            let mut out = Vec::with_capacity(list.len());
            for (doc, tf) in list {
                if doc as usize >= n || tf == 0 {
                    return bad(format!("bad posting ({doc}, {tf}) for {term:?}"));
                }
                seen_len[doc as usize] += tf as u64;
                out.push(Posting { doc, tf });
            }
            postings.insert(term, out);
        }
        if seen_len.iter().zip(&snap.doc_lengths).any(|(&a, &b)| a != b as u64) {
            return bad("postings disagree with doc_lengths".into());
        }
        Ok(Self::assemble(postings, snap.doc_lengths, docs, snap.tokenizer, snap.params))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct Snapshot<T: Scalar> {
    format: String,
    version: u32,
    scalar: String,
    params: Bm25Params<T>,
    tokenizer: TokenizerConfig,
    documents: Vec<Document>,
    doc_lengths: Vec<u32>,
    postings: Vec<(String, Vec<(u32, u32)>)>,
}
