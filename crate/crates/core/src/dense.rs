//! Exhaustive flat dense-vector index ranked by squared Euclidean distance,
//! plus the text-embedding interface and its backends.
//!
//! Search scans every row; there is no approximate structure. Distances are
//! accumulated in `f64` regardless of the storage scalar, and results carry
//! `score = -distance` so that dense lists obey the same non-increasing
//! score invariant as lexical ones.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{pmid_cmp, tokenize, Document, TokenizerConfig};
use crate::http::{endpoint, JsonClient};
use crate::scalar::Scalar;
use crate::scored::{into_ranked, ScoredDoc, Stage};
use crate::timing::{ms_since, BuildReport};

pub const SNAPSHOT_FORMAT: &str = "medrag-dense-index";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("embedding backend failed: {0}")]
    Backend(String),
    #[error("embedding has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("embedding contains a non-finite value")]
    NonFinite,
}

#[derive(Debug, Error)]
pub enum DenseError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("dimension must be at least 1")]
    ZeroDim,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("query has dimension {got}, index has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("embedding failed after {completed} rows: {source}")]
    Embedder {
        completed: usize,
        #[source]
        source: EmbedError,
    },
    #[error("invalid index snapshot: {0}")]
    Snapshot(String),
    #[error("snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// A finite, fixed-length vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", try_from = "Vec<T>", into = "Vec<T>")]
pub struct Embedding<T: Scalar>(Vec<T>);

impl<T: Scalar> Embedding<T> {
    pub fn new(values: Vec<T>) -> Result<Self, EmbedError> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Self(values))
        } else {
            Err(EmbedError::NonFinite)
        }
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }
}

impl<T: Scalar> TryFrom<Vec<T>> for Embedding<T> {
    type Error = EmbedError;

    fn try_from(values: Vec<T>) -> Result<Self, EmbedError> {
        Self::new(values)
    }
}

impl<T: Scalar> From<Embedding<T>> for Vec<T> {
    fn from(e: Embedding<T>) -> Self {
        e.0
    }
}

/// Text encoder. Implementations must be deterministic for a fixed
/// configuration, and `batch_embed(texts)[i]` must equal `embed(texts[i])`.
pub trait Embedder<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Embedding<T>, EmbedError>;

    fn batch_embed(&self, texts: &[&str]) -> Result<Vec<Embedding<T>>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hashes the token multiset of `text` into `dim` buckets and L2-normalizes
/// the counts. Text without tokens maps to the zero vector.
///
/// # Panics
///
/// If `dim` is zero.
pub fn mock_embed<T: Scalar>(text: &str, dim: usize) -> Embedding<T> {
    assert!(dim > 0, "embedding dimension must be positive");
    let mut counts = vec![0u32; dim];
    for token in tokenize(text, &TokenizerConfig::default()) {
        counts[(fnv1a(token.as_bytes()) % dim as u64) as usize] += 1;
    }
    let norm = counts.iter().map(|&c| (c as f64) * (c as f64)).sum::<f64>().sqrt();
    let values = counts
        .into_iter()
        .map(|c| {
            if norm == 0.0 {
                T::zero()
            } else {
                T::from_f64_lossy(c as f64 / norm)
            }
        })
        .collect();
    Embedding(values)
}

/// Deterministic offline embedder backed by [`mock_embed`].
#[derive(Debug, Clone, Copy)]
pub struct MockEmbedder {
    dim: usize,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Result<Self, DenseError> {
        if dim == 0 {
            return Err(DenseError::ZeroDim);
        }
        Ok(Self { dim })
    }
}

impl<T: Scalar> Embedder<T> for MockEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding<T>, EmbedError> {
        Ok(mock_embed(text, self.dim))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for an embedding service speaking
/// `POST /embed {"texts": [...]}` → `{"vectors": [[...], ...]}`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    url: String,
    dim: usize,
    batch_size: usize,
    client: JsonClient,
}

impl RemoteEmbedder {
    pub fn new(base_url: &str, dim: usize, timeout: Duration, batch_size: usize) -> Self {
        Self {
            url: endpoint(base_url, "/embed"),
            dim,
            batch_size: batch_size.max(1),
            client: JsonClient::new(timeout),
        }
    }
}

impl<T: Scalar> Embedder<T> for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding<T>, EmbedError> {
        let mut out = self.batch_embed(&[text])?;
        out.pop().ok_or_else(|| EmbedError::Backend("empty response".into()))
    }

    fn batch_embed(&self, texts: &[&str]) -> Result<Vec<Embedding<T>>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            let resp: EmbedResponse = self
                .client
                .post(&self.url, None, &EmbedRequest { texts: chunk })
                .map_err(EmbedError::Backend)?;
            if resp.vectors.len() != chunk.len() {
                return Err(EmbedError::Backend(format!(
                    "sent {} texts, received {} vectors",
                    chunk.len(),
                    resp.vectors.len()
                )));
            }
            for v in resp.vectors {
                if v.len() != self.dim {
                    return Err(EmbedError::Dimension {
                        expected: self.dim,
                        got: v.len(),
                    });
                }
                out.push(Embedding::new(v.into_iter().map(T::from_f64_lossy).collect())?);
            }
        }
        Ok(out)
    }
}

/// Row-major `N × dim` matrix with one PMID per row.
#[derive(Debug, Clone)]
pub struct DenseIndex<T: Scalar> {
    dim: usize,
    data: Vec<T>,
    ids: Vec<String>,
    pmid_order: Vec<u32>,
}

impl<T: Scalar> DenseIndex<T> {
    pub fn new(dim: usize) -> Result<Self, DenseError> {
        if dim == 0 {
            return Err(DenseError::ZeroDim);
        }
        Ok(Self {
            dim,
            data: Vec::new(),
            ids: Vec::new(),
            pmid_order: Vec::new(),
        })
    }

    /// Builds from explicit rows; used by snapshot loading and tests.
    pub fn from_rows(dim: usize, rows: Vec<(String, Embedding<T>)>) -> Result<Self, DenseError> {
        let mut index = Self::new(dim)?;
        let mut seen = std::collections::HashSet::with_capacity(rows.len());
        for (id, emb) in rows {
            if emb.dim() != dim {
                return Err(DenseError::Dimension {
                    expected: dim,
                    got: emb.dim(),
                });
            }
            if !seen.insert(id.clone()) {
                return Err(DenseError::DuplicateId(id));
            }
            index.data.extend_from_slice(emb.values());
            index.ids.push(id);
        }
        index.reorder();
        Ok(index)
    }

    fn reorder(&mut self) {
        let mut by_pmid: Vec<u32> = (0..self.ids.len() as u32).collect();
        by_pmid.sort_by(|&a, &b| pmid_cmp(&self.ids[a as usize], &self.ids[b as usize]));
        self.pmid_order = vec![0; self.ids.len()];
        for (pos, &row) in by_pmid.iter().enumerate() {
            self.pmid_order[row as usize] = pos as u32;
        }
    }

    /// Embeds `title + " " + content` of every document, `batch_size` texts
    /// per embedder call.
    pub fn build(
        docs: &[Document],
        embedder: &dyn Embedder<T>,
        batch_size: usize,
    ) -> Result<(Self, BuildReport), DenseError> {
        let start = Instant::now();
        if docs.is_empty() {
            return Err(DenseError::EmptyCorpus);
        }
        let dim = embedder.dim();
        let mut rows = Vec::with_capacity(docs.len());
        for chunk in docs.chunks(batch_size.max(1)) {
            let texts: Vec<String> = chunk.iter().map(Document::text).collect();
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let embs = embedder.batch_embed(&refs).map_err(|source| DenseError::Embedder {
                completed: rows.len(),
                source,
            })?;
            if embs.len() != chunk.len() {
                return Err(DenseError::Embedder {
                    completed: rows.len(),
                    source: EmbedError::Backend("embedder returned the wrong number of vectors".into()),
                });
            }
            for (doc, emb) in chunk.iter().zip(embs) {
                if emb.dim() != dim {
                    return Err(DenseError::Embedder {
                        completed: rows.len(),
                        source: EmbedError::Dimension {
                            expected: dim,
                            got: emb.dim(),
                        },
                    });
                }
                rows.push((doc.pmid.clone(), emb));
            }
        }
        let index = Self::from_rows(dim, rows)?;
        let report = BuildReport::new(index.len(), ms_since(start));
        Ok((index, report))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn squared_distance(&self, row: usize, query: &[T]) -> f64 {
        self.row(row)
            .iter()
            .zip(query)
            .map(|(&a, &b)| {
                let d = a.as_f64() - b.as_f64();
                d * d
            })
            .sum()
    }

    /// The `k` rows nearest to `query`, nearest first; equal distances go
    /// to the numerically smaller PMID.
    pub fn l2_search(&self, query: &Embedding<T>, k: usize) -> Result<Vec<ScoredDoc>, DenseError> {
        if k == 0 {
            return Err(DenseError::ZeroK);
        }
        if query.dim() != self.dim {
            return Err(DenseError::Dimension {
                expected: self.dim,
                got: query.dim(),
            });
        }
        let q = query.values();
        let mut hits: Vec<(f64, u32)> = (0..self.len()).map(|i| (self.squared_distance(i, q), i as u32)).collect();
        let cmp = |a: &(f64, u32), b: &(f64, u32)| {
            a.0.total_cmp(&b.0)
                .then_with(|| self.pmid_order[a.1 as usize].cmp(&self.pmid_order[b.1 as usize]))
        };
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, cmp);
            hits.truncate(k);
        }
        hits.sort_unstable_by(cmp);
        Ok(into_ranked(
            hits.into_iter().map(|(d, i)| (self.ids[i as usize].clone(), -d)),
            Stage::Dense,
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DenseError> {
        let snap = Snapshot {
            format: SNAPSHOT_FORMAT.to_owned(),
            version: SNAPSHOT_VERSION,
            scalar: T::NAME.to_owned(),
            dim: self.dim,
            ids: self.ids.clone(),
            vectors: self.data.clone(),
        };
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, &snap).map_err(|e| DenseError::Snapshot(e.to_string()))?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DenseError> {
        let snap: Snapshot<T> = serde_json::from_reader(BufReader::new(File::open(path)?))
            .map_err(|e| DenseError::Snapshot(e.to_string()))?;
        if snap.format != SNAPSHOT_FORMAT || snap.version != SNAPSHOT_VERSION {
            return Err(DenseError::Snapshot(format!(
                "unsupported format {} v{}",
                snap.format, snap.version
            )));
        }
        if snap.scalar != T::NAME {
            return Err(DenseError::Snapshot(format!(
                "scalar type {} does not match {}",
                snap.scalar,
                T::NAME
            )));
        }
        if snap.dim == 0 || snap.vectors.len() != snap.dim * snap.ids.len() {
            return Err(DenseError::Snapshot("matrix shape does not match ids".into()));
        }
        let rows = snap
            .ids
            .into_iter()
            .zip(snap.vectors.chunks(snap.dim))
            .map(|(id, v)| {
                Embedding::new(v.to_vec())
                    .map(|e| (id, e))
                    .map_err(|e| DenseError::Snapshot(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_rows(snap.dim, rows)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct Snapshot<T: Scalar> {
    format: String,
    version: u32,
    scalar: String,
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<T>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn emb(v: &[f64]) -> Embedding<f64> {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn build_shape() {
        let docs = vec![Document::new("1", "a", "b"), Document::new("2", "c", "d")];
        let (idx, report) = DenseIndex::<f64>::build(&docs, &MockEmbedder::new(4).unwrap(), 16).unwrap();
        assert_eq!((idx.len(), idx.dim(), idx.ids().len()), (2, 4, 2));
        assert_eq!(report.docs, 2);
        assert!(matches!(
            DenseIndex::<f64>::build(&[], &MockEmbedder::new(4).unwrap(), 16),
            Err(DenseError::EmptyCorpus)
        ));
    }

    #[test]
    fn one_dimensional_distances() {
        let idx = DenseIndex::from_rows(1, vec![("1".into(), emb(&[0.0])), ("2".into(), emb(&[3.0]))]).unwrap();
        let hits = idx.l2_search(&emb(&[1.0]), 5).unwrap();
        assert_eq!(hits.iter().map(|h| (h.pmid.as_str(), h.score)).collect::<Vec<_>>(), [("1", -1.0), ("2", -4.0)]);
        assert!(hits.iter().all(|h| h.stage == Stage::Dense));
    }

    #[test]
    fn identical_query_ranks_first_at_zero() {
        let idx = DenseIndex::from_rows(
            2,
            vec![("5".into(), emb(&[1.0, 2.0])), ("6".into(), emb(&[-1.0, 0.5]))],
        )
        .unwrap();
        let hits = idx.l2_search(&emb(&[-1.0, 0.5]), 1).unwrap();
        assert_eq!(hits[0].pmid, "6");
        assert_eq!(hits[0].score, 0.0);
    }

    #[test]
    fn search_errors() {
        let idx = DenseIndex::from_rows(2, vec![("1".into(), emb(&[0.0, 0.0]))]).unwrap();
        assert!(matches!(idx.l2_search(&emb(&[0.0]), 1), Err(DenseError::Dimension { .. })));
        assert!(matches!(idx.l2_search(&emb(&[0.0, 0.0]), 0), Err(DenseError::ZeroK)));
        assert!(matches!(
            DenseIndex::from_rows(1, vec![("1".into(), emb(&[0.0])), ("1".into(), emb(&[1.0]))]),
            Err(DenseError::DuplicateId(_))
        ));
        assert_eq!(Embedding::new(vec![f64::NAN]), Err(EmbedError::NonFinite));
    }

    #[test]
    fn distance_ties_break_on_pmid() {
        let idx = DenseIndex::from_rows(
            1,
            vec![("20".into(), emb(&[1.0])), ("3".into(), emb(&[-1.0])), ("100".into(), emb(&[5.0]))],
        )
        .unwrap();
        let hits = idx.l2_search(&emb(&[0.0]), 2).unwrap();
        assert_eq!(hits.iter().map(|h| h.pmid.as_str()).collect::<Vec<_>>(), ["3", "20"]);
    }

    #[test]
    fn mock_embed_contract() {
        let a: Embedding<f64> = mock_embed("x", 8);
        assert_eq!(a, mock_embed("x", 8));
        let z: Embedding<f64> = mock_embed("", 8);
        assert!(z.values().iter().all(|&v| v == 0.0));
        let p: Embedding<f64> = mock_embed("fever cough fever", 16);
        let q: Embedding<f64> = mock_embed("Cough, FEVER fever.", 16);
        assert_eq!(p, q);
        let norm: f64 = p.values().iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_equals_single() {
        let e = MockEmbedder::new(12).unwrap();
        let texts = ["aspirin fever", "", "measles vaccine vaccine"];
        let batch: Vec<Embedding<f32>> = e.batch_embed(&texts).unwrap();
        for (t, b) in texts.iter().zip(&batch) {
            assert_eq!(&Embedder::<f32>::embed(&e, t).unwrap(), b);
        }
    }

    struct FailingAfter(usize);

    impl Embedder<f64> for FailingAfter {
        fn dim(&self) -> usize {
            2
        }
        fn embed(&self, text: &str) -> Result<Embedding<f64>, EmbedError> {
            let n: usize = text.trim().parse().unwrap();
            if n >= self.0 {
                Err(EmbedError::Backend("down".into()))
            } else {
                Ok(Embedding::new(vec![n as f64, 0.0]).unwrap())
            }
        }
    }

    #[test]
    fn embedder_failure_reports_completed_rows() {
        let docs: Vec<_> = (0..10).map(|i| Document::new((i + 1).to_string(), "", i.to_string())).collect();
        match DenseIndex::build(&docs, &FailingAfter(7), 3) {
            Err(DenseError::Embedder { completed, .. }) => assert_eq!(completed, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn matches_brute_force_and_self_retrieval() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<(String, Embedding<f64>)> = (0..100)
            .map(|i| {
                let v = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
                ((i + 1).to_string(), Embedding::new(v).unwrap())
            })
            .collect();
        let idx = DenseIndex::from_rows(8, rows.clone()).unwrap();
        for _ in 0..20 {
            let q = Embedding::new((0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let mut all: Vec<(f64, usize)> = rows
                .iter()
                .enumerate()
                .map(|(i, (_, e))| (e.values().iter().zip(q.values()).map(|(a, b)| (a - b) * (a - b)).sum(), i))
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let hits = idx.l2_search(&q, 10).unwrap();
            let want: Vec<&str> = all[..10].iter().map(|&(_, i)| rows[i].0.as_str()).collect();
            assert_eq!(hits.iter().map(|h| h.pmid.as_str()).collect::<Vec<_>>(), want);
        }
        for (id, e) in &rows {
            let hit = &idx.l2_search(e, 1).unwrap()[0];
            assert_eq!((&hit.pmid, hit.score), (id, 0.0));
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dense.json");
        let docs: Vec<_> = (1..=5).map(|i| Document::new(i.to_string(), "t", format!("w{i} x"))).collect();
        let (idx, _) = DenseIndex::<f32>::build(&docs, &MockEmbedder::new(6).unwrap(), 2).unwrap();
        idx.save(&path).unwrap();
        let back = DenseIndex::<f32>::load(&path).unwrap();
        let q: Embedding<f32> = mock_embed("w3 x", 6);
        assert_eq!(back.l2_search(&q, 5).unwrap(), idx.l2_search(&q, 5).unwrap());
        assert!(matches!(DenseIndex::<f64>::load(&path), Err(DenseError::Snapshot(_))));
    }
}
