//! Retrieval-augmented question answering over abstract-sized document
//! corpora.
//!
//! Offline, documents are ingested from newline-delimited JSON and indexed
//! into an inverted index ([`sparse`]) and/or a flat embedding matrix
//! ([`dense`]). Online, a question is answered by first-stage retrieval,
//! optional cross-encoder style reranking with positive-score filtering
//! ([`rerank`]), and a grounded generation step that cites PMIDs
//! ([`generate`]). [`eval`] reproduces retriever comparisons, retrieval-depth
//! sweeps and latency decompositions.
//!
//! Scoring and index types are generic over [`Scalar`] (`f32`/`f64`); the
//! aliases below fix the precision used by the online pipeline.

pub mod corpus;
pub mod dense;
pub mod eval;
pub mod generate;
mod http;
pub mod pipeline;
pub mod rerank;
pub mod scalar;
pub mod scored;
pub mod sparse;
pub mod synthetic;
pub mod timing;

pub use corpus::{Document, TokenizerConfig};
pub use scalar::Scalar;
pub use pipeline::{Pipeline, RetrievalConfig, Strategy};
pub use scored::{ScoredDoc, Stage};
pub use timing::Timings;

/// Inverted index at pipeline precision.
pub type SparseIndex = sparse::InvertedIndex<f64>;
/// Single-precision inverted index.
pub type SparseIndexF32 = sparse::InvertedIndex<f32>;
/// Flat embedding index at pipeline precision.
pub type FlatIndex = dense::DenseIndex<f64>;
/// Single-precision flat embedding index; distances still accumulate in
/// `f64`.
pub type FlatIndexF32 = dense::DenseIndex<f32>;
