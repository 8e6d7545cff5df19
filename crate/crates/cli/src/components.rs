//! Turning flags and config values into a [`Pipeline`].

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Args;
use medrag::corpus::{english_stopwords, ingest_jsonl, load_stopwords, DocStore, Document, TokenizerConfig};
use medrag::dense::{DenseIndex, Embedder, MockEmbedder, RemoteEmbedder};
use medrag::eval::{gold_answers, gold_sets, load_eval, EvalQuestion};
use medrag::generate::{ChatCompletionsGenerator, ChatConfig, Generator, StubGenerator, StubPolicy};
use medrag::rerank::{OracleReranker, OverlapReranker, RemoteReranker, Reranker};
use medrag::{Pipeline, SparseIndex};

use crate::config::Config;

/// Environment variable holding the chat-completions API key.
pub const API_KEY_ENV: &str = "MEDRAG_API_KEY";

/// Flags shared by every command that needs a pipeline. Each may also be
/// set in the config file under the same name.
#[derive(Debug, Clone, Default, Args)]
pub struct ComponentArgs {
    /// Corpus file (JSONL with PMID, title, content).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Saved sparse index; built from --corpus when absent.
    #[arg(long)]
    pub sparse_index: Option<PathBuf>,
    /// Saved dense index; built from --corpus with --embedder when absent.
    #[arg(long)]
    pub dense_index: Option<PathBuf>,
    /// `mock` or the base URL of an embedding service.
    #[arg(long)]
    pub embedder: Option<String>,
    /// Embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// `overlap`, `oracle` (needs --questions) or the base URL of a
    /// reranking service.
    #[arg(long)]
    pub reranker: Option<String>,
    /// `stub:fixed:<answer>`, `stub:gold_echo` (needs --questions) or a
    /// chat-completions endpoint URL.
    #[arg(long)]
    pub generator: Option<String>,
    /// Model name sent to the chat-completions endpoint.
    #[arg(long)]
    pub model: Option<String>,
    /// Benchmark question file.
    #[arg(long)]
    pub questions: Option<PathBuf>,
    /// Keep summary questions when loading --questions.
    #[arg(long)]
    pub include_summary: bool,
    /// `english`, `none` or a stopword file, for indexes built here.
    #[arg(long)]
    pub stopwords: Option<String>,
    /// Backend call timeout in seconds.
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    /// Concurrent generator calls.
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Texts per embedder or reranker request.
    #[arg(long)]
    pub batch_size: Option<usize>,
}

/// [`ComponentArgs`] with config values and defaults applied.
#[derive(Debug, Clone)]
pub struct Components {
    pub corpus: Option<PathBuf>,
    pub sparse_index: Option<PathBuf>,
    pub dense_index: Option<PathBuf>,
    pub embedder: Option<String>,
    pub dim: usize,
    pub reranker: Option<String>,
    pub generator: Option<String>,
    pub model: String,
    pub questions: Option<PathBuf>,
    pub include_summary: bool,
    pub stopwords: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub batch_size: usize,
}

impl ComponentArgs {
    pub fn resolve(self, cfg: &Config) -> Result<Components> {
        Ok(Components {
            corpus: cfg.pick(self.corpus, "corpus")?,
            sparse_index: cfg.pick(self.sparse_index, "sparse_index")?,
            dense_index: cfg.pick(self.dense_index, "dense_index")?,
            embedder: cfg.pick(self.embedder, "embedder")?,
            dim: cfg.pick_or(self.dim, "dim", 64)?,
            reranker: cfg.pick(self.reranker, "reranker")?,
            generator: cfg.pick(self.generator, "generator")?,
            model: cfg.pick_or(self.model, "model", "gpt-3.5-turbo".to_owned())?,
            questions: cfg.pick(self.questions, "questions")?,
            include_summary: self.include_summary || cfg.pick_or(None, "include_summary", false)?,
            stopwords: cfg.pick_or(self.stopwords, "stopwords", "english".to_owned())?,
            timeout: Duration::from_secs(cfg.pick_or(self.timeout_secs, "timeout_secs", 30)?),
            max_in_flight: cfg.pick_or(self.max_in_flight, "max_in_flight", 4)?,
            batch_size: cfg.pick_or(self.batch_size, "batch_size", 32)?,
        })
    }
}

pub fn tokenizer(spec: &str) -> Result<TokenizerConfig> {
    Ok(match spec {
        "english" => TokenizerConfig::with_stopwords(english_stopwords().clone()),
        "none" => TokenizerConfig::default(),
        path => TokenizerConfig::with_stopwords(load_stopwords(path)?),
    })
}

pub fn load_corpus(path: &Path) -> Result<Vec<Document>> {
    let ingested = ingest_jsonl(path, &TokenizerConfig::default())?;
    for s in &ingested.skipped {
        eprintln!("{}:{}: skipped: {}", path.display(), s.line, s.reason);
    }
    if ingested.documents.is_empty() {
        bail!("{}: no valid documents", path.display());
    }
    Ok(ingested.documents)
}

pub fn embedder(spec: &str, dim: usize, timeout: Duration, batch_size: usize) -> Result<Arc<dyn Embedder<f64>>> {
    Ok(match spec {
        "mock" => Arc::new(MockEmbedder::new(dim)?),
        url if url.starts_with("http://") || url.starts_with("https://") => {
            Arc::new(RemoteEmbedder::new(url, dim, timeout, batch_size))
        }
        other => bail!("unknown embedder {other:?}; expected `mock` or a URL"),
    })
}

impl Components {
    /// Questions from `--questions`, filtered against `pmids`.
    pub fn load_questions(&self, pmids: &HashSet<String>) -> Result<Vec<EvalQuestion>> {
        let path = self.questions.as_ref().context("--questions is required")?;
        let qs = load_eval(path, pmids, self.include_summary).with_context(|| format!("loading {}", path.display()))?;
        Ok(qs)
    }

    fn reranker(&self, questions: Option<&[EvalQuestion]>) -> Result<Option<Arc<dyn Reranker>>> {
        let Some(spec) = self.reranker.as_deref() else { return Ok(None) };
        Ok(Some(match spec {
            "overlap" => Arc::new(OverlapReranker::default()),
            "oracle" => {
                let qs = questions.context("the oracle reranker needs --questions")?;
                Arc::new(OracleReranker::new(gold_sets(qs)))
            }
            url if url.starts_with("http://") || url.starts_with("https://") => {
                Arc::new(RemoteReranker::new(url, self.timeout, self.batch_size))
            }
            other => bail!("unknown reranker {other:?}; expected overlap, oracle or a URL"),
        }))
    }

    fn generator(&self, questions: Option<&[EvalQuestion]>) -> Result<Option<Arc<dyn Generator>>> {
        let Some(spec) = self.generator.as_deref() else { return Ok(None) };
        if let Some(answer) = spec.strip_prefix("stub:fixed:") {
            return Ok(Some(Arc::new(StubGenerator::new(StubPolicy::FixedAnswer(answer.to_owned())))));
        }
        Ok(Some(match spec {
            "stub:gold_echo" => {
                let qs = questions.context("the gold_echo stub needs --questions")?;
                Arc::new(StubGenerator::new(StubPolicy::GoldEcho(gold_answers(qs))))
            }
            url if url.starts_with("http://") || url.starts_with("https://") => {
                Arc::new(ChatCompletionsGenerator::new(ChatConfig {
                    endpoint: url.to_owned(),
                    model: self.model.clone(),
                    api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
                    timeout: self.timeout,
                    max_in_flight: self.max_in_flight,
                }))
            }
            other => bail!("unknown generator {other:?}; expected stub:fixed:<answer>, stub:gold_echo or a URL"),
        }))
    }

    /// Loads or builds every configured component. Returns `None` when
    /// neither a corpus nor a sparse index is configured. Questions are
    /// loaded whenever `--questions` is set, for the oracle reranker and
    /// gold-echo stub.
    pub fn build(&self) -> Result<Option<(Pipeline, Option<Vec<EvalQuestion>>)>> {
        let (docs, sparse) = match (&self.sparse_index, &self.corpus) {
            (Some(path), _) => {
                let index =
                    SparseIndex::load(path).with_context(|| format!("loading sparse index {}", path.display()))?;
                (index.documents().as_slice().to_vec(), Some(index))
            }
            (None, Some(corpus)) => {
                let docs = load_corpus(corpus)?;
                let (index, report) = SparseIndex::build(docs.clone(), &tokenizer(&self.stopwords)?)?;
                eprintln!("sparse: {report}");
                (docs, Some(index))
            }
            (None, None) => return Ok(None),
        };
        let pmids: HashSet<String> = docs.iter().map(|d| d.pmid.clone()).collect();
        let questions = match &self.questions {
            Some(_) => Some(self.load_questions(&pmids)?),
            None => None,
        };

        let mut pipeline = Pipeline::new(Arc::new(DocStore::new(docs)));
        if let Some(index) = sparse {
            pipeline = pipeline.with_sparse(Arc::new(index));
        }
        match (&self.dense_index, &self.embedder) {
            (Some(path), Some(spec)) => {
                let index =
                    DenseIndex::<f64>::load(path).with_context(|| format!("loading dense index {}", path.display()))?;
                let emb = embedder(spec, index.dim(), self.timeout, self.batch_size)?;
                pipeline = pipeline.with_dense(Arc::new(index), emb);
            }
            (Some(_), None) => bail!("--dense-index needs --embedder to embed queries"),
            (None, Some(spec)) => {
                let emb = embedder(spec, self.dim, self.timeout, self.batch_size)?;
                let (index, report) = DenseIndex::build(pipeline.documents().as_slice(), emb.as_ref(), self.batch_size)?;
                eprintln!("dense: {report}");
                pipeline = pipeline.with_dense(Arc::new(index), emb);
            }
            (None, None) => {}
        }
        if let Some(r) = self.reranker(questions.as_deref())? {
            pipeline = pipeline.with_reranker(r);
        }
        if let Some(g) = self.generator(questions.as_deref())? {
            pipeline = pipeline.with_generator(g);
        }
        Ok(Some((pipeline, questions)))
    }
}
