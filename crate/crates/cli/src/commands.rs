//! Subcommand implementations.

use std::collections::HashSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use medrag::corpus::{corpus_stats, ingest_jsonl, write_jsonl, TokenizerConfig};
use medrag::dense::DenseIndex;
use medrag::eval::{
    bench_retrieval_latency, run_depth_sweep, run_retriever_comparison, EvalQuestion, Report, RunOptions,
    SPARSE_LATENCY_REFERENCE,
};
use medrag::synthetic::{generate, SyntheticConfig};
use medrag::{Pipeline, RetrievalConfig, SparseIndex, Strategy};

use crate::cli::{BenchCommand, Cli, Command, EvalCommand, EvalOutput, IndexCommand};
use crate::components::{embedder, load_corpus, tokenizer, ComponentArgs, Components};
use crate::config::{parse_list, Config};
use crate::server::{self, AppState, QueryResponse};

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Ingest(args) => {
            let corpus = cfg.pick(args.corpus, "corpus")?.context("--corpus is required")?;
            ingest(&corpus, args.out.as_deref())
        }
        Command::Index(IndexCommand::Sparse(args)) => index_sparse(args.components.resolve(&cfg)?, &args.out),
        Command::Index(IndexCommand::Dense(args)) => index_dense(args.components.resolve(&cfg)?, &args.out),
        Command::Serve(args) => {
            let bind = cfg.pick_or(args.bind, "bind", "127.0.0.1:8080".to_owned())?;
            let static_dir = cfg.pick(args.static_dir, "static_dir")?;
            let timeout = Duration::from_secs(cfg.pick_or(args.request_timeout_secs, "request_timeout_secs", 60)?);
            serve(args.components.resolve(&cfg)?, &bind, static_dir, timeout)
        }
        Command::Query(args) => {
            let config = RetrievalConfig {
                strategy: cfg.pick_or(args.strategy, "strategy", Strategy::Hybrid)?,
                depth: cfg.pick_or(args.depth, "depth", 50)?,
                keep_n: cfg.pick_or(args.keep_n, "keep_n", 10)?,
            };
            query(args.components.resolve(&cfg)?, &args.question, &config)
        }
        Command::Eval(EvalCommand::Retrievers {
            strategies,
            depth,
            keep_n,
            output,
            components,
        }) => {
            let strategies: Vec<Strategy> =
                parse_list(&cfg.pick_or(strategies, "strategies", "bm25,tfidf,dense,hybrid".to_owned())?)?;
            let depth = cfg.pick_or(depth, "depth", 50)?;
            let keep_n = cfg.pick_or(keep_n, "keep_n", 10)?;
            let (pipeline, questions) = eval_inputs(components, &cfg)?;
            let opts = run_options(&output, &cfg)?;
            let report = run_retriever_comparison(&pipeline, &questions, &strategies, depth, keep_n, &opts)?;
            emit(&report, &output, &cfg)
        }
        Command::Eval(EvalCommand::Depths {
            depths,
            keep_n,
            output,
            components,
        }) => {
            let depths: Vec<usize> = parse_list(&cfg.pick_or(depths, "depths", "20,50,100".to_owned())?)?;
            let keep_n = cfg.pick_or(keep_n, "keep_n", 10)?;
            let (pipeline, questions) = eval_inputs(components, &cfg)?;
            let opts = run_options(&output, &cfg)?;
            let report = run_depth_sweep(&pipeline, &questions, &depths, keep_n, &opts)?;
            emit(&report, &output, &cfg)
        }
        Command::Bench(BenchCommand::Latency {
            strategy,
            n,
            k,
            warmup,
            components,
        }) => {
            let strategy = cfg.pick_or(strategy, "strategy", Strategy::Bm25)?;
            let n = cfg.pick_or(n, "n", 100)?;
            let k = cfg.pick_or(k, "k", 10)?;
            let warmup = cfg.pick_or(warmup, "warmup", 10)?;
            bench_latency(components.resolve(&cfg)?, strategy, n, k, warmup)
        }
        Command::Synth(args) => {
            let defaults = SyntheticConfig::default();
            let config = SyntheticConfig {
                n_docs: args.docs.unwrap_or(defaults.n_docs),
                seed: args.seed.unwrap_or(defaults.seed),
                questions_per_class: args.questions_per_class.unwrap_or(defaults.questions_per_class),
                ..defaults
            };
            synth(&config, &args.out_dir)
        }
    }
}

fn ingest(corpus: &Path, out: Option<&Path>) -> Result<()> {
    let ingested = ingest_jsonl(corpus, &TokenizerConfig::default())?;
    for s in &ingested.skipped {
        eprintln!("{}:{}: skipped: {}", corpus.display(), s.line, s.reason);
    }
    let stats = corpus_stats(&ingested.documents);
    println!(
        "{} documents, {} lines skipped, mean length {:.1} tokens",
        stats.doc_count,
        ingested.skipped.len(),
        stats.mean_token_count
    );
    if let Some(out) = out {
        write_jsonl(&ingested.documents, BufWriter::new(File::create(out)?))?;
    }
    Ok(())
}

fn index_sparse(c: Components, out: &Path) -> Result<()> {
    let corpus = c.corpus.as_ref().context("--corpus is required")?;
    let docs = load_corpus(corpus)?;
    let (index, report) = SparseIndex::build(docs, &tokenizer(&c.stopwords)?)?;
    index.save(out)?;
    println!("{report}");
    Ok(())
}

fn index_dense(c: Components, out: &Path) -> Result<()> {
    let corpus = c.corpus.as_ref().context("--corpus is required")?;
    let spec = c.embedder.as_deref().context("--embedder is required")?;
    let docs = load_corpus(corpus)?;
    let emb = embedder(spec, c.dim, c.timeout, c.batch_size)?;
    let (index, report) = DenseIndex::<f64>::build(&docs, emb.as_ref(), c.batch_size)?;
    index.save(out)?;
    println!("{report}");
    Ok(())
}

fn serve(c: Components, bind: &str, static_dir: Option<std::path::PathBuf>, timeout: Duration) -> Result<()> {
    let pipeline = match c.build()? {
        Some((p, _)) => Some(Arc::new(p)),
        None => {
            eprintln!("no corpus or index configured; /query will answer 503");
            None
        }
    };
    let app = server::router(AppState { pipeline, timeout }, static_dir);
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(server::serve(bind, app))
}

fn query(c: Components, question: &str, config: &RetrievalConfig) -> Result<()> {
    let (pipeline, _) = c.build()?.context("--corpus or --sparse-index is required")?;
    let result = pipeline.answer_question(question, config)?;
    let resp = QueryResponse::from_result(result, &pipeline);
    println!("{}", serde_json::to_string_pretty(&resp)?);
    Ok(())
}

fn eval_inputs(args: ComponentArgs, cfg: &Config) -> Result<(Pipeline, Vec<EvalQuestion>)> {
    let c = args.resolve(cfg)?;
    if c.questions.is_none() {
        bail!("--questions is required");
    }
    let (pipeline, questions) = c.build()?.context("--corpus or --sparse-index is required")?;
    let questions = questions.unwrap_or_default();
    if questions.is_empty() {
        bail!("no usable questions after filtering");
    }
    eprintln!("{} questions", questions.len());
    Ok((pipeline, questions))
}

fn run_options(out: &EvalOutput, cfg: &Config) -> Result<RunOptions> {
    Ok(RunOptions {
        concurrency: cfg.pick_or(out.concurrency, "concurrency", 4)?,
        journal: cfg.pick(out.journal.clone(), "journal")?,
        timing: !(out.no_timing || cfg.pick_or(None, "no_timing", false)?),
        warmup: cfg.pick_or(out.warmup, "warmup", 0)?,
    })
}

fn emit(report: &Report, out: &EvalOutput, cfg: &Config) -> Result<()> {
    print!("{}", report.to_text());
    if let Some(dir) = cfg.pick(out.out_dir.clone(), "out_dir")? {
        report.write(&dir).with_context(|| format!("writing report to {}", dir.display()))?;
    }
    Ok(())
}

fn bench_latency(c: Components, strategy: Strategy, n: usize, k: usize, warmup: usize) -> Result<()> {
    if n == 0 {
        bail!("--n must be at least 1");
    }
    let (pipeline, questions) = c.build()?.context("--corpus or --sparse-index is required")?;
    let bodies: Vec<String> = questions
        .context("--questions is required")?
        .into_iter()
        .map(|q| q.body)
        .collect();
    if bodies.is_empty() {
        bail!("no usable questions after filtering");
    }
    let queries: Vec<String> = bodies.iter().cycle().take(n).cloned().collect();
    let stats = bench_retrieval_latency(&pipeline, &queries, strategy, k, warmup)?;
    println!("{} ms ± {} ms", fmt2(stats.mean), fmt2(stats.std));
    eprintln!(
        "{} queries over {} documents, {strategy} top-{k}; published sparse figure on 2.4M documents: {SPARSE_LATENCY_REFERENCE}",
        stats.samples,
        pipeline.documents().len()
    );
    Ok(())
}

fn fmt2(x: f64) -> String {
    format!("{x:.2}")
}

fn synth(config: &SyntheticConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let set = generate(config);
    set.write_corpus(out_dir.join("corpus.jsonl"))?;
    set.write_questions(out_dir.join("questions.json"))?;
    let pmids: HashSet<String> = set.pmids();
    println!(
        "{} documents, {} questions in {}; expected gold-echo accuracy at depth 20/50/100: {}/{}/{}",
        pmids.len(),
        set.questions.len(),
        out_dir.display(),
        set.analytic_accuracy(20),
        set.analytic_accuracy(50),
        set.analytic_accuracy(100)
    );
    Ok(())
}
