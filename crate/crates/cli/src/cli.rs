//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use medrag::Strategy;

use crate::components::ComponentArgs;

#[derive(Debug, Parser)]
#[command(name = "medrag", version, about = "Retrieval-augmented biomedical question answering")]
pub struct Cli {
    /// `key = value` configuration file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus file and print its statistics.
    Ingest(IngestArgs),
    /// Build and save an index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Answer one question and print the response JSON.
    Query(QueryArgs),
    /// Run an evaluation grid.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Measure retrieval latency.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Write a synthetic corpus and question set.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Write the valid, deduplicated records here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    Sparse(IndexArgs),
    Dense(IndexArgs),
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub components: ComponentArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address.
    #[arg(long)]
    pub bind: Option<String>,
    /// Directory served for paths other than the API routes.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Per-request timeout in seconds.
    #[arg(long)]
    pub request_timeout_secs: Option<u64>,
    #[command(flatten)]
    pub components: ComponentArgs,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub question: String,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub keep_n: Option<usize>,
    #[command(flatten)]
    pub components: ComponentArgs,
}

#[derive(Debug, Args)]
pub struct EvalOutput {
    /// Directory for report.json and report.txt.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Per-question journal; an interrupted run resumes from it.
    #[arg(long)]
    pub journal: Option<PathBuf>,
    /// Leave latency out of the report so reruns are byte-identical.
    #[arg(long)]
    pub no_timing: bool,
    /// Questions evaluated concurrently.
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Unmeasured warm-up questions before each row.
    #[arg(long)]
    pub warmup: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Compare retrieval strategies (document and answer metrics).
    Retrievers {
        /// Comma-separated: bm25, tfidf, dense, hybrid.
        #[arg(long)]
        strategies: Option<String>,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        keep_n: Option<usize>,
        #[command(flatten)]
        output: EvalOutput,
        #[command(flatten)]
        components: ComponentArgs,
    },
    /// Sweep the first-stage depth of hybrid retrieval.
    Depths {
        /// Comma-separated depths.
        #[arg(long)]
        depths: Option<String>,
        #[arg(long)]
        keep_n: Option<usize>,
        #[command(flatten)]
        output: EvalOutput,
        #[command(flatten)]
        components: ComponentArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// First-stage latency over the question bodies, cycled to --n queries.
    Latency {
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        n: Option<usize>,
        /// Documents retrieved per query.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[command(flatten)]
        components: ComponentArgs,
    },
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub docs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub questions_per_class: Option<usize>,
}
