//! Experiment grids: retriever comparison, retrieval-depth sweep and the
//! sparse latency benchmark.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{answer_metrics, doc_metrics, latency_stats, AnswerMetrics, LatencyStats};
use super::{EvalError, EvalQuestion};
use crate::generate::{normalize_label, Flag, Label, YesNo};
use crate::pipeline::{Pipeline, PipelineStage, RetrievalConfig, Strategy};
use crate::timing::{ms_since, Timings};

/// Published sparse-query latency on a 2.4M-document corpus, kept as
/// context next to local benchmark output.
pub const SPARSE_LATENCY_REFERENCE: &str = "82 ms ± 37 ms";

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Questions evaluated at once. Use 1 when timings matter.
    pub concurrency: usize,
    /// Per-question JSONL journal; finished questions found there are not
    /// re-run.
    pub journal: Option<PathBuf>,
    /// Include latency columns in the report.
    pub timing: bool,
    /// Questions pushed through retrieval (results discarded) before each
    /// row is measured.
    pub warmup: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            concurrency: 4,
            journal: None,
            timing: true,
            warmup: 0,
        }
    }
}

/// Result of one question in one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub run: String,
    pub qid: String,
    /// `None` when the pipeline has no generator.
    pub label: Option<Label>,
    pub retrieved: Vec<String>,
    pub doc_recall: f64,
    pub doc_precision: f64,
    /// Recall of the first-stage candidate list.
    pub candidate_recall: f64,
    pub timings: Timings,
    #[serde(default)]
    pub flags: Vec<Flag>,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub error_stage: Option<PipelineStage>,
}

impl QuestionOutcome {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Append-only JSONL record of question outcomes. Later lines win, so a
/// retried question replaces its failed record on reload.
#[derive(Debug)]
pub struct Journal {
    file: Mutex<File>,
    done: HashMap<(String, String), QuestionOutcome>,
}

impl Journal {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let io = |e: std::io::Error| EvalError::Journal(format!("{}: {e}", path.display()));
        let mut done = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(path).map_err(io)?).lines() {
                let line = line.map_err(io)?;
                // A torn final line from an aborted run is ignored.
                if let Ok(o) = serde_json::from_str::<QuestionOutcome>(&line) {
                    done.insert((o.run.clone(), o.qid.clone()), o);
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(Self {
            file: Mutex::new(file),
            done,
        })
    }

    /// A successful earlier outcome, if any.
    pub fn completed(&self, run: &str, qid: &str) -> Option<&QuestionOutcome> {
        self.done
            .get(&(run.to_owned(), qid.to_owned()))
            .filter(|o| !o.failed())
    }

    pub fn append(&self, outcome: &QuestionOutcome) -> Result<(), EvalError> {
        let mut line = serde_json::to_string(outcome).map_err(|e| EvalError::Journal(e.to_string()))?;
        line.push('\n');
        let mut f = self.file.lock().expect("journal lock poisoned");
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| EvalError::Journal(e.to_string()))
    }
}

/// Per-stage latency in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub retrieval: LatencyStats<f64>,
    pub rerank: LatencyStats<f64>,
    pub generation: LatencyStats<f64>,
    pub total: LatencyStats<f64>,
}

/// One configuration's aggregate over all questions. Document metrics are
/// macro-averaged over questions; failed questions count as empty
/// retrievals and invalid answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub strategy: Strategy,
    pub depth: usize,
    pub keep_n: usize,
    pub n_questions: usize,
    pub failures: usize,
    pub doc_recall: f64,
    pub doc_precision: f64,
    pub candidate_recall: f64,
    /// Present when the pipeline generates answers.
    pub answers: Option<AnswerMetrics>,
    /// Over successful questions; omitted when timing is off.
    pub latency: Option<LatencyBreakdown>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    RetrieverComparison,
    DepthSweep,
}

/// Published values for the same experiment on the full-scale corpus.
/// Reported next to local rows as targets, never compared against them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub doc_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub doc_precision: Option<f64>,
    /// Seconds, "mean ± std".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retrieval_time_s: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_time_s: Option<String>,
}

impl ReferenceRow {
    fn empty(label: &str) -> Self {
        Self {
            label: label.to_owned(),
            accuracy: None,
            recall: None,
            precision: None,
            f1: None,
            doc_recall: None,
            doc_precision: None,
            retrieval_time_s: None,
            total_time_s: None,
        }
    }

    fn depth(depth: usize, [accuracy, recall, precision, f1]: [f64; 4], retrieval: &str, total: &str) -> Self {
        Self {
            accuracy: Some(accuracy),
            recall: Some(recall),
            precision: Some(precision),
            f1: Some(f1),
            retrieval_time_s: Some(retrieval.to_owned()),
            total_time_s: Some(total.to_owned()),
            ..Self::empty(&depth.to_string())
        }
    }

    fn retriever(label: &str, doc_recall: f64, doc_precision: f64) -> Self {
        Self {
            doc_recall: Some(doc_recall),
            doc_precision: Some(doc_precision),
            ..Self::empty(label)
        }
    }

    /// BM25 depth sweep with top-10 reranking on 24M abstracts. The
    /// published retrieval time includes reranking.
    pub fn depth_sweep() -> Vec<Self> {
        vec![
            Self::depth(20, [0.89, 0.88, 0.89, 0.88], "0.39 ± 0.07", "1.52 ± 0.42"),
            Self::depth(50, [0.90, 0.90, 0.89, 0.90], "0.82 ± 0.13", "1.91 ± 0.36"),
            Self::depth(100, [0.87, 0.87, 0.88, 0.87], "1.54 ± 0.16", "2.62 ± 0.44"),
        ]
    }

    /// Document-level retriever comparison on 2.4M abstracts. The two dense
    /// rows are specific biomedical encoders, not the mock embedder.
    pub fn retriever_comparison() -> Vec<Self> {
        vec![
            Self::retriever("hybrid", 0.567, 0.319),
            Self::retriever("bm25", 0.537, 0.322),
            Self::retriever("dense (MedCPT)", 0.273, 0.205),
            Self::retriever("dense (BioBERT)", 0.07, 0.07),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: Experiment,
    pub timing: bool,
    pub rows: Vec<MetricsReport>,
    pub reference: Vec<ReferenceRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.4}"))
}

fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(&mut header.iter().copied());
    for row in rows {
        line(&mut row.iter().map(String::as_str));
    }
    out
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("JSON serialization");
        s.push('\n');
        s
    }

    /// Aligned text table: one row per configuration, then the reference
    /// rows.
    pub fn to_text(&self) -> String {
        let first = match self.experiment {
            Experiment::DepthSweep => "Docs",
            Experiment::RetrieverComparison => "Retriever",
        };
        let mut header = vec![
            first,
            "Accuracy",
            "Recall",
            "Precision",
            "F1 Score",
            "Doc Recall",
            "Doc Precision",
            "Cand. Recall",
        ];
        if self.timing {
            header.extend(["Retrieval (ms)", "Rerank (ms)", "Generation (ms)", "Total (ms)"]);
        }
        header.push("Failures");
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let a = r.answers;
                let mut row = vec![
                    r.label.clone(),
                    fmt_opt(a.map(|a| a.accuracy)),
                    fmt_opt(a.map(|a| a.recall)),
                    fmt_opt(a.map(|a| a.precision)),
                    fmt_opt(a.map(|a| a.f1)),
                    format!("{:.4}", r.doc_recall),
                    format!("{:.4}", r.doc_precision),
                    format!("{:.4}", r.candidate_recall),
                ];
                if self.timing {
                    match &r.latency {
                        Some(l) => row.extend([l.retrieval, l.rerank, l.generation, l.total].map(|s| format!("{s:.2}"))),
                        None => row.extend(std::iter::repeat_n("-".to_owned(), 4)),
                    }
                }
                row.push(format!("{}/{}", r.failures, r.n_questions));
                row
            })
            .collect();

        let mut out = String::new();
        let title = match self.experiment {
            Experiment::DepthSweep => "retrieval depth sweep",
            Experiment::RetrieverComparison => "retriever comparison",
        };
        let _ = writeln!(out, "{title}");
        out.push_str(&render_table(&header, &rows));
        if !self.reference.is_empty() {
            out.push_str("\nreference values (published, full-scale corpus; not comparable at this scale)\n");
            let ref_header = [
                first,
                "Accuracy",
                "Recall",
                "Precision",
                "F1 Score",
                "Doc Recall",
                "Doc Precision",
                "Retrieval (s)",
                "Total (s)",
            ];
            let ref_rows: Vec<Vec<String>> = self
                .reference
                .iter()
                .map(|r| {
                    let t = |v: &Option<String>| v.clone().unwrap_or_else(|| "-".to_owned());
                    vec![
                        r.label.clone(),
                        fmt_opt(r.accuracy),
                        fmt_opt(r.recall),
                        fmt_opt(r.precision),
                        fmt_opt(r.f1),
                        fmt_opt(r.doc_recall),
                        fmt_opt(r.doc_precision),
                        t(&r.retrieval_time_s),
                        t(&r.total_time_s),
                    ]
                })
                .collect();
            out.push_str(&render_table(&ref_header, &ref_rows));
        }
        out
    }

    /// Writes `report.json` and `report.txt` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> std::io::Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        std::fs::write(dir.join("report.txt"), self.to_text())
    }
}

fn run_key(config: &RetrievalConfig) -> String {
    format!("{}/depth={}/keep_n={}", config.strategy, config.depth, config.keep_n)
}

fn evaluate(pipeline: &Pipeline, q: &EvalQuestion, config: &RetrievalConfig, run: &str) -> QuestionOutcome {
    let mut outcome = QuestionOutcome {
        run: run.to_owned(),
        qid: q.qid.clone(),
        label: None,
        retrieved: Vec::new(),
        doc_recall: 0.0,
        doc_precision: 0.0,
        candidate_recall: 0.0,
        timings: Timings::default(),
        flags: Vec::new(),
        error: None,
        error_stage: None,
    };
    let result = if pipeline.has_generator() {
        pipeline.answer(&q.body, config).map(|a| {
            outcome.label = Some(normalize_label(&a.result.response));
            outcome.flags = a.result.flags.into_iter().collect();
            (a.result.documents, a.candidates, a.result.timings)
        })
    } else {
        let start = Instant::now();
        pipeline.retrieve(&q.body, config).map(|r| {
            let mut t = r.timings;
            t.total_ms = ms_since(start).max(t.stage_sum());
            (r.documents, r.candidates, t)
        })
    };
    match result {
        Ok((documents, candidates, timings)) => {
            outcome.retrieved = documents.into_iter().map(|d| d.pmid).collect();
            // Gold sets are checked non-empty before any question runs.
            let m = doc_metrics(&outcome.retrieved, &q.gold_pmids).expect("non-empty gold");
            let cands: Vec<&str> = candidates.iter().map(|d| d.pmid.as_str()).collect();
            outcome.doc_recall = m.recall;
            outcome.doc_precision = m.precision;
            outcome.candidate_recall = doc_metrics(&cands, &q.gold_pmids).expect("non-empty gold").recall;
            outcome.timings = timings;
        }
        Err(e) => {
            if pipeline.has_generator() {
                outcome.label = Some(Label::Invalid);
            }
            outcome.error_stage = e.stage();
            outcome.error = Some(e.to_string());
        }
    }
    outcome
}

fn run_row(
    pipeline: &Pipeline,
    questions: &[EvalQuestion],
    config: RetrievalConfig,
    label: String,
    opts: &RunOptions,
    journal: Option<&Journal>,
) -> Result<MetricsReport, EvalError> {
    config.validate().map_err(|e| EvalError::Config(e.to_string()))?;
    pipeline
        .supports(config.strategy)
        .map_err(|e| EvalError::Config(format!("{}: {e}", config.strategy)))?;
    let run = run_key(&config);
    for q in questions.iter().take(opts.warmup) {
        let _ = pipeline.retrieve(&q.body, &config);
    }

    let slots: Mutex<Vec<Option<QuestionOutcome>>> = Mutex::new(vec![None; questions.len()]);
    let next = AtomicUsize::new(0);
    let journal_error: Mutex<Option<EvalError>> = Mutex::new(None);
    let workers = opts.concurrency.clamp(1, questions.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(q) = questions.get(i) else { break };
                let outcome = match journal.and_then(|j| j.completed(&run, &q.qid)) {
                    Some(prev) => prev.clone(),
                    None => {
                        let o = evaluate(pipeline, q, &config, &run);
                        if let Some(j) = journal {
                            if let Err(e) = j.append(&o) {
                                journal_error.lock().unwrap().get_or_insert(e);
                            }
                        }
                        o
                    }
                };
                slots.lock().unwrap()[i] = Some(outcome);
            });
        }
    });
    if let Some(e) = journal_error.into_inner().unwrap() {
        return Err(e);
    }
    let outcomes: Vec<QuestionOutcome> = slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|o| o.expect("every question evaluated"))
        .collect();
    aggregate(questions, &outcomes, config, label, opts.timing)
}

/// Single-threaded reduction of per-question outcomes into one row.
fn aggregate(
    questions: &[EvalQuestion],
    outcomes: &[QuestionOutcome],
    config: RetrievalConfig,
    label: String,
    timing: bool,
) -> Result<MetricsReport, EvalError> {
    let n = outcomes.len();
    if n == 0 {
        return Err(EvalError::NoQuestions);
    }
    let mean = |f: fn(&QuestionOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n as f64;

    let mut gold: Vec<(String, YesNo)> = Vec::new();
    let mut predicted: Vec<(String, Label)> = Vec::new();
    for (q, o) in questions.iter().zip(outcomes) {
        if let (Some(g), Some(l)) = (q.gold_answer, o.label) {
            gold.push((q.qid.clone(), g));
            predicted.push((q.qid.clone(), l));
        }
    }
    let answers = if gold.is_empty() {
        None
    } else {
        Some(answer_metrics(&predicted, &gold)?)
    };

    let ok: Vec<&Timings> = outcomes.iter().filter(|o| !o.failed()).map(|o| &o.timings).collect();
    let latency = if timing && !ok.is_empty() {
        let stats = |f: fn(&Timings) -> f64| latency_stats(&ok.iter().map(|t| f(t)).collect::<Vec<_>>());
        Some(LatencyBreakdown {
            retrieval: stats(|t| t.retrieval_ms)?,
            rerank: stats(|t| t.rerank_ms)?,
            generation: stats(|t| t.generation_ms)?,
            total: stats(|t| t.total_ms)?,
        })
    } else {
        None
    };

    Ok(MetricsReport {
        label,
        strategy: config.strategy,
        depth: config.depth,
        keep_n: config.keep_n,
        n_questions: n,
        failures: outcomes.iter().filter(|o| o.failed()).count(),
        doc_recall: mean(|o| o.doc_recall),
        doc_precision: mean(|o| o.doc_precision),
        candidate_recall: mean(|o| o.candidate_recall),
        answers,
        latency,
    })
}

fn check_questions(questions: &[EvalQuestion]) -> Result<(), EvalError> {
    if questions.is_empty() {
        return Err(EvalError::NoQuestions);
    }
    match questions.iter().find(|q| q.gold_pmids.is_empty()) {
        Some(q) => Err(EvalError::InvalidQuestion {
            qid: q.qid.clone(),
            message: "empty gold set".into(),
        }),
        None => Ok(()),
    }
}

fn open_journal(opts: &RunOptions) -> Result<Option<Journal>, EvalError> {
    opts.journal.as_ref().map(Journal::open).transpose()
}

/// Hybrid retrieval at each first-stage depth, reranked down to `keep_n`.
pub fn run_depth_sweep(
    pipeline: &Pipeline,
    questions: &[EvalQuestion],
    depths: &[usize],
    keep_n: usize,
    opts: &RunOptions,
) -> Result<Report, EvalError> {
    check_questions(questions)?;
    if depths.is_empty() {
        return Err(EvalError::Config("no depths given".into()));
    }
    let journal = open_journal(opts)?;
    let rows = depths
        .iter()
        .map(|&depth| {
            let config = RetrievalConfig {
                strategy: Strategy::Hybrid,
                depth,
                keep_n,
            };
            run_row(pipeline, questions, config, depth.to_string(), opts, journal.as_ref())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Report {
        experiment: Experiment::DepthSweep,
        timing: opts.timing,
        rows,
        reference: ReferenceRow::depth_sweep(),
    })
}

/// One row per strategy. Single-stage strategies return `keep_n`
/// documents; hybrid reranks the top `depth`.
pub fn run_retriever_comparison(
    pipeline: &Pipeline,
    questions: &[EvalQuestion],
    strategies: &[Strategy],
    depth: usize,
    keep_n: usize,
    opts: &RunOptions,
) -> Result<Report, EvalError> {
    check_questions(questions)?;
    if strategies.is_empty() {
        return Err(EvalError::Config("no strategies given".into()));
    }
    let journal = open_journal(opts)?;
    let rows = strategies
        .iter()
        .map(|&strategy| {
            let config = RetrievalConfig {
                strategy,
                depth: if strategy == Strategy::Hybrid { depth } else { keep_n },
                keep_n,
            };
            run_row(pipeline, questions, config, strategy.to_string(), opts, journal.as_ref())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Report {
        experiment: Experiment::RetrieverComparison,
        timing: opts.timing,
        rows,
        reference: ReferenceRow::retriever_comparison(),
    })
}

/// First-stage latency of `strategy` over `queries`, one query at a time,
/// after `warmup` unmeasured queries.
pub fn bench_retrieval_latency(
    pipeline: &Pipeline,
    queries: &[String],
    strategy: Strategy,
    k: usize,
    warmup: usize,
) -> Result<LatencyStats<f64>, EvalError> {
    let config = RetrievalConfig {
        strategy,
        depth: k,
        keep_n: k,
    };
    config.validate().map_err(|e| EvalError::Config(e.to_string()))?;
    let run = |q: &String| {
        pipeline
            .retrieve(q, &config)
            .map_err(|e| EvalError::Config(format!("query {q:?}: {e}")))
    };
    for q in queries.iter().take(warmup) {
        run(q)?;
    }
    let samples = queries
        .iter()
        .map(|q| run(q).map(|r| r.timings.retrieval_ms))
        .collect::<Result<Vec<_>, _>>()?;
    latency_stats(&samples)
}
