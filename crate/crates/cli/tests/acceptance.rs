//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `cargo test -p medrag-cli --test acceptance`

use std::collections::{HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use medrag::corpus::{ingest_jsonl, DocStore, Document, TokenizerConfig};
use medrag::dense::Embedding;
use medrag::eval::{
    answer_metrics, doc_metrics, gold_answers, gold_sets, load_eval, run_depth_sweep, run_retriever_comparison,
    ReferenceRow, Report, RunOptions,
};
use medrag::generate::{build_prompt, Label, StubGenerator, StubPolicy, YesNo};
use medrag::rerank::{OracleReranker, OverlapReranker, Reranker};
use medrag::synthetic::{generate, SyntheticConfig, SyntheticSet};
use medrag::{FlatIndex, Pipeline, RetrievalConfig, ScoredDoc, SparseIndex, Stage, Strategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let checks: [Criterion; 8] = [
        ("bm25 oracle equivalence", bm25_oracle),
        ("dense exactness", dense_exactness),
        ("hybrid subset/filter", hybrid_subset_filter),
        ("depth-sweep behavior", depth_sweep),
        ("metric oracle fixtures", metric_fixtures),
        ("prompt golden files", prompt_goldens),
        ("end-to-end hermetic run", end_to_end),
        ("latency bench", latency_bench),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{secs:.1} s]");
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn core_tests_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests")
}

fn distinct_pmids(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut seen = HashSet::with_capacity(n);
    while seen.len() < n {
        seen.insert(rng.random_range(1..=50_000_000u64));
    }
    let mut v: Vec<u64> = seen.into_iter().collect();
    v.sort_unstable();
    // Shuffle so insertion order says nothing about PMID order.
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
    v.into_iter().map(|p| p.to_string()).collect()
}

fn by_score_then_pmid(a: &(String, f64), b: &(String, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1)
        .then_with(|| a.0.parse::<u64>().unwrap().cmp(&b.0.parse::<u64>().unwrap()))
}

/// Straight-line Okapi BM25 over pre-split documents.
fn bm25_oracle_rank(docs: &[(String, Vec<String>)], df: &HashMap<&str, usize>, query: &[String]) -> Vec<(String, f64)> {
    let (k1, b) = (1.2f64, 0.75f64);
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|(_, t)| t.len()).sum::<usize>() as f64 / n;
    let mut terms: Vec<&String> = Vec::new();
    for t in query {
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    let mut out = Vec::new();
    for (pmid, tokens) in docs {
        let dl = tokens.len() as f64;
        let mut score = 0.0;
        let mut matched = false;
        for t in &terms {
            let tf = tokens.iter().filter(|x| x == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            matched = true;
            let df = df[t.as_str()] as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
        }
        if matched {
            out.push((pmid.clone(), score));
        }
    }
    out.sort_by(by_score_then_pmid);
    out
}

fn bm25_oracle() -> Outcome {
    let start = Instant::now();
    let mut search_time = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut max_diff = 0.0f64;
    let mut compared = 0usize;
    for corpus in 0..25 {
        let n_docs = rng.random_range(1..=1000);
        let vocab = rng.random_range(1..=50);
        let pmids = distinct_pmids(&mut rng, n_docs);
        let docs: Vec<(String, Vec<String>)> = pmids
            .into_iter()
            .map(|p| {
                let len = rng.random_range(0..=60);
                (p, (0..len).map(|_| format!("t{}", rng.random_range(0..vocab))).collect())
            })
            .collect();
        let timer = Instant::now();
        let (index, _) = SparseIndex::build(
            docs.iter().map(|(p, t)| Document::new(p.clone(), "", t.join(" "))).collect(),
            &TokenizerConfig::default(),
        )
        .map_err(|e| e.to_string())?;
        search_time += timer.elapsed().as_secs_f64();
        let mut df: HashMap<&str, usize> = HashMap::new();
        for (_, tokens) in &docs {
            let unique: HashSet<&String> = tokens.iter().collect();
            for t in unique {
                *df.entry(t.as_str()).or_default() += 1;
            }
        }
        for q in 0..100 {
            // A few terms outside the vocabulary exercise unmatched terms.
            let qlen = rng.random_range(1..=6);
            let query: Vec<String> = (0..qlen).map(|_| format!("t{}", rng.random_range(0..vocab + 3))).collect();
            let timer = Instant::now();
            let got = index.bm25_search(&query.join(" "), n_docs).map_err(|e| e.to_string())?;
            search_time += timer.elapsed().as_secs_f64();
            let want = bm25_oracle_rank(&docs, &df, &query);
            ensure!(
                got.len() == want.len(),
                "corpus {corpus} query {q}: {} results, oracle {}",
                got.len(),
                want.len()
            );
            for (g, (pmid, score)) in got.iter().zip(&want) {
                ensure!(&g.pmid == pmid, "corpus {corpus} query {q}: order differs at rank {}", g.rank);
                let diff = (g.score - score).abs();
                max_diff = max_diff.max(diff);
                ensure!(diff <= 1e-9, "corpus {corpus} query {q}: score differs by {diff:e}");
            }
            compared += 1;
        }
    }
    let total = start.elapsed().as_secs_f64();
    ensure!(search_time < 10.0, "index build and search took {search_time:.1} s, limit 10 s");
    Ok(format!(
        "{compared} queries over 25 corpora, max |diff| {max_diff:.1e} (tol 1e-9); build+search {search_time:.2} s < 10 s \
         ({total:.1} s including oracle)"
    ))
}

fn dense_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut self_checks = 0usize;
    for inst in 0..100 {
        let (n, d) = if inst == 0 {
            (10_000, 64)
        } else {
            let n = 10f64.powf(4.0 * rng.random::<f64>()).round() as usize;
            (n.clamp(1, 10_000), rng.random_range(1..=64))
        };
        let ids = distinct_pmids(&mut rng, n);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let index = FlatIndex::from_rows(
            d,
            ids.iter()
                .cloned()
                .zip(rows.iter().map(|r| Embedding::new(r.clone()).unwrap()))
                .collect(),
        )
        .map_err(|e| e.to_string())?;
        for _ in 0..3 {
            let q: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
            let k = rng.random_range(1..=n);
            let got = index.l2_search(&Embedding::new(q.clone()).unwrap(), k).map_err(|e| e.to_string())?;
            let mut all: Vec<(String, f64)> = ids
                .iter()
                .zip(&rows)
                .map(|(id, r)| (id.clone(), -r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()))
                .collect();
            all.sort_by(by_score_then_pmid);
            ensure!(got.len() == k, "instance {inst}: {} results for k={k}", got.len());
            for (g, (id, s)) in got.iter().zip(&all) {
                ensure!(&g.pmid == id, "instance {inst}: order differs at rank {}", g.rank);
                ensure!((g.score - s).abs() <= 1e-12, "instance {inst}: score {} vs {s}", g.score);
            }
        }
        for (id, r) in ids.iter().zip(&rows) {
            let hit = index.l2_search(&Embedding::new(r.clone()).unwrap(), 1).map_err(|e| e.to_string())?;
            ensure!(
                hit[0].pmid == *id && hit[0].score == 0.0,
                "instance {inst}: {id} did not retrieve itself at distance 0"
            );
            self_checks += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1} s, limit 30 s");
    Ok(format!("100 instances (N<=1e4, d<=64), {self_checks} self-retrievals at distance 0, {secs:.2} s < 30 s"))
}

fn synthetic_pipeline(set: &SyntheticSet, reranker: Arc<dyn Reranker>) -> Pipeline {
    let (index, _) = SparseIndex::build(set.documents.clone(), &TokenizerConfig::english()).unwrap();
    Pipeline::new(Arc::new(DocStore::new(set.documents.clone())))
        .with_sparse(Arc::new(index))
        .with_reranker(reranker)
        .with_generator(Arc::new(StubGenerator::new(StubPolicy::GoldEcho(gold_answers(&set.questions)))))
}

fn hybrid_subset_filter() -> Outcome {
    let set = generate(&SyntheticConfig::default());
    ensure!(set.documents.len() == 10_000, "corpus has {} documents", set.documents.len());
    let p = synthetic_pipeline(&set, Arc::new(OracleReranker::new(gold_sets(&set.questions))));
    let index = p.sparse().unwrap();
    let mut lists = 0;
    for q in &set.questions {
        for depth in [10, 20, 50, 100] {
            let cfg = RetrievalConfig {
                strategy: Strategy::Hybrid,
                depth,
                keep_n: 10,
            };
            let r = p.retrieve(&q.body, &cfg).map_err(|e| e.to_string())?;
            let top: Vec<String> = index.bm25_search(&q.body, depth).unwrap().into_iter().map(|d| d.pmid).collect();
            let top_set: HashSet<&String> = top.iter().collect();
            ensure!(r.documents.len() <= 10, "{}: {} kept", q.qid, r.documents.len());
            for d in &r.documents {
                ensure!(top_set.contains(&d.pmid), "{}@{depth}: {} not in BM25 top-{depth}", q.qid, d.pmid);
                ensure!(d.score > 0.0, "{}@{depth}: kept score {}", q.qid, d.score);
                ensure!(d.stage == Stage::Rerank, "{}: stage {:?}", q.qid, d.stage);
            }
            lists += 1;
        }
    }
    let quiet = RunOptions {
        timing: false,
        ..RunOptions::default()
    };
    let report = run_retriever_comparison(&p, &set.questions, &[Strategy::Bm25, Strategy::Hybrid], 50, 10, &quiet)
        .map_err(|e| e.to_string())?;
    let (bm25, hybrid) = (report.rows[0].doc_recall, report.rows[1].doc_recall);
    ensure!(hybrid >= bm25, "hybrid doc recall {hybrid} < bm25@10 {bm25}");
    Ok(format!(
        "{lists} hybrid lists are subsets of BM25 top-k with scores > 0; doc recall hybrid {hybrid:.3} >= bm25@10 {bm25:.3}"
    ))
}

fn depth_sweep() -> Outcome {
    // Large enough that scoring, not the depth-dependent sort, dominates
    // first-stage time.
    let set = generate(&SyntheticConfig {
        n_docs: 30_000,
        ..SyntheticConfig::default()
    });
    let p = synthetic_pipeline(&set, Arc::new(OverlapReranker::default()));
    let opts = RunOptions {
        concurrency: 1,
        timing: true,
        warmup: 10,
        journal: None,
    };
    let report = run_depth_sweep(&p, &set.questions, &[20, 50, 100], 10, &opts).map_err(|e| e.to_string())?;
    ensure!(report.rows.len() == 3, "{} rows", report.rows.len());
    let lat: Vec<_> = report.rows.iter().map(|r| r.latency.unwrap()).collect();
    let rerank: Vec<f64> = lat.iter().map(|l| l.rerank.mean).collect();
    ensure!(
        rerank.windows(2).all(|w| w[0] <= w[1]),
        "(a) mean rerank ms not non-decreasing: {rerank:?}"
    );
    let retr: Vec<f64> = lat.iter().map(|l| l.retrieval.mean).collect();
    let spread = retr.iter().cloned().fold(f64::MIN, f64::max) - retr.iter().cloned().fold(f64::MAX, f64::min);
    let std = lat.iter().map(|l| l.retrieval.std).sum::<f64>() / lat.len() as f64;
    ensure!(spread < std, "(b) first-stage mean spread {spread:.4} ms >= std {std:.4} ms ({retr:?})");
    let cover: Vec<f64> = report.rows.iter().map(|r| r.candidate_recall).collect();
    ensure!(
        cover.windows(2).all(|w| w[0] <= w[1]),
        "(c) gold coverage not non-decreasing: {cover:?}"
    );
    let acc: Vec<f64> = report.rows.iter().map(|r| r.answers.unwrap().accuracy).collect();
    ensure!(acc.windows(2).all(|w| w[0] <= w[1]), "accuracy not non-decreasing: {acc:?}");
    let reference = report.reference.iter().find(|r| r.label == "50");
    ensure!(
        reference == ReferenceRow::depth_sweep().iter().find(|r| r.label == "50")
            && reference.and_then(|r| r.accuracy) == Some(0.90)
            && reference.and_then(|r| r.total_time_s.as_deref()) == Some("1.91 ± 0.36"),
        "reference row for depth 50 missing"
    );
    let text = report.to_text();
    ensure!(
        text.contains("Accuracy") && text.contains("F1 Score") && text.contains("Rerank (ms)"),
        "text table lacks the expected columns"
    );
    Ok(format!(
        "rerank ms {} (non-decreasing); first-stage spread {spread:.4} ms < std {std:.4} ms; coverage {cover:?}",
        rerank.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" / ")
    ))
}

/// Macro metrics from explicit confusion counts.
fn metric_oracle(gold: &[&str], pred: &[&str]) -> [f64; 4] {
    let mut p = 0.0;
    let mut r = 0.0;
    let mut f = 0.0;
    for class in ["yes", "no"] {
        let tp = gold.iter().zip(pred).filter(|(g, q)| **g == class && **q == class).count() as f64;
        let predicted = pred.iter().filter(|q| **q == class).count() as f64;
        let actual = gold.iter().filter(|g| **g == class).count() as f64;
        let pc = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let rc = if actual > 0.0 { tp / actual } else { 0.0 };
        p += pc / 2.0;
        r += rc / 2.0;
        f += if pc + rc > 0.0 { pc * rc / (pc + rc) } else { 0.0 };
    }
    let acc = gold.iter().zip(pred).filter(|(g, q)| g == q).count() as f64 / gold.len() as f64;
    [acc, r, p, f]
}

fn label_of(s: &str) -> Label {
    match s {
        "yes" => Label::Yes,
        "no" => Label::No,
        _ => Label::Invalid,
    }
}

fn metric_fixtures() -> Outcome {
    let dir = core_tests_dir().join("fixtures");
    let corpus = ingest_jsonl(dir.join("corpus.jsonl"), &TokenizerConfig::default()).map_err(|e| e.to_string())?;
    let pmids: HashSet<String> = corpus.documents.iter().map(|d| d.pmid.clone()).collect();
    let questions = load_eval(dir.join("questions.json"), &pmids, false).map_err(|e| e.to_string())?;
    let kept: Vec<&str> = questions.iter().map(|q| q.qid.as_str()).collect();
    ensure!(
        kept == ["q01", "q02", "q04", "q06", "q08", "q09", "q10"],
        "filtering kept {kept:?}"
    );

    let gold: HashSet<String> = ["1", "2", "3", "4"].map(String::from).into();
    let m = doc_metrics(&["2", "3", "5"], &gold).map_err(|e| e.to_string())?;
    ensure!(m.recall == 0.5 && m.precision == 2.0 / 3.0, "worked example gave {m:?}");

    let preds: HashMap<String, serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("predictions.json")).unwrap()).unwrap();
    let retrieved = |qid: &str| -> Vec<String> {
        preds[qid]["retrieved"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_owned()).collect()
    };
    let mut recall = 0.0;
    let mut precision = 0.0;
    for q in &questions {
        let m = doc_metrics(&retrieved(&q.qid), &q.gold_pmids).map_err(|e| e.to_string())?;
        recall += m.recall / questions.len() as f64;
        precision += m.precision / questions.len() as f64;
    }
    ensure!(
        (recall - 13.0 / 21.0).abs() < 1e-12 && (precision - 53.0 / 84.0).abs() < 1e-12,
        "fixture doc metrics {recall} / {precision}"
    );

    let g: Vec<&str> = questions.iter().map(|q| q.gold_answer.unwrap().as_str()).collect();
    let p: Vec<&str> = questions.iter().map(|q| preds[&q.qid]["label"].as_str().unwrap()).collect();
    let am = answer_metrics(
        &questions.iter().zip(&p).map(|(q, l)| (q.qid.clone(), label_of(l))).collect::<Vec<_>>(),
        &questions.iter().map(|q| (q.qid.clone(), q.gold_answer.unwrap())).collect::<Vec<_>>(),
    )
    .map_err(|e| e.to_string())?;
    let want = metric_oracle(&g, &p);
    let got = [am.accuracy, am.recall, am.precision, am.f1];
    ensure!(
        got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12),
        "fixture answer metrics {got:?} vs oracle {want:?}"
    );
    ensure!(
        (am.f1 - 13.0 / 21.0).abs() < 1e-12 && (am.accuracy - 4.0 / 7.0).abs() < 1e-12,
        "fixture answer metrics {got:?}"
    );

    let case_gold = ["yes", "yes", "no", "no"];
    let case_pred = ["yes", "no", "no", "no"];
    let ids = ["a", "b", "c", "d"].map(String::from);
    let cm = answer_metrics(
        &ids.iter().cloned().zip(case_pred.map(label_of)).collect::<Vec<_>>(),
        &ids.iter()
            .cloned()
            .zip(case_gold.map(|g| if g == "yes" { YesNo::Yes } else { YesNo::No }))
            .collect::<Vec<_>>(),
    )
    .map_err(|e| e.to_string())?;
    let want = metric_oracle(&case_gold, &case_pred);
    let got = [cm.accuracy, cm.recall, cm.precision, cm.f1];
    ensure!(got == want, "four-question case {got:?} vs oracle {want:?}");
    ensure!(
        cm.accuracy == 0.75 && cm.recall == 0.75 && (cm.precision - 0.8333).abs() < 5e-5 && (cm.f1 - 0.7333).abs() < 5e-5,
        "four-question case {got:?}"
    );
    Ok(format!(
        "7 of 10 fixture questions kept; recall 0.5 / precision 2/3 worked example; four-question case acc 0.75, \
         macro R 0.75, P {:.4}, F1 {:.4} (= 11/15 by confusion-matrix oracle)",
        cm.precision, cm.f1
    ))
}

fn prompt_goldens() -> Outcome {
    let dir = core_tests_dir().join("golden");
    let fx: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("prompt_docs.json")).unwrap()).unwrap();
    let question = fx["question"].as_str().unwrap();
    let docs: Vec<(ScoredDoc, Document)> = fx["documents"]
        .as_array()
        .unwrap()
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let pmid = d["PMID"].as_str().unwrap();
            (
                ScoredDoc {
                    pmid: pmid.to_owned(),
                    score: d["score"].as_f64().unwrap(),
                    rank: i + 1,
                    stage: Stage::Rerank,
                },
                Document::new(pmid, d["title"].as_str().unwrap(), d["content"].as_str().unwrap()),
            )
        })
        .collect();
    for n in [0, 2, 10] {
        let pairs: Vec<(ScoredDoc, &Document)> = docs[..n].iter().map(|(s, d)| (s.clone(), d)).collect();
        let got = build_prompt(question, &pairs).render();
        let want = std::fs::read_to_string(dir.join(format!("prompt_{n}docs.txt"))).unwrap();
        ensure!(got == want, "{n}-document prompt differs from golden file");
    }
    Ok("0-, 2- and 10-document prompts byte-identical to golden files".into())
}

fn medrag(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_medrag"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`medrag {}` exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let data = root.join("data");
    medrag(&["synth", "--out-dir", &s(&data), "--docs", "10000"])?;
    let set = generate(&SyntheticConfig::default());
    let (corpus, questions) = (s(&data.join("corpus.jsonl")), s(&data.join("questions.json")));
    let stub = [
        "--corpus",
        &corpus,
        "--questions",
        &questions,
        "--reranker",
        "overlap",
        "--generator",
        "stub:gold_echo",
        "--embedder",
        "mock",
        "--no-timing",
    ];
    let mut reports: Vec<Report> = Vec::new();
    for (cmd, extra) in [
        ("retrievers", ["--strategies", "bm25,tfidf,dense,hybrid", "--depth", "50", "--keep-n", "10"]),
        ("depths", ["--depths", "20,50,100", "--keep-n", "10", "--concurrency", "3"]),
    ] {
        let mut files = Vec::new();
        for run in ["a", "b"] {
            let out = root.join(format!("{cmd}-{run}"));
            let mut args = vec!["eval", cmd];
            args.extend(extra);
            args.extend(stub);
            let out_s = s(&out);
            args.extend(["--out-dir", &out_s]);
            medrag(&args)?;
            let json = std::fs::read(out.join("report.json")).map_err(|e| e.to_string())?;
            let txt = std::fs::read(out.join("report.txt")).map_err(|e| e.to_string())?;
            files.push((json, txt));
        }
        ensure!(files[0] == files[1], "eval {cmd}: reports differ between identical runs");
        reports.push(serde_json::from_slice(&files[0].0).map_err(|e| e.to_string())?);
    }
    let acc = |r: &Report, label: &str| r.rows.iter().find(|x| x.label == label).and_then(|x| x.answers).map(|a| a.accuracy);
    let expected = [
        (&reports[0], "bm25", set.analytic_accuracy(10)),
        (&reports[0], "hybrid", set.analytic_accuracy(50)),
        (&reports[1], "20", set.analytic_accuracy(20)),
        (&reports[1], "50", set.analytic_accuracy(50)),
        (&reports[1], "100", set.analytic_accuracy(100)),
    ];
    for (report, label, want) in expected {
        ensure!(acc(report, label) == Some(want), "{label}: accuracy {:?}, analytic {want}", acc(report, label));
    }
    Ok(format!(
        "eval retrievers + eval depths exit 0 with byte-identical reruns; accuracy bm25 {} / hybrid@50 {} / depths {} {} {} equals construction",
        set.analytic_accuracy(10),
        set.analytic_accuracy(50),
        set.analytic_accuracy(20),
        set.analytic_accuracy(50),
        set.analytic_accuracy(100)
    ))
}

fn latency_bench() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let set = generate(&SyntheticConfig {
        n_docs: 100_000,
        ..SyntheticConfig::default()
    });
    let corpus = tmp.path().join("corpus.jsonl");
    let questions = tmp.path().join("questions.json");
    set.write_corpus(&corpus).map_err(|e| e.to_string())?;
    set.write_questions(&questions).map_err(|e| e.to_string())?;
    let out = medrag(&[
        "bench",
        "latency",
        "--strategy",
        "bm25",
        "--n",
        "200",
        "--corpus",
        corpus.to_str().unwrap(),
        "--questions",
        questions.to_str().unwrap(),
    ])?;
    let line = out.lines().next().unwrap_or_default().to_owned();
    let mean: f64 = line
        .split_whitespace()
        .next()
        .and_then(|x| x.parse().ok())
        .ok_or_else(|| format!("unexpected output {line:?}"))?;
    ensure!(line.ends_with(" ms") && line.contains(" ms ± "), "unexpected output {line:?}");
    ensure!(mean < 50.0, "mean {mean} ms >= 50 ms");
    Ok(format!("100k docs, 200 bm25 queries: {line} (target mean < 50 ms; published 2.4M-doc figure 82 ms ± 37 ms)"))
}
