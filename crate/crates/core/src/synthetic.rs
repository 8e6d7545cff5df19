//! Seeded synthetic corpus and yes/no question set with planted gold
//! documents, for hermetic evaluation.
//!
//! Every question is `"Is there {a} in {b} with {c} and {d}?"`. Only the
//! four slot words survive stopword removal. `a` and `b` are rare key terms
//! unique to the question; `c` and `d` come from a small pool of common
//! words that also appear in filler documents with Zipfian frequencies.
//!
//! * Each question has two gold documents containing all four slot words
//!   once, padded with filler.
//! * A question may have `m` decoys: short documents that repeat `a` and `b`
//!   several times. Under BM25 they outrank the gold documents, so gold
//!   enters a top-`k` list exactly when `m < k`.
//! * Decoys share only half the query terms, so the overlap reranker scores
//!   them 0 and drops them, while gold documents score 1.
//! * Questions in the hidden class have gold documents without any query
//!   term, so no lexical retriever finds them.
//!
//! With the gold-echo stub generator the answer is correct exactly when a
//! gold document reaches the context, which makes expected accuracy a
//! closed-form function of depth ([`SyntheticSet::analytic_accuracy`]).

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufWriter};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_jsonl, Document};
use crate::eval::{to_bioasq_json, EvalQuestion, QuestionType};
use crate::generate::YesNo;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Total documents, fillers included.
    pub n_docs: usize,
    pub seed: u64,
    pub questions_per_class: usize,
    /// Decoy count for each visible class.
    pub decoy_classes: Vec<usize>,
    /// Adds one class whose gold documents are lexically invisible.
    pub hidden_class: bool,
    pub gold_per_question: usize,
    pub filler_vocab: usize,
    pub common_pool: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_docs: 10_000,
            seed: 20_240_601,
            questions_per_class: 10,
            decoy_classes: vec![0, 25, 60],
            hidden_class: true,
            gold_per_question: 2,
            filler_vocab: 5_000,
            common_pool: 50,
        }
    }
}

/// How one question was planted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub decoys: usize,
    pub hidden: bool,
}

impl Plan {
    /// Whether a top-`k` BM25 list contains at least one gold document.
    pub fn gold_in_top(&self, k: usize) -> bool {
        !self.hidden && self.decoys < k
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSet {
    pub documents: Vec<Document>,
    pub questions: Vec<EvalQuestion>,
    /// Parallel to `questions`.
    pub plans: Vec<Plan>,
}

impl SyntheticSet {
    /// Expected gold-echo accuracy when `k` first-stage candidates feed the
    /// context (for hybrid, `k` is the depth; for plain BM25, `keep_n`).
    pub fn analytic_accuracy(&self, k: usize) -> f64 {
        let hits = self.plans.iter().filter(|p| p.gold_in_top(k)).count();
        hits as f64 / self.plans.len() as f64
    }

    pub fn pmids(&self) -> HashSet<String> {
        self.documents.iter().map(|d| d.pmid.clone()).collect()
    }

    pub fn write_corpus(&self, path: impl AsRef<Path>) -> io::Result<()> {
        write_jsonl(&self.documents, BufWriter::new(File::create(path)?))
    }

    pub fn write_questions(&self, path: impl AsRef<Path>) -> io::Result<()> {
        std::fs::write(path, to_bioasq_json(&self.questions))
    }
}

struct Words<'a> {
    rng: &'a mut ChaCha8Rng,
    vocab: usize,
}

impl Words<'_> {
    fn filler(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| format!("f{:04}", self.rng.random_range(0..self.vocab))).collect()
    }
}

fn shuffled_join(mut words: Vec<String>, rng: &mut ChaCha8Rng) -> String {
    words.shuffle(rng);
    words.join(" ")
}

pub fn generate(config: &SyntheticConfig) -> SyntheticSet {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut plans = Vec::new();
    for &m in &config.decoy_classes {
        plans.extend(std::iter::repeat_n(Plan { decoys: m, hidden: false }, config.questions_per_class));
    }
    if config.hidden_class {
        plans.extend(std::iter::repeat_n(Plan { decoys: 0, hidden: true }, config.questions_per_class));
    }

    let common: Vec<String> = (0..config.common_pool).map(|j| format!("common{j}")).collect();
    // Zipfian filler frequencies, so query cost varies the way it does on
    // natural text.
    let common_weighted: Vec<(&String, f64)> = common.iter().enumerate().map(|(j, c)| (c, 1.0 / (j + 1) as f64)).collect();
    // (title words, content words, owning question) before PMIDs are assigned.
    let mut bodies: Vec<(String, String, Option<usize>)> = Vec::new();
    let mut questions = Vec::new();
    for (i, plan) in plans.iter().enumerate() {
        let a = format!("key{i}a");
        let b = format!("key{i}b");
        let picked: Vec<&String> = common.choose_multiple(&mut rng, 2).collect();
        let (c, d) = (picked[0].clone(), picked[1].clone());
        let mut words = Words {
            rng: &mut rng,
            vocab: config.filler_vocab,
        };
        for _ in 0..config.gold_per_question {
            let title = words.filler(2).join(" ");
            let mut content = words.filler(200);
            if !plan.hidden {
                content.extend([a.clone(), b.clone(), c.clone(), d.clone()]);
            }
            bodies.push((title, shuffled_join(content, words.rng), Some(i)));
        }
        for _ in 0..plan.decoys {
            let reps_a = words.rng.random_range(5..=8);
            let reps_b = words.rng.random_range(5..=8);
            let mut content = words.filler(10);
            content.extend(std::iter::repeat_n(a.clone(), reps_a));
            content.extend(std::iter::repeat_n(b.clone(), reps_b));
            bodies.push((words.filler(2).join(" "), shuffled_join(content, words.rng), None));
        }
        questions.push(EvalQuestion {
            qid: format!("synth{i:03}"),
            body: format!("Is there {a} in {b} with {c} and {d}?"),
            qtype: QuestionType::Yesno,
            gold_answer: Some(if i % 2 == 0 { YesNo::Yes } else { YesNo::No }),
            gold_pmids: HashSet::new(),
        });
    }
    while bodies.len() < config.n_docs {
        let mut words = Words {
            rng: &mut rng,
            vocab: config.filler_vocab,
        };
        let len = words.rng.random_range(60..=120);
        let mut content = words.filler(len);
        let picked = common_weighted
            .choose_multiple_weighted(words.rng, 3, |(_, w)| *w)
            .expect("weights are positive");
        content.extend(picked.map(|(c, _)| (*c).clone()));
        bodies.push((words.filler(2).join(" "), shuffled_join(content, &mut rng), None));
    }

    let mut ids: Vec<usize> = (0..bodies.len()).collect();
    ids.shuffle(&mut rng);
    let mut documents: Vec<(usize, Document)> = bodies
        .into_iter()
        .zip(ids)
        .map(|((title, content, owner), id)| {
            let pmid = (10_000_000 + id).to_string();
            if let Some(q) = owner {
                questions[q].gold_pmids.insert(pmid.clone());
            }
            (id, Document::new(pmid, title, content))
        })
        .collect();
    documents.sort_by_key(|(id, _)| *id);

    SyntheticSet {
        documents: documents.into_iter().map(|(_, d)| d).collect(),
        questions,
        plans,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            n_docs: 2_000,
            questions_per_class: 3,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn shape_and_determinism() {
        let a = generate(&small());
        let b = generate(&small());
        assert_eq!(a.documents, b.documents);
        assert_eq!(a.questions, b.questions);
        assert_eq!(a.documents.len(), 2_000);
        assert_eq!(a.questions.len(), 12);
        assert_eq!(a.pmids().len(), 2_000);
        assert!(a.questions.iter().all(|q| q.gold_pmids.len() == 2));
    }

    #[test]
    fn analytic_accuracy_by_depth() {
        let s = generate(&small());
        assert_eq!(s.analytic_accuracy(10), 0.25);
        assert_eq!(s.analytic_accuracy(20), 0.25);
        assert_eq!(s.analytic_accuracy(50), 0.5);
        assert_eq!(s.analytic_accuracy(100), 0.75);
    }

    #[test]
    fn hidden_gold_shares_no_query_terms() {
        let s = generate(&small());
        for (q, plan) in s.questions.iter().zip(&s.plans).filter(|(_, p)| p.hidden) {
            let key = q.body.split(' ').nth(2).unwrap();
            for d in s.documents.iter().filter(|d| q.gold_pmids.contains(&d.pmid)) {
                assert!(!d.content.contains(key), "{plan:?}");
            }
        }
    }
}
