//! Wall-clock helpers. All durations are reported in fractional milliseconds
//! from the monotonic clock.

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Outcome of an offline index build.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub docs: usize,
    pub elapsed_ms: f64,
    pub docs_per_sec: f64,
}

impl BuildReport {
    pub fn new(docs: usize, elapsed_ms: f64) -> Self {
        let docs_per_sec = if elapsed_ms > 0.0 {
            docs as f64 / (elapsed_ms / 1e3)
        } else {
            f64::INFINITY
        };
        Self {
            docs,
            elapsed_ms,
            docs_per_sec,
        }
    }
}

impl std::fmt::Display for BuildReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "indexed {} documents in {:.1} ms ({:.0} docs/s)",
            self.docs, self.elapsed_ms, self.docs_per_sec
        )
    }
}

/// Per-question stage timings in milliseconds. `total_ms` covers the whole
/// request, including orchestration, so it is at least the sum of the
/// stages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub retrieval_ms: f64,
    pub rerank_ms: f64,
    pub generation_ms: f64,
    pub total_ms: f64,
}

impl Timings {
    pub fn stage_sum(&self) -> f64 {
        self.retrieval_ms + self.rerank_ms + self.generation_ms
    }
}
