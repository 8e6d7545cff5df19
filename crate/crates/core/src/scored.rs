//! Ranked retrieval results shared by every retrieval stage.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Which stage produced a [`ScoredDoc`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Sparse,
    Dense,
    Rerank,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Sparse => "sparse",
            Stage::Dense => "dense",
            Stage::Rerank => "rerank",
        })
    }
}

/// A retrieval candidate. Within one list ranks run 1, 2, 3, ... and scores
/// never increase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub pmid: String,
    pub score: f64,
    pub rank: usize,
    pub stage: Stage,
}

/// Assigns consecutive ranks to `(pmid, score)` pairs that are already in
/// final order.
pub(crate) fn into_ranked<I>(items: I, stage: Stage) -> Vec<ScoredDoc>
where
    I: IntoIterator<Item = (String, f64)>,
{
    items
        .into_iter()
        .enumerate()
        .map(|(i, (pmid, score))| ScoredDoc {
            pmid,
            score,
            rank: i + 1,
            stage,
        })
        .collect()
}

/// Checks the ranked-list invariant: consecutive ranks from 1 and
/// non-increasing scores.
pub fn is_well_ranked(list: &[ScoredDoc]) -> bool {
    list.iter().enumerate().all(|(i, d)| d.rank == i + 1)
        && list.windows(2).all(|w| w[0].score >= w[1].score)
}
