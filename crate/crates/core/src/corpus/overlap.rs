use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSubset, TokenSet};
use crate::tokenizer::TokenId;

/// Token coverage of a classification task by a pre-training subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub ws: usize,
    pub tw: usize,
    pub tc: usize,
    pub tm: usize,
    /// `T_C \ T_W`, ascending.
    pub missing: Vec<TokenId>,
    /// Share of task token occurrences whose token appears in the subset.
    pub weighted_overlap: f64,
}

pub fn compute_overlap_metrics(subset: &CorpusSubset, tc: &TokenSet) -> OverlapReport {
    overlap_of(subset.len(), &subset.tw, tc)
}

/// Overlap of `tc` with an arbitrary pre-training token set `tw`.
pub fn overlap_of(ws: usize, tw: &TokenSet, tc: &TokenSet) -> OverlapReport {
    let missing = tc.difference(tw);
    let (mut covered, mut total) = (0u64, 0u64);
    for t in tc.iter() {
        let f = tc.frequency(t);
        total += f;
        if tw.contains(t) {
            covered += f;
        }
    }
    let weighted_overlap = if total == 0 { 1.0 } else { covered as f64 / total as f64 };
    OverlapReport { ws, tw: tw.len(), tc: tc.len(), tm: missing.len(), missing, weighted_overlap }
}
