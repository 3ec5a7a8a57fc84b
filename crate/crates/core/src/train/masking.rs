use rand::RngCore;

use crate::model::Batch;
use crate::rng::{uniform_below, unit_f64};
use crate::tokenizer::{SpecialIds, TokenId};

pub const MASK_PROB: f64 = 0.15;
pub const REPLACE_MASK_PROB: f64 = 0.8;
pub const REPLACE_RANDOM_PROB: f64 = 0.1;

/// What happened to a selected position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskAction {
    Masked,
    Random,
    Kept,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedBatch {
    /// Inputs after replacement; `keep` is unchanged.
    pub batch: Batch,
    /// Original id at selected positions.
    pub labels: Vec<Option<TokenId>>,
    pub actions: Vec<Option<MaskAction>>,
}

impl MaskedBatch {
    pub fn selected(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Flattened row indices of the selected positions with their targets.
    pub fn targets(&self) -> (Vec<usize>, Vec<Option<TokenId>>) {
        self.labels.iter().enumerate().filter_map(|(i, l)| l.map(|t| (i, Some(t)))).unzip()
    }
}

/// Uniform draw over the ids of a `vocab_size` vocabulary that are not
/// special.
pub fn random_non_special<R: RngCore + ?Sized>(rng: &mut R, vocab_size: usize, specials: SpecialIds) -> TokenId {
    let mut sp: Vec<TokenId> = specials.all().into_iter().filter(|&s| (s as usize) < vocab_size).collect();
    sp.sort_unstable();
    sp.dedup();
    let n = vocab_size - sp.len();
    let mut id = uniform_below(rng, n as u64) as TokenId;
    // shift past each special at or below the running id
    for &s in &sp {
        if s <= id {
            id += 1;
        }
    }
    id
}

/// Selects each non-special position with probability 0.15, then replaces
/// it with `[MASK]` (0.8), a random non-special token (0.1) or leaves it
/// (0.1).
pub fn mask_batch<R: RngCore + ?Sized>(batch: &Batch, specials: SpecialIds, vocab_size: usize, rng: &mut R) -> MaskedBatch {
    let mut ids = batch.ids.clone();
    let mut labels = vec![None; ids.len()];
    let mut actions = vec![None; ids.len()];
    for i in 0..ids.len() {
        let orig = ids[i];
        if specials.contains(orig) || unit_f64(rng) >= MASK_PROB {
            continue;
        }
        labels[i] = Some(orig);
        let r = unit_f64(rng);
        let action = if r < REPLACE_MASK_PROB {
            ids[i] = specials.mask;
            MaskAction::Masked
        } else if r < REPLACE_MASK_PROB + REPLACE_RANDOM_PROB {
            ids[i] = random_non_special(rng, vocab_size, specials);
            MaskAction::Random
        } else {
            MaskAction::Kept
        };
        actions[i] = Some(action);
    }
    MaskedBatch {
        batch: Batch { ids, keep: batch.keep.clone(), size: batch.size, seq: batch.seq },
        labels,
        actions,
    }
}
