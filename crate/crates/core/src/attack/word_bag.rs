//! Stage 1: vocabulary scan against the embedding-adapter span.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AttackConfig;
use crate::error::{Error, Result};
use crate::model::{Model, PositionalEncoding};
use crate::subspace::Subspace;

/// Tokens inferred to occur in the victim batch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WordBag {
    pub tokens: BTreeSet<usize>,
    /// Smallest relative residual over the scanned positions.
    pub per_token_residual: BTreeMap<usize, f64>,
    /// Positions at which each token passed. Empty when the embedding-adapter
    /// input carries no position.
    pub token_positions: BTreeMap<usize, Vec<usize>>,
}

impl WordBag {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: usize) -> bool {
        self.tokens.contains(&token)
    }

    /// Tokens in ascending id order.
    pub fn to_vec(&self) -> Vec<usize> {
        self.tokens.iter().copied().collect()
    }

    /// Whether `token` may appear at `position`. Always true for a bag
    /// without position information.
    pub fn allows(&self, token: usize, position: usize) -> bool {
        if self.token_positions.is_empty() {
            return self.contains(token);
        }
        self.token_positions
            .get(&token)
            .is_some_and(|p| p.binary_search(&position).is_ok())
    }
}

/// Keeps every vocabulary token whose embedding-adapter input lies in
/// `s_ea` up to `epsilon_ea`. With a positional table added before the
/// adapter, every position up to the model's maximum length is tried.
pub fn infer_word_bag(model: &Model, s_ea: &Subspace, config: &AttackConfig) -> Result<WordBag> {
    config.validate()?;
    let mc = model.config();
    if s_ea.ambient_dim() != mc.d_hidden {
        return Err(Error::DimensionMismatch {
            expected: mc.d_hidden,
            found: s_ea.ambient_dim(),
        });
    }
    if s_ea.rank() == 0 {
        return Ok(WordBag::default());
    }
    let positions = match mc.positional_encoding {
        PositionalEncoding::AdditiveBeforeEmbeddingAdapter => mc.max_seq_len,
        _ => 1,
    };
    let hits: Vec<Option<(usize, f64, Vec<usize>)>> = (0..mc.vocab_size)
        .into_par_iter()
        .map(|token| -> Result<Option<(usize, f64, Vec<usize>)>> {
            let mut best = f64::INFINITY;
            let mut passed = Vec::new();
            for pos in 0..positions {
                let v = model.embed(token, pos)?;
                let r = s_ea.residual_ratio(v.as_slice())?;
                if r < config.epsilon_ea {
                    passed.push(pos);
                }
                best = best.min(r);
            }
            Ok((!passed.is_empty()).then_some((token, best, passed)))
        })
        .collect::<Result<_>>()?;
    let mut bag = WordBag::default();
    for (token, r, passed) in hits.into_iter().flatten() {
        bag.tokens.insert(token);
        bag.per_token_residual.insert(token, r);
        if positions > 1 {
            bag.token_positions.insert(token, passed);
        }
    }
    Ok(bag)
}
