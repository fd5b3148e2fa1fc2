//! Two-stage reconstruction of a client's private text from one shared
//! adapter update.
//!
//! 1. [`word_bag`]: the weight/bias gradient ratios of the embedding
//!    adapter's down layer span the embeddings it saw, so every vocabulary
//!    embedding is tested for membership in that span.
//! 2. [`beam`]: candidate sentences are grown from the bag, pruned by cheap
//!    linguistic filters and kept only if their post-attention hidden states
//!    lie in the span recovered from the layer adapter.

pub mod beam;
pub mod filters;
pub mod report;
pub mod rwbg;
pub mod word_bag;

use serde::{Deserialize, Serialize};

pub use beam::{
    rank_order, reconstruct, select_sentences, Candidate, CandidateScorer, Reconstruction,
};
pub use filters::{
    filter_eicw, filter_semantic, AcceptAll, BigramStats, SemanticFilter, SequencePredicate,
};
pub use report::{
    attack_end_to_end, run_attack, score_attack, AttackOutput, AttackReport, BagStats,
    CandidateRecord, SentenceScore, StageTimings, SubspaceSummary, REPORT_FORMAT_VERSION,
};
pub use rwbg::{build_attack_subspaces, compute_rwbg, AttackSubspaces, RwbgSet, SkipReason};
pub use word_bag::{infer_word_bag, WordBag};

use crate::error::{Error, Result};
use crate::model::AttentionMode;
use crate::subspace::DEFAULT_DROP_TOLERANCE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSwitches {
    pub eicw: bool,
    pub grammar: bool,
    pub semantic: bool,
    /// Only place a token where the word-bag scan saw it. Has no effect
    /// unless positions are added before the embedding adapter.
    pub position: bool,
}

impl Default for FilterSwitches {
    fn default() -> Self {
        FilterSwitches {
            eicw: true,
            grammar: false,
            semantic: false,
            position: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// Relative residual threshold for word-bag membership.
    pub epsilon_ea: f64,
    /// Relative residual threshold for hidden-state membership.
    pub epsilon_la: f64,
    pub beam_width: usize,
    pub max_len: usize,
    /// Neurons whose `|∇b|` is at most this fraction of the largest
    /// bias-gradient magnitude in the tensor are skipped.
    pub bias_grad_floor: f64,
    pub drop_tolerance: f64,
    pub filters: FilterSwitches,
    pub semantic_threshold: f64,
    /// Smoothed bigram count a pair must exceed to pass the grammar filter.
    pub grammar_floor: f64,
    pub mode: AttentionMode,
    /// Token that terminates a sentence, if the vocabulary has one.
    pub end_token: Option<usize>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilon_ea: 1e-3,
            epsilon_la: 1e-3,
            beam_width: 1024,
            max_len: 12,
            bias_grad_floor: 1e-12,
            drop_tolerance: DEFAULT_DROP_TOLERANCE,
            filters: FilterSwitches::default(),
            semantic_threshold: 0.2,
            grammar_floor: 1.0,
            mode: AttentionMode::Unidirectional,
            end_token: Some(0),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.epsilon_ea > 0.0) || !(self.epsilon_la > 0.0) {
            return bad("epsilons must be positive".into());
        }
        if self.beam_width == 0 {
            return bad("beam_width must be at least 1".into());
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1".into());
        }
        if !(self.bias_grad_floor >= 0.0) {
            return bad("bias_grad_floor must be non-negative".into());
        }
        if !(self.drop_tolerance > 0.0) {
            return bad("drop_tolerance must be positive".into());
        }
        Ok(())
    }
}
