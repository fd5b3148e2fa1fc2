//! Stage 2: beam search over word-bag tokens, verified against the
//! layer-adapter span.
//!
//! Unidirectional models only need the newly appended position checked,
//! since earlier hidden states cannot see later tokens. Bidirectional prefixes
//! are ranked by span similarity without gating, and the full per-position
//! membership test is applied once a candidate is complete.
//!
//! Sentences of equal length put the end token at the same position with
//! nearly the same hidden state, so those states share one activation pattern
//! and only their gradient-weighted sum lies in the layer-adapter span. The
//! end token's own position is therefore exempt from the bidirectional test;
//! its neighbours still see it through attention.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::filters::{filter_eicw, SemanticFilter, SequencePredicate};
use super::{AttackConfig, WordBag};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, DenseMatrix};
use crate::model::softmax as attention_softmax;
use crate::model::{AttentionMode, Model};
use crate::subspace::Subspace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub sequence: Vec<usize>,
    /// Smallest span similarity over the checked positions.
    pub score: f64,
}

/// Score descending, then token ids ascending.
pub fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.sequence.cmp(&b.sequence))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    /// Every completed candidate, best first.
    pub candidates: Vec<Candidate>,
}

/// Layer-adapter inputs of candidate sequences over a fixed token set.
///
/// Per token and position it caches the attention input `h`, its query and
/// key, and `W_o W_v h`, so a hidden state costs one softmax and a weighted
/// sum instead of four matrix products per position.
pub struct CandidateScorer<'a> {
    subspace: &'a Subspace,
    mode: AttentionMode,
    max_len: usize,
    scale: f64,
    slot: Vec<usize>,
    h: DenseMatrix,
    q: DenseMatrix,
    k: DenseMatrix,
    vo: DenseMatrix,
}

impl<'a> CandidateScorer<'a> {
    pub fn new(
        model: &Model,
        subspace: &'a Subspace,
        tokens: &[usize],
        max_len: usize,
    ) -> Result<Self> {
        let mc = model.config();
        let d = mc.d_hidden;
        if subspace.ambient_dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: subspace.ambient_dim(),
            });
        }
        let max_len = max_len.min(mc.max_seq_len);
        let mut slot = vec![usize::MAX; mc.vocab_size];
        for (i, &t) in tokens.iter().enumerate() {
            if t >= mc.vocab_size {
                return Err(Error::OutOfRange {
                    what: "token id",
                    value: t,
                    limit: mc.vocab_size,
                });
            }
            slot[t] = i;
        }
        let att = model.attention();
        let rows: Vec<[Vec<f64>; 4]> = tokens
            .par_iter()
            .flat_map_iter(|&t| (0..max_len).map(move |p| (t, p)))
            .map(|(t, p)| {
                let h = model.attention_input(t, p);
                let q = att.w_q().matvec(&h);
                let k = att.w_k().matvec(&h);
                let vo = att.w_o().matvec(&att.w_v().matvec(&h));
                [h, q, k, vo]
            })
            .collect();
        let n = rows.len();
        let mut parts: [Vec<f64>; 4] = Default::default();
        for r in rows {
            for (dst, src) in parts.iter_mut().zip(r) {
                dst.extend(src);
            }
        }
        let [h, q, k, vo] = parts.map(|data| DenseMatrix::from_vec(n, d, data));
        Ok(CandidateScorer {
            subspace,
            mode: mc.attention_mode,
            max_len,
            scale: 1.0 / (d as f64).sqrt(),
            slot,
            h: h?,
            q: q?,
            k: k?,
            vo: vo?,
        })
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    fn row(&self, token: usize, pos: usize) -> usize {
        let s = self.slot[token];
        debug_assert!(s != usize::MAX, "token {token} not in scorer");
        s * self.max_len + pos
    }

    /// Post-attention hidden state at position `t` of `sequence`.
    pub fn hidden(&self, sequence: &[usize], t: usize) -> Vec<f64> {
        let len = sequence.len();
        let visible = match self.mode {
            AttentionMode::Unidirectional => t + 1,
            AttentionMode::Bidirectional => len,
        };
        let qt = self.q.row(self.row(sequence[t], t));
        let w = attention_softmax(
            (0..visible).map(|u| dot(qt, self.k.row(self.row(sequence[u], u))) * self.scale),
        );
        let mut g = self.h.row(self.row(sequence[t], t)).to_vec();
        for (u, &a) in w.iter().enumerate() {
            axpy(a, self.vo.row(self.row(sequence[u], u)), &mut g);
        }
        g
    }

    /// Relative residual of the hidden state at position `t`.
    pub fn residual_at(&self, sequence: &[usize], t: usize) -> f64 {
        let g = self.hidden(sequence, t);
        self.subspace.residual_ratio(&g).unwrap_or(1.0)
    }

    pub fn residuals(&self, sequence: &[usize]) -> Vec<f64> {
        (0..sequence.len())
            .map(|t| self.residual_at(sequence, t))
            .collect()
    }
}

struct Expansion {
    open: Vec<Candidate>,
    completed: Vec<Candidate>,
    any_survivor: bool,
}

/// Grows sentences from `bag` and returns the completed ones, best first.
///
/// A sentence completes when the end token is appended, when it reaches
/// `max_len`, or (unidirectional only) when no extension survives.
pub fn reconstruct(
    model: &Model,
    s_la: &Subspace,
    bag: &WordBag,
    config: &AttackConfig,
    corpus_stats: Option<&dyn SequencePredicate>,
) -> Result<Reconstruction> {
    config.validate()?;
    if config.mode != model.config().attention_mode {
        return Err(Error::InvalidConfig(format!(
            "attack mode {:?} does not match model attention {:?}",
            config.mode,
            model.config().attention_mode
        )));
    }
    let grammar = match (config.filters.grammar, corpus_stats) {
        (true, None) => {
            return Err(Error::InvalidConfig(
                "grammar filter enabled without corpus statistics".into(),
            ))
        }
        (true, Some(g)) => Some(g),
        (false, _) => None,
    };
    if bag.is_empty() {
        return Ok(Reconstruction::default());
    }
    let tokens = bag.to_vec();
    let scorer = CandidateScorer::new(model, s_la, &tokens, config.max_len)?;
    let semantic = if config.filters.semantic {
        Some(SemanticFilter::new(model, bag, config.semantic_threshold)?)
    } else {
        None
    };
    let max_len = scorer.max_len();
    let eps = config.epsilon_la;

    let expand = |parent: &Candidate| -> Expansion {
        let mut out = Expansion {
            open: Vec::new(),
            completed: Vec::new(),
            any_survivor: false,
        };
        let mut seq = parent.sequence.clone();
        seq.push(0);
        let last = seq.len() - 1;
        for &w in &tokens {
            if last == 0 && config.end_token == Some(w) {
                continue;
            }
            if config.filters.eicw && !filter_eicw(&parent.sequence, w) {
                continue;
            }
            if config.filters.position && !bag.allows(w, last) {
                continue;
            }
            seq[last] = w;
            if grammar.is_some_and(|g| !g.accept(&seq)) {
                continue;
            }
            if semantic.as_ref().is_some_and(|s| !s.accept(model, &seq)) {
                continue;
            }
            let complete = config.end_token == Some(w) || seq.len() == max_len;
            match config.mode {
                AttentionMode::Unidirectional => {
                    let r = scorer.residual_at(&seq, last);
                    if r >= eps {
                        continue;
                    }
                    out.any_survivor = true;
                    let sim = 1.0 - r;
                    let score = if last == 0 {
                        sim
                    } else {
                        parent.score.min(sim)
                    };
                    let c = Candidate {
                        sequence: seq.clone(),
                        score,
                    };
                    if complete {
                        out.completed.push(c);
                    } else {
                        out.open.push(c);
                    }
                }
                AttentionMode::Bidirectional => {
                    let worst = seq
                        .iter()
                        .enumerate()
                        .filter(|&(_, &tok)| Some(tok) != config.end_token)
                        .map(|(t, _)| scorer.residual_at(&seq, t))
                        .fold(0.0f64, f64::max);
                    let c = Candidate {
                        sequence: seq.clone(),
                        score: 1.0 - worst,
                    };
                    if complete {
                        if worst < eps {
                            out.any_survivor = true;
                            out.completed.push(c);
                        }
                    } else {
                        out.any_survivor = true;
                        out.open.push(c);
                    }
                }
            }
        }
        out
    };

    let mut beam = vec![Candidate {
        sequence: Vec::new(),
        score: 0.0,
    }];
    let mut completed = Vec::new();
    for _depth in 0..max_len {
        let expansions: Vec<Expansion> = beam.par_iter().map(expand).collect();
        let mut next = Vec::new();
        for (parent, e) in beam.iter().zip(expansions) {
            if !e.any_survivor
                && !parent.sequence.is_empty()
                && config.mode == AttentionMode::Unidirectional
            {
                completed.push(parent.clone());
            }
            completed.extend(e.completed);
            next.extend(e.open);
        }
        if next.is_empty() {
            break;
        }
        next.sort_by(rank_order);
        next.truncate(config.beam_width);
        beam = next;
    }
    completed.sort_by(rank_order);
    completed.dedup_by(|a, b| a.sequence == b.sequence);
    Ok(Reconstruction {
        candidates: completed,
    })
}

/// Picks up to `batch_size` sentences in rank order, skipping exact
/// duplicates and any candidate that is a prefix of one already chosen.
pub fn select_sentences(candidates: &[Candidate], batch_size: usize) -> Vec<Candidate> {
    let mut chosen: Vec<Candidate> = Vec::new();
    for c in candidates {
        if chosen.len() == batch_size {
            break;
        }
        let covered = chosen
            .iter()
            .any(|s| s.sequence.len() >= c.sequence.len() && s.sequence.starts_with(&c.sequence));
        if !covered {
            chosen.push(c.clone());
        }
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, PositionalEncoding};

    fn model(mode: AttentionMode) -> Model {
        Model::new(ModelConfig {
            vocab_size: 30,
            d_hidden: 16,
            reduction_factor: 1,
            attention_mode: mode,
            positional_encoding: PositionalEncoding::AdditiveAfterEmbeddingAdapter,
            max_seq_len: 6,
            seed: 3,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn fast_hidden_matches_model() {
        for mode in [AttentionMode::Unidirectional, AttentionMode::Bidirectional] {
            let m = model(mode);
            let s = Subspace::empty(16);
            let scorer = CandidateScorer::new(&m, &s, &[2, 5, 7, 0], 6).unwrap();
            let seq = [5, 2, 7, 7, 0];
            let slow = m.hidden_for_candidate(&seq).unwrap();
            for (t, g) in slow.iter().enumerate() {
                let fast = scorer.hidden(&seq, t);
                for (a, b) in fast.iter().zip(g) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_token_bag() {
        let m = model(AttentionMode::Unidirectional);
        let g = m.hidden_for_candidate(&[4]).unwrap();
        let s = Subspace::orthonormalize(16, g.iter().map(|v| v.as_slice()), 1e-8).unwrap();
        let bag = WordBag {
            tokens: [4].into_iter().collect(),
            ..Default::default()
        };
        let cfg = AttackConfig {
            end_token: None,
            ..AttackConfig::default()
        };
        let r = reconstruct(&m, &s, &bag, &cfg, None).unwrap();
        assert_eq!(r.candidates.len(), 1);
        assert_eq!(r.candidates[0].sequence, vec![4]);
        assert!((r.candidates[0].score - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_bag_and_mode_mismatch() {
        let m = model(AttentionMode::Bidirectional);
        let s = Subspace::empty(16);
        let cfg = AttackConfig {
            mode: AttentionMode::Bidirectional,
            ..AttackConfig::default()
        };
        assert!(reconstruct(&m, &s, &WordBag::default(), &cfg, None)
            .unwrap()
            .candidates
            .is_empty());
        let bad = AttackConfig::default();
        assert!(reconstruct(&m, &s, &WordBag::default(), &bad, None).is_err());
    }

    #[test]
    fn selection_skips_prefixes() {
        let c = |s: &[usize], score| Candidate {
            sequence: s.to_vec(),
            score,
        };
        let picked = select_sentences(&[c(&[1, 2, 3], 0.9), c(&[1, 2], 0.8), c(&[4], 0.7)], 2);
        assert_eq!(picked, vec![c(&[1, 2, 3], 0.9), c(&[4], 0.7)]);
    }
}
