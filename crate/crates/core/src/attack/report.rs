//! End-to-end driver and scoring. The attack itself sees only the model, the
//! update, its configuration and public corpus statistics; ground truth
//! enters in [`score_attack`].

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::beam::{reconstruct, select_sentences, Candidate};
use super::filters::SequencePredicate;
use super::rwbg::build_attack_subspaces;
use super::word_bag::{infer_word_bag, WordBag};
use super::AttackConfig;
use crate::error::{Error, Result};
use crate::fedsim::GradientUpdate;
use crate::metrics::{match_by_rouge1, pooled_rouge, rouge_n};
use crate::model::Model;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub word_bag_seconds: f64,
    pub reconstruct_seconds: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubspaceSummary {
    pub embedding_rank: usize,
    pub layer_rank: usize,
    pub embedding_skipped: usize,
    pub layer_skipped: usize,
}

/// Everything the attacker derives from one update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackOutput {
    pub config: AttackConfig,
    pub batch_size: usize,
    pub round_id: u64,
    pub subspaces: SubspaceSummary,
    pub word_bag: WordBag,
    /// Every completed candidate, best first.
    pub candidates: Vec<Candidate>,
    /// Up to `batch_size` sentences picked from `candidates`.
    pub sentences: Vec<Candidate>,
    pub timings: StageTimings,
    /// Set when the update carried nothing to invert.
    pub note: Option<String>,
}

impl AttackOutput {
    /// Output for an update from which no subspace could be built.
    pub fn no_signal(config: &AttackConfig, update: &GradientUpdate, reason: String) -> Self {
        AttackOutput {
            config: config.clone(),
            batch_size: update.batch_size,
            round_id: update.round_id,
            subspaces: SubspaceSummary::default(),
            word_bag: WordBag::default(),
            candidates: Vec::new(),
            sentences: Vec::new(),
            timings: StageTimings::default(),
            note: Some(reason),
        }
    }
}

/// Runs both stages on one update.
pub fn run_attack(
    model: &Model,
    update: &GradientUpdate,
    config: &AttackConfig,
    corpus_stats: Option<&dyn SequencePredicate>,
) -> Result<AttackOutput> {
    config.validate()?;
    if !update.matches_model(model) {
        return Err(Error::InvalidConfig(
            "update shapes do not match the model".into(),
        ));
    }
    if !update.is_finite() {
        return Err(Error::NonFinite("gradient update"));
    }
    let t0 = Instant::now();
    let spaces = build_attack_subspaces(update, config)?;
    let word_bag = infer_word_bag(model, &spaces.embedding, config)?;
    let t1 = Instant::now();
    let rec = reconstruct(model, &spaces.layer, &word_bag, config, corpus_stats)?;
    let sentences = select_sentences(&rec.candidates, update.batch_size);
    let t2 = Instant::now();
    Ok(AttackOutput {
        config: config.clone(),
        batch_size: update.batch_size,
        round_id: update.round_id,
        subspaces: SubspaceSummary {
            embedding_rank: spaces.embedding.rank(),
            layer_rank: spaces.layer.rank(),
            embedding_skipped: spaces.embedding_skipped,
            layer_skipped: spaces.layer_skipped,
        },
        word_bag,
        candidates: rec.candidates,
        sentences,
        timings: StageTimings {
            word_bag_seconds: (t1 - t0).as_secs_f64(),
            reconstruct_seconds: (t2 - t1).as_secs_f64(),
        },
        note: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BagStats {
    pub size: usize,
    pub true_tokens: usize,
    pub hits: usize,
    pub recall: f64,
    /// Zero for an empty bag.
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub tokens: Vec<usize>,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub reference: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_text: Option<String>,
    pub candidate: Option<CandidateRecord>,
    pub rouge1: Option<f64>,
    pub rouge2: Option<f64>,
    pub exact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub format_version: u32,
    pub config: AttackConfig,
    pub batch_size: usize,
    pub round_id: u64,
    pub subspaces: SubspaceSummary,
    pub word_bag: BagStats,
    pub bag_tokens: Vec<usize>,
    pub candidates: Vec<CandidateRecord>,
    pub sentences: Vec<SentenceScore>,
    pub corpus_rouge1: f64,
    /// Absent when no reference has two word tokens.
    pub corpus_rouge2: Option<f64>,
    pub timings: Option<StageTimings>,
    pub note: Option<String>,
}

fn render(tokens: &[usize], vocab: Option<&[String]>) -> Option<String> {
    vocab.map(|v| {
        tokens
            .iter()
            .map(|&t| v.get(t).map_or("<unk>", |s| s.as_str()))
            .collect::<Vec<_>>()
            .join(" ")
    })
}

/// Scores an attack output against the true batch. ROUGE is computed on word
/// tokens, so the end token is removed from both sides first.
pub fn score_attack(
    output: &AttackOutput,
    truth: &[Vec<usize>],
    vocab: Option<&[String]>,
) -> Result<AttackReport> {
    if truth.is_empty() {
        return Err(Error::Empty("ground-truth batch"));
    }
    let end = output.config.end_token;
    let words =
        |s: &[usize]| -> Vec<usize> { s.iter().copied().filter(|&t| Some(t) != end).collect() };

    let mut true_set: Vec<usize> = truth.iter().flatten().copied().collect();
    true_set.sort_unstable();
    true_set.dedup();
    let hits = true_set
        .iter()
        .filter(|t| output.word_bag.contains(**t))
        .count();
    let size = output.word_bag.len();
    let word_bag = BagStats {
        size,
        true_tokens: true_set.len(),
        hits,
        recall: hits as f64 / true_set.len() as f64,
        precision: if size == 0 {
            0.0
        } else {
            hits as f64 / size as f64
        },
    };

    let refs: Vec<Vec<usize>> = truth.iter().map(|s| words(s)).collect();
    let cands: Vec<Vec<usize>> = output
        .sentences
        .iter()
        .map(|c| words(&c.sequence))
        .collect();
    let assignment = match_by_rouge1(&cands, &refs);
    let record = |c: &Candidate| CandidateRecord {
        tokens: c.sequence.clone(),
        score: c.score,
        text: render(&c.sequence, vocab),
    };
    let mut sentences = Vec::with_capacity(truth.len());
    for ((full, r), a) in truth.iter().zip(&refs).zip(&assignment) {
        let cand = a.map(|i| &output.sentences[i]);
        let score = |n: usize| -> Result<Option<f64>> {
            if r.len() < n {
                return Ok(None);
            }
            let c = a.map(|i| cands[i].as_slice()).unwrap_or(&[]);
            Ok(Some(rouge_n(c, r, n)?.recall_percent))
        };
        sentences.push(SentenceScore {
            reference: full.clone(),
            reference_text: render(full, vocab),
            candidate: cand.map(record),
            rouge1: score(1)?,
            rouge2: score(2)?,
            exact: cand.is_some_and(|c| &c.sequence == full),
        });
    }
    Ok(AttackReport {
        format_version: REPORT_FORMAT_VERSION,
        config: output.config.clone(),
        batch_size: output.batch_size,
        round_id: output.round_id,
        subspaces: output.subspaces,
        word_bag,
        bag_tokens: output.word_bag.to_vec(),
        candidates: output.candidates.iter().map(record).collect(),
        sentences,
        corpus_rouge1: pooled_rouge(&cands, &refs, &assignment, 1)?.unwrap_or(0.0),
        corpus_rouge2: pooled_rouge(&cands, &refs, &assignment, 2)?,
        timings: Some(output.timings),
        note: output.note.clone(),
    })
}

/// [`run_attack`] followed by [`score_attack`].
pub fn attack_end_to_end(
    model: &Model,
    update: &GradientUpdate,
    ground_truth: &[Vec<usize>],
    config: &AttackConfig,
    corpus_stats: Option<&dyn SequencePredicate>,
) -> Result<AttackReport> {
    let output = run_attack(model, update, config, corpus_stats)?;
    score_attack(&output, ground_truth, None)
}
