//! How many distinct batch tokens the word-bag stage can recover, against the
//! bound `rank(S) ≤ min(d_bottleneck, n, d_hidden)`.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{build_attack_subspaces, infer_word_bag, AttackConfig};
use crate::error::{Error, Result};
use crate::fedsim::GradientUpdate;
use crate::model::{Model, ModelConfig, PositionalEncoding};
use crate::synth::{derive_rng, random_labels, SentenceSampler};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapacityReport {
    pub batch_size: usize,
    pub round: usize,
    pub d_bottleneck: usize,
    pub d_hidden: usize,
    /// Distinct embedding-adapter inputs in the batch: tokens, or
    /// (token, position) pairs when positions are added before the adapter.
    pub true_unique_tokens: usize,
    pub subspace_rank: usize,
    pub recovered_tokens: usize,
    pub theoretical_kmax: usize,
}

impl CapacityReport {
    /// `k ≤ rank ≤ kmax`.
    pub fn within_bounds(&self) -> bool {
        self.recovered_tokens <= self.subspace_rank && self.subspace_rank <= self.theoretical_kmax
    }
}

pub fn theoretical_kmax(d_bottleneck: usize, n: usize, d_hidden: usize) -> Result<usize> {
    if d_bottleneck == 0 || n == 0 || d_hidden == 0 {
        return Err(Error::InvalidConfig(format!(
            "capacity bound needs positive sizes, got ({d_bottleneck}, {n}, {d_hidden})"
        )));
    }
    Ok(d_bottleneck.min(n).min(d_hidden))
}

/// Counts distinct embedding-adapter inputs of a batch.
pub fn distinct_inputs(model_config: &ModelConfig, batch: &[Vec<usize>]) -> usize {
    let positional =
        model_config.positional_encoding == PositionalEncoding::AdditiveBeforeEmbeddingAdapter;
    let mut seen = BTreeSet::new();
    for s in batch {
        for (pos, &t) in s.iter().enumerate() {
            seen.insert((t, if positional { pos } else { 0 }));
        }
    }
    seen.len()
}

/// Runs the word-bag stage on `update` and counts how many tokens of the
/// true batch land in the bag. An update without usable signal gives rank 0
/// and nothing recovered.
pub fn measure_capacity(
    model: &Model,
    update: &GradientUpdate,
    ground_truth: &[Vec<usize>],
    config: &AttackConfig,
) -> Result<CapacityReport> {
    let mut truth: Vec<usize> = ground_truth.iter().flatten().copied().collect();
    truth.sort_unstable();
    truth.dedup();
    let mc = model.config();
    let n = distinct_inputs(mc, ground_truth);
    let kmax = theoretical_kmax(mc.d_bottleneck(), n, mc.d_hidden)?;
    let (rank, recovered) = match build_attack_subspaces(update, config) {
        Ok(s) => {
            let bag = infer_word_bag(model, &s.embedding, config)?;
            (
                s.embedding.rank(),
                truth.iter().filter(|&&t| bag.contains(t)).count(),
            )
        }
        Err(Error::NoGradientSignal(_)) => (0, 0),
        Err(e) => return Err(e),
    };
    Ok(CapacityReport {
        batch_size: update.batch_size,
        round: update.round_id as usize,
        d_bottleneck: mc.d_bottleneck(),
        d_hidden: mc.d_hidden,
        true_unique_tokens: n,
        subspace_rank: rank,
        recovered_tokens: recovered,
        theoretical_kmax: kmax,
    })
}

/// One report per `(batch size, round)`, in that order. Each point draws its
/// own batch from a stream derived from `seed`, so results do not depend on
/// scheduling.
pub fn capacity_sweep(
    model_config: &ModelConfig,
    batch_sizes: &[usize],
    rounds: usize,
    seed: u64,
    sampler: &SentenceSampler,
    attack: &AttackConfig,
) -> Result<Vec<CapacityReport>> {
    if batch_sizes.is_empty() || batch_sizes.contains(&0) {
        return Err(Error::InvalidConfig(
            "batch sizes must be positive and non-empty".into(),
        ));
    }
    if sampler.vocab_size > model_config.vocab_size {
        return Err(Error::InvalidConfig(format!(
            "sampler vocabulary {} exceeds model vocabulary {}",
            sampler.vocab_size, model_config.vocab_size
        )));
    }
    sampler.validate()?;
    let model = Model::new(model_config.clone())?;
    let points: Vec<(usize, usize)> = batch_sizes
        .iter()
        .flat_map(|&b| (0..rounds).map(move |r| (b, r)))
        .collect();
    points
        .par_iter()
        .map(|&(b, r)| {
            let mut rng = derive_rng(seed, &[b as u64, r as u64]);
            let batch = sampler.batch(&mut rng, b)?;
            let labels = random_labels(&mut rng, b);
            let g = model.adapter_gradients(&batch, &labels)?;
            let update = GradientUpdate {
                embedding_adapter: g.embedding_adapter,
                layer_adapter: g.layer_adapter,
                batch_size: b,
                round_id: r as u64,
            };
            measure_capacity(&model, &update, &batch, attack)
        })
        .collect()
}

pub const CAPACITY_CSV_HEADER: [&str; 6] = ["batch_size", "round", "n", "rank", "k", "kmax"];

pub fn write_capacity_csv(out: impl Write, reports: &[CapacityReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CAPACITY_CSV_HEADER)?;
    for r in reports {
        w.write_record([
            r.batch_size.to_string(),
            r.round.to_string(),
            r.true_unique_tokens.to_string(),
            r.subspace_rank.to_string(),
            r.recovered_tokens.to_string(),
            r.theoretical_kmax.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::write("capacity csv", e))?;
    Ok(())
}
