//! Experiment grids. Every grid point draws its batch from its own random
//! stream, runs one client exchange, applies the configured defense, attacks
//! the shared update and scores the result against the batch.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::attack::{
    run_attack, score_attack, AttackConfig, AttackOutput, AttackReport, BigramStats,
    SequencePredicate,
};
use crate::capacity::{capacity_sweep, CapacityReport};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::fedsim::{apply_defense, client_round, ClientDataset, DefenseConfig};
use crate::model::{Model, ModelConfig};
use crate::synth::{derive_rng, random_labels, stream_id, SentenceSampler};

/// One attacked grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub batch_size: usize,
    pub round: usize,
    pub report: AttackReport,
}

/// Success statistics over a set of runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub success_rate: f64,
    pub mean_r1: f64,
    /// Mean over the runs where ROUGE-2 is defined.
    pub mean_r2: Option<f64>,
    pub runs: usize,
}

impl Aggregate {
    pub fn from_reports<'a>(
        reports: impl IntoIterator<Item = &'a AttackReport>,
        threshold: f64,
    ) -> Result<Self> {
        let reports: Vec<&AttackReport> = reports.into_iter().collect();
        if reports.is_empty() {
            return Err(Error::Empty("run set"));
        }
        let runs = reports.len();
        let hits = reports
            .iter()
            .filter(|r| r.corpus_rouge1 >= threshold)
            .count();
        let mean_r1 = reports.iter().map(|r| r.corpus_rouge1).sum::<f64>() / runs as f64;
        let r2: Vec<f64> = reports.iter().filter_map(|r| r.corpus_rouge2).collect();
        let mean_r2 = (!r2.is_empty()).then(|| r2.iter().sum::<f64>() / r2.len() as f64);
        Ok(Aggregate {
            success_rate: hits as f64 / runs as f64,
            mean_r1,
            mean_r2,
            runs,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefenseRow {
    /// `dp` or `prune`.
    pub defense: String,
    /// Nominal noise multiplier or prune rate.
    pub parameter: f64,
    pub aggregate: Aggregate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HparamRow {
    pub value: f64,
    pub batch_size: usize,
    pub aggregate: Aggregate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HparamResult {
    pub reduction_factor: Vec<HparamRow>,
    pub epsilon: Vec<HparamRow>,
}

/// A validated configuration with its corpus loaded.
#[derive(Clone, Debug)]
pub struct Experiment {
    config: ExperimentConfig,
    corpus: Option<Corpus>,
    stats: Option<BigramStats>,
}

impl Experiment {
    /// Validates `config` and loads the corpus. A model `vocab_size` of 0 is
    /// replaced by the corpus vocabulary size.
    pub fn new(mut config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let corpus = match &config.corpus_path {
            Some(p) => Some(Corpus::load(p, config.model.max_seq_len)?),
            None => None,
        };
        if let Some(c) = &corpus {
            if config.model.vocab_size == 0 {
                config.model.vocab_size = c.vocab_size();
            } else if config.model.vocab_size < c.vocab_size() {
                return Err(Error::InvalidConfig(format!(
                    "model.vocab_size {} is below the corpus vocabulary {}",
                    config.model.vocab_size,
                    c.vocab_size()
                )));
            }
        }
        config.model.validate()?;
        let stats = if config.attack.filters.grammar {
            let c = corpus
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("the grammar filter needs a corpus".into()))?;
            Some(c.bigram_stats(config.attack.grammar_floor))
        } else {
            None
        };
        Ok(Experiment {
            config,
            corpus,
            stats,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn corpus(&self) -> Option<&Corpus> {
        self.corpus.as_ref()
    }

    fn position_cap(&self) -> usize {
        match self.config.data.max_positions {
            0 => self.config.model.d_bottleneck(),
            n => n,
        }
    }

    /// The private batch and labels of grid point `(batch_size, round)`.
    pub fn draw_batch(
        &self,
        batch_size: usize,
        round: usize,
    ) -> Result<(Vec<Vec<usize>>, Vec<u8>)> {
        let mut rng = derive_rng(self.config.seed, &[batch_size as u64, round as u64]);
        let batch = match &self.corpus {
            Some(c) => {
                if batch_size > c.len() {
                    return Err(Error::InvalidConfig(format!(
                        "batch size {batch_size} exceeds the {} corpus sentences",
                        c.len()
                    )));
                }
                sample(&mut rng, c.len(), batch_size)
                    .into_iter()
                    .map(|i| c.sequences()[i].clone())
                    .collect()
            }
            None => {
                let data = &self.config.data;
                let per_sentence = self.position_cap() / batch_size;
                if per_sentence < 2 {
                    return Err(Error::InvalidConfig(format!(
                        "batch size {batch_size} leaves no room for words under {} positions",
                        self.position_cap()
                    )));
                }
                let max_words = data.max_words.min(per_sentence - 1);
                let sampler = SentenceSampler {
                    vocab_size: self.config.model.vocab_size,
                    min_words: data.min_words.min(max_words),
                    max_words,
                    distinct_across_batch: data.distinct_across_batch,
                };
                sampler.batch(&mut rng, batch_size)?
            }
        };
        let labels = random_labels(&mut rng, batch_size);
        Ok((batch, labels))
    }

    fn texts(&self, batch: &[Vec<usize>]) -> Vec<String> {
        batch
            .iter()
            .map(|s| match &self.corpus {
                Some(c) => c.decode(s),
                None => s
                    .iter()
                    .map(|t| t.to_string())
                    .collect::<Vec<_>>()
                    .join(" "),
            })
            .collect()
    }

    /// Runs and scores one grid point.
    pub fn run_point(
        &self,
        model: &Model,
        attack: &AttackConfig,
        defense: &DefenseConfig,
        batch_size: usize,
        round: usize,
    ) -> Result<RunRecord> {
        let (batch, labels) = self.draw_batch(batch_size, round)?;
        let texts = self.texts(&batch);
        let dataset = ClientDataset::new(batch, labels, texts)?;
        let indices: Vec<usize> = (0..batch_size).collect();
        let update = client_round(model, &dataset, &indices, round as u64)?;
        let mut defense = defense.clone();
        defense.seed = stream_id(&[
            self.config.seed,
            defense.seed,
            batch_size as u64,
            round as u64,
        ]);
        let update = apply_defense(&update, &defense)?;
        let stats = self.stats.as_ref().map(|s| s as &dyn SequencePredicate);
        let output = match run_attack(model, &update, attack, stats) {
            Ok(o) => o,
            Err(Error::NoGradientSignal(what)) => AttackOutput::no_signal(
                attack,
                &update,
                format!("no usable gradient signal in {what}"),
            ),
            Err(e) => return Err(e),
        };
        let vocab = self.corpus.as_ref().map(|c| c.vocabulary());
        let mut report = score_attack(&output, &dataset.sequences, vocab)?;
        if !self.config.record_timings {
            report.timings = None;
        }
        Ok(RunRecord {
            batch_size,
            round,
            report,
        })
    }

    fn grid(
        &self,
        model_config: &ModelConfig,
        attack: &AttackConfig,
        defense: &DefenseConfig,
        batch_sizes: &[usize],
    ) -> Result<Vec<RunRecord>> {
        let model = Model::new(model_config.clone())?;
        let points: Vec<(usize, usize)> = batch_sizes
            .iter()
            .flat_map(|&b| (0..self.config.rounds).map(move |r| (b, r)))
            .collect();
        points
            .par_iter()
            .map(|&(b, r)| self.run_point(&model, attack, defense, b, r))
            .collect()
    }

    fn aggregate(&self, runs: &[RunRecord]) -> Result<Aggregate> {
        Aggregate::from_reports(
            runs.iter().map(|r| &r.report),
            self.config.success_threshold,
        )
    }

    /// Every batch size and round under the configured defense.
    pub fn attack_grid(&self) -> Result<Vec<RunRecord>> {
        let c = &self.config;
        self.grid(&c.model, &c.attack, &c.defense, &c.batch_sizes)
    }

    /// One row per noise multiplier, then one per prune rate.
    pub fn defense_sweep(&self) -> Result<Vec<DefenseRow>> {
        let c = &self.config;
        let s = &c.defense_sweep;
        if s.sigmas.is_empty() && s.prune_rates.is_empty() {
            return Err(Error::InvalidConfig(
                "defense sweep grids are both empty".into(),
            ));
        }
        if !(s.sigma_scale > 0.0) || !s.sigma_scale.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "sigma_scale must be positive, got {}",
                s.sigma_scale
            )));
        }
        let mut settings: Vec<(&str, f64, DefenseConfig)> = Vec::new();
        for &sigma in &s.sigmas {
            settings.push((
                "dp",
                sigma,
                DefenseConfig::dp(sigma * s.sigma_scale, s.clip_bound, c.defense.seed),
            ));
        }
        for &rate in &s.prune_rates {
            settings.push(("prune", rate, DefenseConfig::prune(rate)));
        }
        for (_, _, d) in &settings {
            d.validate()?;
        }
        settings
            .iter()
            .map(|(name, parameter, d)| {
                let runs = self.grid(&c.model, &c.attack, d, &c.batch_sizes)?;
                Ok(DefenseRow {
                    defense: name.to_string(),
                    parameter: *parameter,
                    aggregate: self.aggregate(&runs)?,
                })
            })
            .collect()
    }

    fn rows_by_batch(
        &self,
        value: f64,
        runs: &[RunRecord],
        batch_sizes: &[usize],
    ) -> Result<Vec<HparamRow>> {
        batch_sizes
            .iter()
            .map(|&b| {
                let subset: Vec<RunRecord> =
                    runs.iter().filter(|r| r.batch_size == b).cloned().collect();
                Ok(HparamRow {
                    value,
                    batch_size: b,
                    aggregate: self.aggregate(&subset)?,
                })
            })
            .collect()
    }

    /// Success against the reduction factor and against the span threshold.
    /// Batches are drawn under the base model's position budget, so every
    /// reduction factor sees the same batches.
    pub fn hparam_sweep(&self) -> Result<HparamResult> {
        let c = &self.config;
        let h = &c.hparam_sweep;
        if h.reduction_factors.is_empty() && h.epsilons.is_empty() {
            return Err(Error::InvalidConfig(
                "hyperparameter grids are both empty".into(),
            ));
        }
        let check_sizes = |sizes: &[usize], what: &str| {
            if sizes.is_empty() || sizes.contains(&0) {
                return Err(Error::InvalidConfig(format!(
                    "{what} must be non-empty and positive"
                )));
            }
            Ok(())
        };
        let mut reduction_factor = Vec::new();
        if !h.reduction_factors.is_empty() {
            check_sizes(
                &h.reduction_factor_batch_sizes,
                "reduction_factor_batch_sizes",
            )?;
            for &rf in &h.reduction_factors {
                let mc = ModelConfig {
                    reduction_factor: rf,
                    ..c.model.clone()
                };
                mc.validate()?;
                let runs =
                    self.grid(&mc, &c.attack, &c.defense, &h.reduction_factor_batch_sizes)?;
                reduction_factor.extend(self.rows_by_batch(
                    rf as f64,
                    &runs,
                    &h.reduction_factor_batch_sizes,
                )?);
            }
        }
        let mut epsilon = Vec::new();
        if !h.epsilons.is_empty() {
            check_sizes(&h.epsilon_batch_sizes, "epsilon_batch_sizes")?;
            for &eps in &h.epsilons {
                let attack = AttackConfig {
                    epsilon_ea: eps,
                    epsilon_la: eps,
                    ..c.attack.clone()
                };
                attack.validate()?;
                let runs = self.grid(&c.model, &attack, &c.defense, &h.epsilon_batch_sizes)?;
                epsilon.extend(self.rows_by_batch(eps, &runs, &h.epsilon_batch_sizes)?);
            }
        }
        Ok(HparamResult {
            reduction_factor,
            epsilon,
        })
    }

    /// The capacity sweep on synthetic batches, undefended.
    pub fn capacity(&self) -> Result<Vec<CapacityReport>> {
        let c = &self.config;
        let sampler = SentenceSampler {
            vocab_size: c.model.vocab_size,
            min_words: c.capacity.min_words,
            max_words: c.capacity.max_words,
            distinct_across_batch: false,
        };
        capacity_sweep(
            &c.model,
            &c.capacity.batch_sizes,
            c.capacity.rounds,
            c.seed,
            &sampler,
            &c.attack,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            batch_sizes: vec![1, 2],
            rounds: 2,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn batches_respect_position_budget() {
        let e = Experiment::new(small()).unwrap();
        for b in [1, 2, 4, 8, 16] {
            let (batch, labels) = e.draw_batch(b, 0).unwrap();
            assert_eq!(batch.len(), b);
            assert_eq!(labels.len(), b);
            assert!(batch.iter().map(Vec::len).sum::<usize>() <= 32);
        }
        assert!(e.draw_batch(32, 0).is_err());
        assert_eq!(e.draw_batch(4, 1).unwrap(), e.draw_batch(4, 1).unwrap());
    }

    #[test]
    fn small_grid_is_perfect_and_ordered() {
        let e = Experiment::new(small()).unwrap();
        let runs = e.attack_grid().unwrap();
        let keys: Vec<(usize, usize)> = runs.iter().map(|r| (r.batch_size, r.round)).collect();
        assert_eq!(keys, vec![(1, 0), (1, 1), (2, 0), (2, 1)]);
        assert!(runs.iter().all(|r| r.report.corpus_rouge1 == 100.0));
        assert!(runs.iter().all(|r| r.report.timings.is_none()));
    }

    #[test]
    fn aggregate_counts_threshold() {
        let e = Experiment::new(small()).unwrap();
        let mut runs = e.attack_grid().unwrap();
        runs[0].report.corpus_rouge1 = 50.0;
        let a = Aggregate::from_reports(runs.iter().map(|r| &r.report), 99.0).unwrap();
        assert_eq!(a.runs, 4);
        assert_eq!(a.success_rate, 0.75);
        assert!(Aggregate::from_reports(std::iter::empty(), 99.0).is_err());
    }
}
