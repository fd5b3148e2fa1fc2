//! TOML experiment configuration with dotted-path overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::error::{Error, Result};
use crate::fedsim::DefenseConfig;
use crate::model::ModelConfig;

/// How synthetic batches are drawn when no corpus is configured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub min_words: usize,
    pub max_words: usize,
    /// Cap on the summed sentence lengths (end tokens included) of one batch;
    /// sentences are shortened to fit. Zero means the adapter bottleneck width.
    pub max_positions: usize,
    /// Draw all words of a batch without replacement.
    pub distinct_across_batch: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            min_words: 2,
            max_words: 7,
            max_positions: 0,
            distinct_across_batch: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseSweepConfig {
    pub sigmas: Vec<f64>,
    pub prune_rates: Vec<f64>,
    /// Nominal noise multipliers are multiplied by this factor.
    pub sigma_scale: f64,
    pub clip_bound: f64,
}

impl Default for DefenseSweepConfig {
    fn default() -> Self {
        DefenseSweepConfig {
            sigmas: vec![0.0, 0.01, 1.5, 3.0],
            prune_rates: vec![0.0, 0.9, 0.99, 0.999],
            sigma_scale: 1e-6,
            clip_bound: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HparamSweepConfig {
    pub reduction_factors: Vec<usize>,
    /// Batch sizes for the reduction-factor table.
    pub reduction_factor_batch_sizes: Vec<usize>,
    /// Values used for both span thresholds.
    pub epsilons: Vec<f64>,
    pub epsilon_batch_sizes: Vec<usize>,
}

impl Default for HparamSweepConfig {
    fn default() -> Self {
        HparamSweepConfig {
            reduction_factors: vec![1, 2, 4, 8],
            reduction_factor_batch_sizes: vec![8],
            epsilons: vec![1e-4, 1e-1],
            epsilon_batch_sizes: vec![2, 8],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacityConfig {
    pub batch_sizes: Vec<usize>,
    pub rounds: usize,
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for CapacityConfig {
    fn default() -> Self {
        CapacityConfig {
            batch_sizes: (0..9).map(|i| 1 << i).collect(),
            rounds: 5,
            min_words: 4,
            max_words: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// One sentence per line. Without it, batches are synthetic.
    pub corpus_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub batch_sizes: Vec<usize>,
    pub rounds: usize,
    /// Corpus ROUGE-1 (percent) a run needs to count as a success.
    pub success_threshold: f64,
    /// Keep wall-clock timings in outputs. Off by default so that reruns are
    /// byte-identical.
    pub record_timings: bool,
    pub model: ModelConfig,
    pub attack: AttackConfig,
    pub defense: DefenseConfig,
    pub data: DataConfig,
    pub defense_sweep: DefenseSweepConfig,
    pub hparam_sweep: HparamSweepConfig,
    pub capacity: CapacityConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            corpus_path: None,
            output_dir: PathBuf::from("out"),
            batch_sizes: vec![1, 2, 4, 8],
            rounds: 5,
            success_threshold: 99.0,
            record_timings: false,
            model: ModelConfig::default(),
            attack: AttackConfig::default(),
            defense: DefenseConfig::default(),
            data: DataConfig::default(),
            defense_sweep: DefenseSweepConfig::default(),
            hparam_sweep: HparamSweepConfig::default(),
            capacity: CapacityConfig::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Sets `dotted.key = value` in `table`, creating sections as needed.
pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid(format!("malformed override key {key:?}")));
    }
    let (last, sections) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for s in sections {
        let entry = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| invalid(format!("override {key:?}: {s:?} is not a section")))?;
    }
    cur.insert(last.to_string(), parse_value(value));
    Ok(())
}

/// Splits `key=value`.
pub fn parse_override(spec: &str) -> Result<(String, String)> {
    let (k, v) = spec
        .split_once('=')
        .ok_or_else(|| invalid(format!("override {spec:?} is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| invalid(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads a config file. A relative `corpus_path` is taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        if let (Some(c), Some(dir)) = (&cfg.corpus_path, path.parent()) {
            if c.is_relative() {
                cfg.corpus_path = Some(dir.join(c));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| invalid(e.to_string()))
    }

    /// Checks everything that does not need the corpus.
    pub fn validate(&self) -> Result<()> {
        self.attack.validate()?;
        self.defense.validate()?;
        if self.attack.mode != self.model.attention_mode {
            return Err(invalid(format!(
                "attack.mode {:?} differs from model.attention_mode {:?}",
                self.attack.mode, self.model.attention_mode
            )));
        }
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            return Err(invalid("batch_sizes must be non-empty and positive"));
        }
        if self.rounds == 0 {
            return Err(invalid("rounds must be at least 1"));
        }
        if !(0.0..=100.0).contains(&self.success_threshold) {
            return Err(invalid("success_threshold must be in [0, 100]"));
        }
        if self.data.min_words == 0 || self.data.min_words > self.data.max_words {
            return Err(invalid("data needs 1 <= min_words <= max_words"));
        }
        if let Some(p) = &self.corpus_path {
            if !p.is_file() {
                return Err(invalid(format!("corpus {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AttentionMode;

    #[test]
    fn overrides_reach_nested_fields() {
        let over = vec![
            ("attack.beam_width".to_string(), "7".to_string()),
            (
                "model.attention_mode".to_string(),
                "bidirectional".to_string(),
            ),
            ("attack.mode".to_string(), "\"bidirectional\"".to_string()),
            ("batch_sizes".to_string(), "[3, 5]".to_string()),
        ];
        let cfg =
            ExperimentConfig::from_toml_str("seed = 4\n[attack]\nmax_len = 5\n", &over).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.attack.beam_width, 7);
        assert_eq!(cfg.attack.max_len, 5);
        assert_eq!(cfg.model.attention_mode, AttentionMode::Bidirectional);
        assert_eq!(cfg.batch_sizes, vec![3, 5]);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_and_inconsistent() {
        assert!(ExperimentConfig::from_toml_str("bogus = 1", &[]).is_err());
        assert!(ExperimentConfig::from_toml_str("[model]\nwidth = 3", &[]).is_err());
        let cfg =
            ExperimentConfig::from_toml_str("[model]\nattention_mode = \"bidirectional\"", &[])
                .unwrap();
        assert!(cfg.validate().is_err());
        assert!(parse_override("novalue").is_err());
        let mut t = toml::Table::new();
        assert!(apply_override(&mut t, "a..b", "1").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text, &[]).unwrap(), cfg);
    }
}
