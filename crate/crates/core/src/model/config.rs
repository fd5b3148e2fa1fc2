use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Causal (GPT-style) or full-context (BERT-style) self-attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    Unidirectional,
    Bidirectional,
}

/// Where the positional table is added relative to the embedding adapter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalEncoding {
    None,
    AdditiveBeforeEmbeddingAdapter,
    AdditiveAfterEmbeddingAdapter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Gelu,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            // tanh approximation
            Activation::Gelu => {
                let inner = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
                0.5 * x * (1.0 + inner.tanh())
            }
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let inner = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
                let t = inner.tanh();
                let dinner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
            }
        }
    }
}

pub const REDUCTION_FACTORS: [usize; 4] = [1, 2, 4, 8];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_hidden: usize,
    pub reduction_factor: usize,
    pub attention_mode: AttentionMode,
    pub positional_encoding: PositionalEncoding,
    pub max_seq_len: usize,
    pub adapter_activation: Activation,
    pub adapter_depth: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 200,
            d_hidden: 64,
            reduction_factor: 2,
            attention_mode: AttentionMode::Unidirectional,
            positional_encoding: PositionalEncoding::AdditiveBeforeEmbeddingAdapter,
            max_seq_len: 16,
            adapter_activation: Activation::Relu,
            adapter_depth: 1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Width of the adapter bottleneck, `d_hidden / reduction_factor`.
    pub fn d_bottleneck(&self) -> usize {
        self.d_hidden / self.reduction_factor.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive".into());
        }
        if self.d_hidden == 0 {
            return bad("d_hidden must be positive".into());
        }
        if !REDUCTION_FACTORS.contains(&self.reduction_factor) {
            return bad(format!(
                "reduction_factor must be one of {REDUCTION_FACTORS:?}, got {}",
                self.reduction_factor
            ));
        }
        if !self.d_hidden.is_multiple_of(self.reduction_factor) {
            return bad(format!(
                "d_hidden {} is not divisible by reduction_factor {}",
                self.d_hidden, self.reduction_factor
            ));
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be at least 1".into());
        }
        if self.adapter_depth == 0 {
            return bad("adapter_depth must be at least 1".into());
        }
        Ok(())
    }
}
