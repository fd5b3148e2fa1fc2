//! In-process simulation of one federated exchange: a client computes adapter
//! gradients on a private batch and ships a (possibly defended)
//! [`GradientUpdate`], which is all the honest-but-curious server observes.

pub mod defense;
pub mod wire;

use serde::{Deserialize, Serialize};

pub use defense::{
    apply_defense, apply_dp, apply_pruning, clip_tensor, prune_tensor, DefenseConfig, DefenseKind,
};
pub use wire::{deserialize_update, serialize_update};

use crate::error::{Error, Result};
use crate::model::{AdapterGradients, Model};

/// A client's private data. `source_texts` is ground truth for scoring only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub sequences: Vec<Vec<usize>>,
    pub labels: Vec<u8>,
    pub source_texts: Vec<String>,
}

impl ClientDataset {
    pub fn new(
        sequences: Vec<Vec<usize>>,
        labels: Vec<u8>,
        source_texts: Vec<String>,
    ) -> Result<Self> {
        if sequences.len() != labels.len() || sequences.len() != source_texts.len() {
            return Err(Error::InvalidConfig(format!(
                "dataset field lengths differ: {} sequences, {} labels, {} texts",
                sequences.len(),
                labels.len(),
                source_texts.len()
            )));
        }
        if sequences.iter().any(|s| s.is_empty()) {
            return Err(Error::Empty("dataset sequence"));
        }
        Ok(ClientDataset {
            sequences,
            labels,
            source_texts,
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// What the server receives from one client in one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientUpdate {
    pub embedding_adapter: AdapterGradients,
    pub layer_adapter: AdapterGradients,
    pub batch_size: usize,
    pub round_id: u64,
}

impl GradientUpdate {
    /// Multiplies every tensor by `c`.
    pub fn scaled(&self, c: f64) -> GradientUpdate {
        let mut out = self.clone();
        out.embedding_adapter.scale(c);
        out.layer_adapter.scale(c);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.embedding_adapter.is_finite() && self.layer_adapter.is_finite()
    }

    /// Shapes agree with the adapters of `model`.
    pub fn matches_model(&self, model: &Model) -> bool {
        self.embedding_adapter
            .same_shape(&AdapterGradients::zeros_like(model.embedding_adapter()))
            && self
                .layer_adapter
                .same_shape(&AdapterGradients::zeros_like(model.layer_adapter()))
    }
}

/// Computes the adapter gradients of `model` on the selected examples.
pub fn client_round(
    model: &Model,
    dataset: &ClientDataset,
    batch_indices: &[usize],
    round_id: u64,
) -> Result<GradientUpdate> {
    if batch_indices.is_empty() {
        return Err(Error::Empty("batch selection"));
    }
    let mut batch = Vec::with_capacity(batch_indices.len());
    let mut labels = Vec::with_capacity(batch_indices.len());
    for &i in batch_indices {
        if i >= dataset.len() {
            return Err(Error::OutOfRange {
                what: "batch index",
                value: i,
                limit: dataset.len(),
            });
        }
        batch.push(dataset.sequences[i].clone());
        labels.push(dataset.labels[i]);
    }
    let g = model.adapter_gradients(&batch, &labels)?;
    Ok(GradientUpdate {
        embedding_adapter: g.embedding_adapter,
        layer_adapter: g.layer_adapter,
        batch_size: batch.len(),
        round_id,
    })
}
