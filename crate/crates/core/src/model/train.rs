//! SGD on the trainable tensors with optionally defended gradients, used to
//! measure what a defense costs in model utility.

use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{Error, Result};
use crate::fedsim::DefenseConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub sequences: Vec<Vec<usize>>,
    pub labels: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl LabeledSet {
    fn check(&self, what: &'static str) -> Result<()> {
        if self.sequences.is_empty() {
            return Err(Error::Empty(what));
        }
        if self.sequences.len() != self.labels.len() {
            return Err(Error::DimensionMismatch {
                expected: self.sequences.len(),
                found: self.labels.len(),
            });
        }
        Ok(())
    }

    /// Fraction of examples whose logit sign matches the label.
    pub fn accuracy(&self, model: &Model) -> Result<f64> {
        self.check("evaluation set")?;
        let mut correct = 0usize;
        for (s, &y) in self.sequences.iter().zip(&self.labels) {
            let predicted = u8::from(model.logit(s)? > 0.0);
            correct += usize::from(predicted == y);
        }
        Ok(correct as f64 / self.sequences.len() as f64)
    }
}

/// Runs `config.steps` SGD steps over `train` (deterministic cyclic
/// minibatches), passing every step's gradients through `defense`, and
/// returns accuracy on `held_out`.
pub fn train_utility(
    model: &mut Model,
    train: &LabeledSet,
    held_out: &LabeledSet,
    config: &TrainConfig,
    defense: &DefenseConfig,
) -> Result<f64> {
    train.check("training set")?;
    held_out.check("held-out set")?;
    if config.steps == 0 || config.batch_size == 0 {
        return Err(Error::InvalidConfig(
            "steps and batch_size must be at least 1".into(),
        ));
    }
    let positives = train.labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == train.labels.len() {
        return Err(Error::InvalidConfig(
            "training set contains a single class".into(),
        ));
    }
    defense.validate()?;
    let n = train.sequences.len();
    for step in 0..config.steps {
        let idx: Vec<usize> = (0..config.batch_size)
            .map(|i| (step * config.batch_size + i) % n)
            .collect();
        let batch: Vec<Vec<usize>> = idx.iter().map(|&i| train.sequences[i].clone()).collect();
        let labels: Vec<u8> = idx.iter().map(|&i| train.labels[i]).collect();
        let mut g = model.gradients(&batch, &labels)?;
        {
            let mut tensors = g.embedding_adapter.tensors_mut();
            tensors.extend(g.layer_adapter.tensors_mut());
            tensors.push(g.head.weight.as_mut_slice());
            tensors.push(std::slice::from_mut(&mut g.head.bias));
            defense.apply_to_tensors(&mut tensors, step as u64)?;
        }
        model.apply_sgd(config.lr, &g);
    }
    held_out.accuracy(model)
}
