//! Weight-to-bias gradient ratios of an adapter's down layer.
//!
//! For a down neuron `j` with pre-activation `w_j·x + b_j`, every position `t`
//! contributes `δ_jt·x_t` to `∇w_j` and `δ_jt` to `∇b_j`. The ratio
//! `∇w_j / ∇b_j` is therefore a combination of the inputs that reached the
//! neuron, and exactly one input when only one position activated it.

use serde::{Deserialize, Serialize};

use super::AttackConfig;
use crate::error::{Error, Result};
use crate::fedsim::GradientUpdate;
use crate::model::AdapterGradients;
use crate::subspace::Subspace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    DeadOrTinyBiasGrad,
    NonFiniteRatio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RwbgSet {
    /// Neuron index and its ratio vector.
    pub vectors: Vec<(usize, Vec<f64>)>,
    pub skipped_neurons: Vec<(usize, SkipReason)>,
}

impl RwbgSet {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.vectors.iter().map(|(_, v)| v.as_slice())
    }
}

/// Ratio vectors of every down neuron whose bias gradient exceeds
/// `floor · max_j |∇b_j|`. The relative floor makes the result independent
/// of any positive rescaling of the gradients.
pub fn compute_rwbg(grads: &AdapterGradients, floor: f64) -> Result<RwbgSet> {
    let w = &grads.down.weight;
    let b = &grads.down.bias;
    if w.rows() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: w.rows(),
            found: b.len(),
        });
    }
    let largest = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let cutoff = floor * largest;
    let mut vectors = Vec::new();
    let mut skipped_neurons = Vec::new();
    for (j, &bj) in b.iter().enumerate() {
        if bj == 0.0 || bj.abs() <= cutoff {
            skipped_neurons.push((j, SkipReason::DeadOrTinyBiasGrad));
            continue;
        }
        let v: Vec<f64> = w.row(j).iter().map(|x| x / bj).collect();
        if v.iter().any(|x| !x.is_finite()) {
            skipped_neurons.push((j, SkipReason::NonFiniteRatio));
            continue;
        }
        vectors.push((j, v));
    }
    Ok(RwbgSet {
        vectors,
        skipped_neurons,
    })
}

/// Subspaces recovered from both adapters of one update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSubspaces {
    pub embedding: Subspace,
    pub layer: Subspace,
    pub embedding_skipped: usize,
    pub layer_skipped: usize,
}

pub fn build_attack_subspaces(
    update: &GradientUpdate,
    config: &AttackConfig,
) -> Result<AttackSubspaces> {
    config.validate()?;
    let span = |g: &AdapterGradients, what: &'static str| -> Result<(Subspace, usize)> {
        let set = compute_rwbg(g, config.bias_grad_floor)?;
        if set.is_empty() {
            return Err(Error::NoGradientSignal(what));
        }
        let s = Subspace::orthonormalize(g.down.weight.cols(), set.iter(), config.drop_tolerance)?;
        Ok((s, set.skipped_neurons.len()))
    };
    let (embedding, embedding_skipped) = span(&update.embedding_adapter, "embedding adapter")?;
    let (layer, layer_skipped) = span(&update.layer_adapter, "layer adapter")?;
    Ok(AttackSubspaces {
        embedding,
        layer,
        embedding_skipped,
        layer_skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use crate::model::Linear;

    fn grads(w: Vec<f64>, b: Vec<f64>, cols: usize) -> AdapterGradients {
        let rows = b.len();
        AdapterGradients {
            down: Linear {
                weight: DenseMatrix::from_vec(rows, cols, w).unwrap(),
                bias: b,
            },
            hidden: vec![],
            up: Linear::zeros(cols, rows),
        }
    }

    #[test]
    fn ratio_and_skips() {
        let g = grads(vec![2.0, 4.0, 0.0, 0.0, 1.0, 1.0], vec![2.0, 0.0, -0.5], 2);
        let set = compute_rwbg(&g, 1e-12).unwrap();
        assert_eq!(
            set.vectors,
            vec![(0, vec![1.0, 2.0]), (2, vec![-2.0, -2.0])]
        );
        assert_eq!(
            set.skipped_neurons,
            vec![(1, SkipReason::DeadOrTinyBiasGrad)]
        );
    }

    #[test]
    fn floor_is_relative() {
        let g = grads(vec![1.0, 1.0, 1.0, 1.0], vec![1.0, 1e-13], 2);
        assert_eq!(compute_rwbg(&g, 1e-12).unwrap().len(), 1);
        let mut tiny = g.clone();
        tiny.scale(1e-20);
        assert_eq!(compute_rwbg(&tiny, 1e-12).unwrap().len(), 1);
    }

    #[test]
    fn shape_mismatch() {
        let mut g = grads(vec![1.0, 1.0], vec![1.0], 2);
        g.down.bias.push(1.0);
        assert!(compute_rwbg(&g, 1e-12).is_err());
    }
}
