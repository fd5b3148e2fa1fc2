//! Gradient-sharing defenses: clipped Gaussian noise and magnitude pruning.
//! Both act per tensor and never change shapes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::GradientUpdate;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseKind {
    None,
    Dp,
    Prune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseConfig {
    pub kind: DefenseKind,
    /// Noise multiplier; noise std is `sigma · clip_bound`.
    pub sigma: f64,
    pub clip_bound: f64,
    /// Fraction of entries zeroed per tensor.
    pub prune_rate: f64,
    pub seed: u64,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        DefenseConfig {
            kind: DefenseKind::None,
            sigma: 0.0,
            clip_bound: 1.0,
            prune_rate: 0.0,
            seed: 0,
        }
    }
}

impl DefenseConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn dp(sigma: f64, clip_bound: f64, seed: u64) -> Self {
        DefenseConfig {
            kind: DefenseKind::Dp,
            sigma,
            clip_bound,
            seed,
            ..Self::default()
        }
    }

    pub fn prune(rate: f64) -> Self {
        DefenseConfig {
            kind: DefenseKind::Prune,
            prune_rate: rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DefenseKind::None => Ok(()),
            DefenseKind::Dp => {
                if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "sigma must be >= 0, got {}",
                        self.sigma
                    )));
                }
                if !(self.clip_bound > 0.0) || !self.clip_bound.is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "clip_bound must be > 0, got {}",
                        self.clip_bound
                    )));
                }
                Ok(())
            }
            DefenseKind::Prune => {
                if !(0.0..1.0).contains(&self.prune_rate) {
                    return Err(Error::InvalidConfig(format!(
                        "prune_rate must lie in [0, 1), got {}",
                        self.prune_rate
                    )));
                }
                Ok(())
            }
        }
    }

    /// Applies this defense to raw tensors in order. `salt` separates noise
    /// streams for repeated applications under one config (e.g. training steps).
    pub fn apply_to_tensors(&self, tensors: &mut [&mut [f64]], salt: u64) -> Result<()> {
        self.validate()?;
        match self.kind {
            DefenseKind::None => {}
            DefenseKind::Dp => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(salt);
                let std = self.sigma * self.clip_bound;
                for t in tensors.iter_mut() {
                    clip_tensor(t, self.clip_bound);
                    if std > 0.0 {
                        for x in t.iter_mut() {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            *x += std * z;
                        }
                    }
                }
            }
            DefenseKind::Prune => {
                for t in tensors.iter_mut() {
                    prune_tensor(t, self.prune_rate);
                }
            }
        }
        Ok(())
    }
}

/// Scales `t` by `min(1, bound / ‖t‖₂)`.
pub fn clip_tensor(t: &mut [f64], bound: f64) {
    let n = crate::linalg::norm(t);
    if n > bound {
        let c = bound / n;
        t.iter_mut().for_each(|x| *x *= c);
    }
}

/// Zeroes the `⌊rate·len⌋` smallest-magnitude entries; equal magnitudes are
/// pruned in index order.
pub fn prune_tensor(t: &mut [f64], rate: f64) {
    let count = (rate * t.len() as f64).floor() as usize;
    if count == 0 {
        return;
    }
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.sort_by(|&a, &b| t[a].abs().total_cmp(&t[b].abs()).then(a.cmp(&b)));
    for &i in &order[..count] {
        t[i] = 0.0;
    }
}

fn tensors_of(update: &mut GradientUpdate) -> Vec<&mut [f64]> {
    let mut v = update.embedding_adapter.tensors_mut();
    v.extend(update.layer_adapter.tensors_mut());
    v
}

/// Per-tensor clipping followed by seeded Gaussian noise `N(0, (σ·C)²)`.
pub fn apply_dp(update: &GradientUpdate, d: &DefenseConfig) -> Result<GradientUpdate> {
    if d.kind != DefenseKind::Dp {
        return Err(Error::InvalidConfig(
            "apply_dp needs a dp defense config".into(),
        ));
    }
    let mut out = update.clone();
    let salt = out.round_id;
    d.apply_to_tensors(&mut tensors_of(&mut out), salt)?;
    Ok(out)
}

/// Per-tensor magnitude pruning.
pub fn apply_pruning(update: &GradientUpdate, d: &DefenseConfig) -> Result<GradientUpdate> {
    if d.kind != DefenseKind::Prune {
        return Err(Error::InvalidConfig(
            "apply_pruning needs a prune defense config".into(),
        ));
    }
    let mut out = update.clone();
    d.apply_to_tensors(&mut tensors_of(&mut out), 0)?;
    Ok(out)
}

/// Dispatches on `d.kind`; `None` returns the update unchanged.
pub fn apply_defense(update: &GradientUpdate, d: &DefenseConfig) -> Result<GradientUpdate> {
    match d.kind {
        DefenseKind::None => Ok(update.clone()),
        DefenseKind::Dp => apply_dp(update, d),
        DefenseKind::Prune => apply_pruning(update, d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prune_counts_and_ties() {
        let mut t = vec![3.0, -1.0, 1.0, 0.5, -4.0, 1.0, 2.0, 0.0, 9.0, -0.25];
        prune_tensor(&mut t, 0.9);
        assert_eq!(t.iter().filter(|x| **x == 0.0).count(), 9);
        assert_eq!(t[8], 9.0);

        let mut t = vec![1.0, -1.0, 1.0, 2.0];
        prune_tensor(&mut t, 0.5);
        assert_eq!(t, vec![0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn prune_rate_zero_is_identity() {
        let mut t = vec![0.3, -0.1, 0.0];
        prune_tensor(&mut t, 0.0);
        assert_eq!(t, vec![0.3, -0.1, 0.0]);
    }

    #[test]
    fn clip_only_shrinks() {
        let mut t = vec![3.0, 4.0];
        clip_tensor(&mut t, 1.0);
        assert!((crate::linalg::norm(&t) - 1.0).abs() < 1e-15);
        let mut t = vec![0.3, 0.4];
        clip_tensor(&mut t, 1.0);
        assert_eq!(t, vec![0.3, 0.4]);
    }

    #[test]
    fn validation() {
        assert!(DefenseConfig::dp(-0.1, 1.0, 0).validate().is_err());
        assert!(DefenseConfig::dp(0.1, 0.0, 0).validate().is_err());
        assert!(DefenseConfig::prune(1.0).validate().is_err());
        assert!(DefenseConfig::prune(-0.5).validate().is_err());
        assert!(DefenseConfig::prune(0.999).validate().is_ok());
    }
}
