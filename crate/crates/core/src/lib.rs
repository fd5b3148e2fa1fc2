//! Gradient inversion against adapter-based federated fine-tuning, on a
//! deterministic toy transformer.
//!
//! A client fine-tunes only two bottleneck adapters and shares their
//! gradients. The weight/bias gradient ratios of each adapter's down layer
//! span that adapter's inputs, which is enough to recover first the set of
//! tokens in the batch ([`attack::infer_word_bag`]) and then whole sentences
//! ([`attack::reconstruct`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod capacity;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod fedsim;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod subspace;
pub mod synth;

pub use attack::{AttackConfig, AttackReport, Candidate, WordBag};
pub use error::{Error, Result};
pub use fedsim::{client_round, DefenseConfig, GradientUpdate};
pub use linalg::{DenseMatrix, Vector};
pub use model::{Model, ModelConfig};
pub use subspace::Subspace;
