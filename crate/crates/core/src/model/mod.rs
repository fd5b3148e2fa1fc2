//! Deterministic toy transformer: frozen embeddings and attention, trainable
//! embedding adapter, layer adapter and pooled logistic head.
//!
//! ```text
//! token ─► f0 (embedding [+PE]) ─► embedding adapter [+PE] ─► attention ─► layer adapter ─► mean pool ─► head
//! ```
//!
//! The embedding adapter sees `embed(token, position)`; the layer adapter sees
//! the post-attention hidden states. Those two input streams are what the
//! attack tries to recover from the adapter gradients.

mod adapter;
mod attention;
mod checkpoint;
mod config;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adapter::{Adapter, AdapterCache, AdapterGradients, Linear};
pub(crate) use attention::softmax;
pub use attention::AttentionLayer;
pub use checkpoint::CHECKPOINT_VERSION;
pub use config::{Activation, AttentionMode, ModelConfig, PositionalEncoding, REDUCTION_FACTORS};
pub use train::{train_utility, LabeledSet, TrainConfig};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, DenseMatrix, Vector};

/// Frozen token table `f0` and optional positional table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    table: DenseMatrix,
    positional: Option<DenseMatrix>,
}

impl EmbeddingTable {
    pub fn table(&self) -> &DenseMatrix {
        &self.table
    }

    pub fn positional(&self) -> Option<&DenseMatrix> {
        self.positional.as_ref()
    }
}

/// Mean-pooled binary logistic head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub weight: Vec<f64>,
    pub bias: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadGradients {
    pub weight: Vec<f64>,
    pub bias: f64,
}

/// Gradients of the batch-mean loss with respect to every trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub embedding_adapter: AdapterGradients,
    pub layer_adapter: AdapterGradients,
    pub head: HeadGradients,
}

/// Adapter inputs recorded for one example.
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleTrace {
    /// Embedding-adapter input per position.
    pub embedding_adapter_inputs: Vec<Vec<f64>>,
    /// Layer-adapter input (post-attention hidden state) per position.
    pub layer_adapter_inputs: Vec<Vec<f64>>,
    pub logit: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub examples: Vec<ExampleTrace>,
}

struct ExampleState {
    ea_in: Vec<Vec<f64>>,
    ea_cache: Vec<AdapterCache>,
    attn_cache: attention::AttentionCache,
    la_in: Vec<Vec<f64>>,
    la_cache: Vec<AdapterCache>,
    pooled: Vec<f64>,
    logit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    config: ModelConfig,
    embedding: EmbeddingTable,
    embedding_adapter: Adapter,
    attention: AttentionLayer,
    layer_adapter: Adapter,
    head: ClassifierHead,
}

// Independent ChaCha streams per component so that, e.g., toggling the
// positional table leaves every other weight unchanged.
const STREAM_EMBEDDING: u64 = 1;
const STREAM_POSITIONAL: u64 = 2;
const STREAM_EMBEDDING_ADAPTER: u64 = 3;
const STREAM_ATTENTION: u64 = 4;
const STREAM_LAYER_ADAPTER: u64 = 5;
const STREAM_HEAD: u64 = 6;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Model {
    /// Builds a model with every weight drawn uniformly from
    /// `(-1/√d_hidden, 1/√d_hidden)`; biases start at zero.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_hidden;
        let a = 1.0 / (d as f64).sqrt();
        let seed = config.seed;

        let mut rng = stream(seed, STREAM_EMBEDDING);
        let table = DenseMatrix::from_fn(config.vocab_size, d, |_, _| rng.random_range(-a..a));
        let positional = match config.positional_encoding {
            PositionalEncoding::None => None,
            _ => {
                let mut rng = stream(seed, STREAM_POSITIONAL);
                Some(DenseMatrix::from_fn(config.max_seq_len, d, |_, _| {
                    rng.random_range(-a..a)
                }))
            }
        };
        let r = config.d_bottleneck();
        let embedding_adapter = Adapter::init(
            d,
            r,
            config.adapter_depth,
            config.adapter_activation,
            a,
            &mut stream(seed, STREAM_EMBEDDING_ADAPTER),
        );
        let attention = AttentionLayer::init(
            d,
            config.attention_mode,
            a,
            &mut stream(seed, STREAM_ATTENTION),
        );
        let layer_adapter = Adapter::init(
            d,
            r,
            config.adapter_depth,
            config.adapter_activation,
            a,
            &mut stream(seed, STREAM_LAYER_ADAPTER),
        );
        let mut rng = stream(seed, STREAM_HEAD);
        let head = ClassifierHead {
            weight: (0..d).map(|_| rng.random_range(-a..a)).collect(),
            bias: 0.0,
        };
        Ok(Model {
            config,
            embedding: EmbeddingTable { table, positional },
            embedding_adapter,
            attention,
            layer_adapter,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn embedding(&self) -> &EmbeddingTable {
        &self.embedding
    }

    pub fn attention(&self) -> &AttentionLayer {
        &self.attention
    }

    pub fn embedding_adapter(&self) -> &Adapter {
        &self.embedding_adapter
    }

    pub fn layer_adapter(&self) -> &Adapter {
        &self.layer_adapter
    }

    pub fn head(&self) -> &ClassifierHead {
        &self.head
    }

    pub fn embedding_adapter_mut(&mut self) -> &mut Adapter {
        &mut self.embedding_adapter
    }

    pub fn layer_adapter_mut(&mut self) -> &mut Adapter {
        &mut self.layer_adapter
    }

    pub fn head_mut(&mut self) -> &mut ClassifierHead {
        &mut self.head
    }

    fn check_token(&self, token: usize) -> Result<()> {
        if token >= self.config.vocab_size {
            return Err(Error::OutOfRange {
                what: "token id",
                value: token,
                limit: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn check_sequence(&self, seq: &[usize]) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        if seq.len() > self.config.max_seq_len {
            return Err(Error::OutOfRange {
                what: "sequence length",
                value: seq.len(),
                limit: self.config.max_seq_len,
            });
        }
        seq.iter().try_for_each(|&t| self.check_token(t))
    }

    fn embed_raw(&self, token: usize, position: usize) -> Vec<f64> {
        let mut v = self.embedding.table.row(token).to_vec();
        if self.config.positional_encoding == PositionalEncoding::AdditiveBeforeEmbeddingAdapter {
            if let Some(p) = &self.embedding.positional {
                axpy(1.0, p.row(position), &mut v);
            }
        }
        v
    }

    /// The vector the embedding adapter receives for `token` at `position`.
    pub fn embed(&self, token: usize, position: usize) -> Result<Vector> {
        self.check_token(token)?;
        if position >= self.config.max_seq_len {
            return Err(Error::OutOfRange {
                what: "position",
                value: position,
                limit: self.config.max_seq_len,
            });
        }
        Ok(Vector::new(self.embed_raw(token, position)).expect("weights are finite"))
    }

    /// Embedding-adapter output (plus positional row when it is added after
    /// the adapter): the attention input for `token` at `position`.
    pub fn attention_input(&self, token: usize, position: usize) -> Vec<f64> {
        let x = self.embed_raw(token, position);
        let (mut h, _) = self.embedding_adapter.forward(&x);
        self.add_late_positional(&mut h, position);
        h
    }

    fn add_late_positional(&self, h: &mut [f64], position: usize) {
        if self.config.positional_encoding == PositionalEncoding::AdditiveAfterEmbeddingAdapter {
            if let Some(p) = &self.embedding.positional {
                axpy(1.0, p.row(position), h);
            }
        }
    }

    fn run_example(&self, seq: &[usize]) -> ExampleState {
        let mut ea_in = Vec::with_capacity(seq.len());
        let mut ea_cache = Vec::with_capacity(seq.len());
        let mut h = Vec::with_capacity(seq.len());
        for (pos, &tok) in seq.iter().enumerate() {
            let x = self.embed_raw(tok, pos);
            let (mut out, cache) = self.embedding_adapter.forward(&x);
            self.add_late_positional(&mut out, pos);
            ea_in.push(x);
            ea_cache.push(cache);
            h.push(out);
        }
        let (la_in, attn_cache) = self.attention.forward(&h);
        let d = self.config.d_hidden;
        let mut pooled = vec![0.0; d];
        let mut la_cache = Vec::with_capacity(seq.len());
        let inv = 1.0 / seq.len() as f64;
        for g in &la_in {
            let (y, cache) = self.layer_adapter.forward(g);
            axpy(inv, &y, &mut pooled);
            la_cache.push(cache);
        }
        let logit = dot(&self.head.weight, &pooled) + self.head.bias;
        ExampleState {
            ea_in,
            ea_cache,
            attn_cache,
            la_in,
            la_cache,
            pooled,
            logit,
        }
    }

    fn check_batch(&self, batch: &[Vec<usize>], labels: &[u8]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if batch.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: batch.len(),
                found: labels.len(),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidConfig(format!(
                "label must be 0 or 1, got {l}"
            )));
        }
        batch.iter().try_for_each(|s| self.check_sequence(s))
    }

    /// Mean binary logistic loss over the batch, plus the recorded adapter inputs.
    pub fn forward(&self, batch: &[Vec<usize>], labels: &[u8]) -> Result<(f64, ForwardTrace)> {
        self.check_batch(batch, labels)?;
        let mut loss = 0.0;
        let mut examples = Vec::with_capacity(batch.len());
        for (seq, &y) in batch.iter().zip(labels) {
            let st = self.run_example(seq);
            loss += logistic_loss(st.logit, y);
            examples.push(ExampleTrace {
                embedding_adapter_inputs: st.ea_in,
                layer_adapter_inputs: st.la_in,
                logit: st.logit,
            });
        }
        Ok((loss / batch.len() as f64, ForwardTrace { examples }))
    }

    /// Mean logistic loss only.
    pub fn loss(&self, batch: &[Vec<usize>], labels: &[u8]) -> Result<f64> {
        self.check_batch(batch, labels)?;
        let total: f64 = batch
            .iter()
            .zip(labels)
            .map(|(s, &y)| logistic_loss(self.run_example(s).logit, y))
            .sum();
        Ok(total / batch.len() as f64)
    }

    pub fn logit(&self, seq: &[usize]) -> Result<f64> {
        self.check_sequence(seq)?;
        Ok(self.run_example(seq).logit)
    }

    /// Exact gradients of the batch-mean loss via manual backpropagation.
    /// Frozen tensors receive no gradient.
    pub fn gradients(&self, batch: &[Vec<usize>], labels: &[u8]) -> Result<Gradients> {
        self.check_batch(batch, labels)?;
        let d = self.config.d_hidden;
        let mut ea = AdapterGradients::zeros_like(&self.embedding_adapter);
        let mut la = AdapterGradients::zeros_like(&self.layer_adapter);
        let mut head = HeadGradients {
            weight: vec![0.0; d],
            bias: 0.0,
        };
        let inv_b = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for (seq, &y) in batch.iter().zip(labels) {
            let st = self.run_example(seq);
            loss += logistic_loss(st.logit, y);
            let dlogit = (sigmoid(st.logit) - f64::from(y)) * inv_b;
            axpy(dlogit, &st.pooled, &mut head.weight);
            head.bias += dlogit;
            let inv_t = 1.0 / seq.len() as f64;
            let dy: Vec<f64> = self
                .head
                .weight
                .iter()
                .map(|w| w * dlogit * inv_t)
                .collect();
            let dg: Vec<Vec<f64>> = st
                .la_in
                .iter()
                .zip(&st.la_cache)
                .map(|(g, cache)| self.layer_adapter.backward(g, cache, &dy, &mut la))
                .collect();
            let dh = self.attention.backward(&st.attn_cache, &dg);
            // a positional row added after the adapter is constant, so dh flows through unchanged
            for ((x, cache), dht) in st.ea_in.iter().zip(&st.ea_cache).zip(&dh) {
                self.embedding_adapter.backward(x, cache, dht, &mut ea);
            }
        }
        Ok(Gradients {
            loss: loss * inv_b,
            embedding_adapter: ea,
            layer_adapter: la,
            head,
        })
    }

    /// Alias of [`Model::gradients`]; the adapter tensors are what a client shares.
    pub fn adapter_gradients(&self, batch: &[Vec<usize>], labels: &[u8]) -> Result<Gradients> {
        self.gradients(batch, labels)
    }

    /// Layer-adapter inputs for a candidate sequence, computed exactly as in
    /// training.
    pub fn hidden_for_candidate(&self, seq: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_sequence(seq)?;
        let h: Vec<Vec<f64>> = seq
            .iter()
            .enumerate()
            .map(|(pos, &tok)| {
                let x = self.embed_raw(tok, pos);
                let (mut out, _) = self.embedding_adapter.forward(&x);
                self.add_late_positional(&mut out, pos);
                out
            })
            .collect();
        Ok(self.attention.forward(&h).0)
    }

    pub(crate) fn apply_sgd(&mut self, lr: f64, grads: &Gradients) {
        self.embedding_adapter
            .apply_update(lr, &grads.embedding_adapter);
        self.layer_adapter.apply_update(lr, &grads.layer_adapter);
        axpy(-lr, &grads.head.weight, &mut self.head.weight);
        self.head.bias -= lr * grads.head.bias;
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `softplus(z) − y·z`, stable for large `|z|`.
pub fn logistic_loss(z: f64, y: u8) -> f64 {
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    softplus - f64::from(y) * z
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mode: AttentionMode, pe: PositionalEncoding) -> ModelConfig {
        ModelConfig {
            vocab_size: 20,
            d_hidden: 8,
            reduction_factor: 2,
            attention_mode: mode,
            positional_encoding: pe,
            max_seq_len: 6,
            adapter_activation: Activation::Relu,
            adapter_depth: 1,
            seed: 7,
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let c = cfg(AttentionMode::Unidirectional, PositionalEncoding::None);
        let a = serde_json::to_vec(&Model::new(c.clone()).unwrap()).unwrap();
        let b = serde_json::to_vec(&Model::new(c).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn embed_positional_placement() {
        let m = Model::new(cfg(AttentionMode::Bidirectional, PositionalEncoding::None)).unwrap();
        assert_eq!(m.embed(3, 0).unwrap(), m.embed(3, 4).unwrap());
        let m = Model::new(cfg(
            AttentionMode::Bidirectional,
            PositionalEncoding::AdditiveBeforeEmbeddingAdapter,
        ))
        .unwrap();
        assert_ne!(m.embed(3, 0).unwrap(), m.embed(3, 1).unwrap());
        let m = Model::new(cfg(
            AttentionMode::Bidirectional,
            PositionalEncoding::AdditiveAfterEmbeddingAdapter,
        ))
        .unwrap();
        for p in 0..6 {
            assert_eq!(
                m.embed(3, p).unwrap().as_slice(),
                m.embedding().table().row(3)
            );
        }
        assert!(m.embed(20, 0).is_err());
        assert!(m.embed(0, 6).is_err());
    }

    #[test]
    fn zero_head_gives_ln2() {
        let mut m =
            Model::new(cfg(AttentionMode::Unidirectional, PositionalEncoding::None)).unwrap();
        m.head.weight.iter_mut().for_each(|w| *w = 0.0);
        let (loss, _) = m.forward(&[vec![1, 2, 3]], &[1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_bad_batches() {
        let m = Model::new(cfg(AttentionMode::Unidirectional, PositionalEncoding::None)).unwrap();
        assert!(m.forward(&[], &[]).is_err());
        assert!(m.forward(&[vec![]], &[0]).is_err());
        assert!(m.forward(&[vec![1; 7]], &[0]).is_err());
        assert!(m.forward(&[vec![1]], &[2]).is_err());
        assert!(m.forward(&[vec![1]], &[0, 1]).is_err());
    }

    #[test]
    fn duplicated_examples_share_traces() {
        let m = Model::new(cfg(
            AttentionMode::Bidirectional,
            PositionalEncoding::AdditiveAfterEmbeddingAdapter,
        ))
        .unwrap();
        let (_, tr) = m.forward(&[vec![4, 5, 6], vec![4, 5, 6]], &[1, 1]).unwrap();
        assert_eq!(tr.examples[0], tr.examples[1]);
    }

    #[test]
    fn candidate_hidden_matches_trace() {
        for mode in [AttentionMode::Unidirectional, AttentionMode::Bidirectional] {
            let m =
                Model::new(cfg(mode, PositionalEncoding::AdditiveAfterEmbeddingAdapter)).unwrap();
            let seq = vec![2, 9, 4, 1];
            let (_, tr) = m.forward(std::slice::from_ref(&seq), &[0]).unwrap();
            assert_eq!(
                m.hidden_for_candidate(&seq).unwrap(),
                tr.examples[0].layer_adapter_inputs
            );
            let prefix = m.hidden_for_candidate(&seq[..2]).unwrap();
            let full = &tr.examples[0].layer_adapter_inputs[..2];
            match mode {
                AttentionMode::Unidirectional => assert_eq!(prefix.as_slice(), full),
                AttentionMode::Bidirectional => assert_ne!(prefix.as_slice(), full),
            }
        }
    }

    #[test]
    fn batch_of_copies_matches_single() {
        let m = Model::new(cfg(
            AttentionMode::Unidirectional,
            PositionalEncoding::AdditiveAfterEmbeddingAdapter,
        ))
        .unwrap();
        let one = m.gradients(&[vec![3, 1, 4]], &[1]).unwrap();
        let three = m
            .gradients(&[vec![3, 1, 4], vec![3, 1, 4], vec![3, 1, 4]], &[1, 1, 1])
            .unwrap();
        for (a, b) in one
            .embedding_adapter
            .tensors()
            .iter()
            .zip(three.embedding_adapter.tensors())
        {
            for (x, y) in a.2.iter().zip(b.2) {
                assert!((x - y).abs() <= 1e-15 + 1e-12 * x.abs());
            }
        }
    }

    #[test]
    fn saturated_correct_logit_has_vanishing_gradient() {
        let mut m =
            Model::new(cfg(AttentionMode::Unidirectional, PositionalEncoding::None)).unwrap();
        m.head.bias = 60.0;
        let g = m.gradients(&[vec![1, 2]], &[1]).unwrap();
        assert!(g.loss < 1e-20);
        for (_, _, t) in g.embedding_adapter.tensors() {
            assert!(t.iter().all(|x| x.abs() < 1e-20));
        }
    }
}
