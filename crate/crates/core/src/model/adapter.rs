//! Bottleneck adapter: down-projection, activation, optional extra bottleneck
//! layers, up-projection, plus a residual connection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::Activation;
use crate::linalg::DenseMatrix;

/// Weight (`out × in`) and bias of a fully connected layer. Also used to hold
/// the matching gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Linear {
            weight: DenseMatrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    /// Weights uniform in `(-scale, scale)`, biases zero.
    pub(crate) fn uniform(out_dim: usize, in_dim: usize, scale: f64, rng: &mut impl Rng) -> Self {
        Linear {
            weight: DenseMatrix::from_fn(out_dim, in_dim, |_, _| rng.random_range(-scale..scale)),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        self.weight.matvec_into(x, out);
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
    }
}

/// Gradients of one adapter; shapes mirror [`Adapter`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterGradients {
    pub down: Linear,
    pub hidden: Vec<Linear>,
    pub up: Linear,
}

impl AdapterGradients {
    pub fn zeros_like(adapter: &Adapter) -> Self {
        AdapterGradients {
            down: Linear::zeros(adapter.down.out_dim(), adapter.down.in_dim()),
            hidden: adapter
                .hidden
                .iter()
                .map(|l| Linear::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            up: Linear::zeros(adapter.up.out_dim(), adapter.up.in_dim()),
        }
    }

    fn layers(&self) -> impl Iterator<Item = &Linear> {
        std::iter::once(&self.down)
            .chain(self.hidden.iter())
            .chain(std::iter::once(&self.up))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Linear> {
        std::iter::once(&mut self.down)
            .chain(self.hidden.iter_mut())
            .chain(std::iter::once(&mut self.up))
    }

    /// Every tensor as `(rows, cols, data)`, in wire order:
    /// down weight, down bias, hidden weights/biases, up weight, up bias.
    pub fn tensors(&self) -> Vec<(usize, usize, &[f64])> {
        let mut out = Vec::new();
        for l in self.layers() {
            out.push((l.weight.rows(), l.weight.cols(), l.weight.data()));
            out.push((l.bias.len(), 1, l.bias.as_slice()));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in self.layers_mut() {
            out.push(l.weight.data_mut());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    /// Rebuilds gradients from `(rows, cols, data)` tensors in wire order.
    pub fn from_tensors(tensors: Vec<(usize, usize, Vec<f64>)>) -> Option<Self> {
        if tensors.len() < 4 || !tensors.len().is_multiple_of(2) {
            return None;
        }
        let mut layers = Vec::with_capacity(tensors.len() / 2);
        let mut it = tensors.into_iter();
        while let (Some((r, c, w)), Some((br, bc, b))) = (it.next(), it.next()) {
            if bc != 1 || br != r {
                return None;
            }
            layers.push(Linear {
                weight: DenseMatrix::from_vec(r, c, w).ok()?,
                bias: b,
            });
        }
        let up = layers.pop()?;
        let mut rest = layers.into_iter();
        let down = rest.next()?;
        Some(AdapterGradients {
            down,
            hidden: rest.collect(),
            up,
        })
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= c);
        }
    }

    pub fn add_scaled(&mut self, c: f64, other: &AdapterGradients) {
        for (mine, theirs) in self.layers_mut().zip(other.layers()) {
            crate::linalg::axpy(c, theirs.weight.data(), mine.weight.data_mut());
            crate::linalg::axpy(c, &theirs.bias, &mut mine.bias);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, d)| d.iter().all(|x| x.is_finite()))
    }

    pub fn same_shape(&self, other: &AdapterGradients) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.0 == y.0 && x.1 == y.1)
    }
}

/// Trainable bottleneck adapter with residual output `x + up(act(down(x)))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adapter {
    pub down: Linear,
    pub hidden: Vec<Linear>,
    pub up: Linear,
    pub activation: Activation,
}

/// Per-position activations kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct AdapterCache {
    /// Pre-activations of the down layer and every hidden layer.
    pub pre: Vec<Vec<f64>>,
    /// Activated outputs matching `pre`.
    pub post: Vec<Vec<f64>>,
}

impl Adapter {
    pub(crate) fn init(
        d_in: usize,
        d_bottleneck: usize,
        depth: usize,
        activation: Activation,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let down = Linear::uniform(d_bottleneck, d_in, scale, rng);
        let hidden = (1..depth)
            .map(|_| Linear::uniform(d_bottleneck, d_bottleneck, scale, rng))
            .collect();
        let up = Linear::uniform(d_in, d_bottleneck, scale, rng);
        Adapter {
            down,
            hidden,
            up,
            activation,
        }
    }

    pub fn d_in(&self) -> usize {
        self.down.in_dim()
    }

    pub fn d_bottleneck(&self) -> usize {
        self.down.out_dim()
    }

    fn layers(&self) -> impl Iterator<Item = &Linear> {
        std::iter::once(&self.down)
            .chain(self.hidden.iter())
            .chain(std::iter::once(&self.up))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Linear> {
        std::iter::once(&mut self.down)
            .chain(self.hidden.iter_mut())
            .chain(std::iter::once(&mut self.up))
    }

    /// Parameter tensors in the same order as [`AdapterGradients::tensors`].
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in self.layers_mut() {
            out.push(l.weight.data_mut());
            out.push(l.bias.as_mut_slice());
        }
        out
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in self.layers() {
            out.push(l.weight.data());
            out.push(l.bias.as_slice());
        }
        out
    }

    pub(crate) fn apply_update(&mut self, lr: f64, grads: &AdapterGradients) {
        for (p, g) in self.params_mut().into_iter().zip(grads.tensors()) {
            crate::linalg::axpy(-lr, g.2, p);
        }
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, AdapterCache) {
        let mut cache = AdapterCache::default();
        let mut pre = vec![0.0; self.down.out_dim()];
        self.down.forward_into(x, &mut pre);
        let mut post: Vec<f64> = pre.iter().map(|&p| self.activation.apply(p)).collect();
        for layer in &self.hidden {
            let mut next_pre = vec![0.0; layer.out_dim()];
            layer.forward_into(&post, &mut next_pre);
            let next_post = next_pre.iter().map(|&p| self.activation.apply(p)).collect();
            cache.pre.push(pre);
            cache.post.push(post);
            pre = next_pre;
            post = next_post;
        }
        let mut out = vec![0.0; self.up.out_dim()];
        self.up.forward_into(&post, &mut out);
        cache.pre.push(pre);
        cache.post.push(post);
        for (o, xi) in out.iter_mut().zip(x) {
            *o += xi;
        }
        (out, cache)
    }

    /// Accumulates parameter gradients into `grads` and returns `∂L/∂x`.
    pub fn backward(
        &self,
        x: &[f64],
        cache: &AdapterCache,
        dout: &[f64],
        grads: &mut AdapterGradients,
    ) -> Vec<f64> {
        let last = cache.post.len() - 1;
        grads.up.weight.add_outer(1.0, dout, &cache.post[last]);
        crate::linalg::axpy(1.0, dout, &mut grads.up.bias);
        let mut dz = vec![0.0; self.up.in_dim()];
        self.up.weight.matvec_t_acc(dout, &mut dz);

        for i in (0..=last).rev() {
            let dpre: Vec<f64> = dz
                .iter()
                .zip(&cache.pre[i])
                .map(|(&d, &p)| d * self.activation.derivative(p))
                .collect();
            let (layer, layer_grad, input): (&Linear, &mut Linear, &[f64]) = if i == 0 {
                (&self.down, &mut grads.down, x)
            } else {
                (
                    &self.hidden[i - 1],
                    &mut grads.hidden[i - 1],
                    &cache.post[i - 1],
                )
            };
            layer_grad.weight.add_outer(1.0, &dpre, input);
            crate::linalg::axpy(1.0, &dpre, &mut layer_grad.bias);
            let mut dprev = vec![0.0; layer.in_dim()];
            layer.weight.matvec_t_acc(&dpre, &mut dprev);
            dz = dprev;
        }
        // residual path
        crate::linalg::axpy(1.0, dout, &mut dz);
        dz
    }
}
