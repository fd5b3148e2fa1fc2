//! Frozen single-head scaled dot-product attention with a residual
//! connection: `g_t = h_t + W_o Σ_u softmax(q_t·k_u/√d) v_u`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::AttentionMode;
use crate::linalg::{axpy, dot, DenseMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionLayer {
    pub(crate) w_q: DenseMatrix,
    pub(crate) w_k: DenseMatrix,
    pub(crate) w_v: DenseMatrix,
    pub(crate) w_o: DenseMatrix,
    pub(crate) mode: AttentionMode,
}

#[derive(Clone, Debug, Default)]
pub struct AttentionCache {
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Row `t` holds the attention weights of position `t` over its visible keys.
    weights: Vec<Vec<f64>>,
}

impl AttentionLayer {
    pub(crate) fn init(d: usize, mode: AttentionMode, scale: f64, rng: &mut impl Rng) -> Self {
        let mut m = || DenseMatrix::from_fn(d, d, |_, _| rng.random_range(-scale..scale));
        AttentionLayer {
            w_q: m(),
            w_k: m(),
            w_v: m(),
            w_o: m(),
            mode,
        }
    }

    pub fn mode(&self) -> AttentionMode {
        self.mode
    }

    pub fn w_q(&self) -> &DenseMatrix {
        &self.w_q
    }

    pub fn w_k(&self) -> &DenseMatrix {
        &self.w_k
    }

    pub fn w_v(&self) -> &DenseMatrix {
        &self.w_v
    }

    pub fn w_o(&self) -> &DenseMatrix {
        &self.w_o
    }

    fn dim(&self) -> usize {
        self.w_q.rows()
    }

    /// Number of keys visible from position `t` in a sequence of length `len`.
    #[inline]
    pub fn visible(&self, t: usize, len: usize) -> usize {
        match self.mode {
            AttentionMode::Unidirectional => t + 1,
            AttentionMode::Bidirectional => len,
        }
    }

    pub fn forward(&self, h: &[Vec<f64>]) -> (Vec<Vec<f64>>, AttentionCache) {
        let len = h.len();
        let d = self.dim();
        let scale = 1.0 / (d as f64).sqrt();
        let q: Vec<Vec<f64>> = h.iter().map(|x| self.w_q.matvec(x)).collect();
        let k: Vec<Vec<f64>> = h.iter().map(|x| self.w_k.matvec(x)).collect();
        let v: Vec<Vec<f64>> = h.iter().map(|x| self.w_v.matvec(x)).collect();
        let mut weights = Vec::with_capacity(len);
        let mut out = Vec::with_capacity(len);
        for t in 0..len {
            let n = self.visible(t, len);
            let w = softmax((0..n).map(|u| dot(&q[t], &k[u]) * scale));
            let mut ctx = vec![0.0; d];
            for (u, &a) in w.iter().enumerate() {
                axpy(a, &v[u], &mut ctx);
            }
            let mut g = h[t].clone();
            let proj = self.w_o.matvec(&ctx);
            axpy(1.0, &proj, &mut g);
            out.push(g);
            weights.push(w);
        }
        (out, AttentionCache { q, k, v, weights })
    }

    /// Returns `∂L/∂h` for every position given `∂L/∂g`.
    pub fn backward(&self, cache: &AttentionCache, dg: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let len = dg.len();
        let d = self.dim();
        let scale = 1.0 / (d as f64).sqrt();
        let mut dq = vec![vec![0.0; d]; len];
        let mut dk = vec![vec![0.0; d]; len];
        let mut dv = vec![vec![0.0; d]; len];
        for t in 0..len {
            let mut dctx = vec![0.0; d];
            self.w_o.matvec_t_acc(&dg[t], &mut dctx);
            let w = &cache.weights[t];
            let da: Vec<f64> = (0..w.len()).map(|u| dot(&dctx, &cache.v[u])).collect();
            let mean: f64 = w.iter().zip(&da).map(|(a, b)| a * b).sum();
            for (u, (&a, &dau)) in w.iter().zip(&da).enumerate() {
                axpy(a, &dctx, &mut dv[u]);
                let ds = a * (dau - mean) * scale;
                if ds != 0.0 {
                    axpy(ds, &cache.k[u], &mut dq[t]);
                    axpy(ds, &cache.q[t], &mut dk[u]);
                }
            }
        }
        (0..len)
            .map(|t| {
                let mut dh = dg[t].clone();
                self.w_q.matvec_t_acc(&dq[t], &mut dh);
                self.w_k.matvec_t_acc(&dk[t], &mut dh);
                self.w_v.matvec_t_acc(&dv[t], &mut dh);
                dh
            })
            .collect()
    }
}

pub(crate) fn softmax(scores: impl Iterator<Item = f64>) -> Vec<f64> {
    let s: Vec<f64> = scores.collect();
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = s.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter_mut().for_each(|x| *x /= z);
    e
}
