//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use adapter_inversion::attack::{AttackConfig, WordBag};
use adapter_inversion::model::AttentionMode;
use adapter_inversion::{Model, Subspace};
use nalgebra::{DMatrix, DVector};

/// Clipped n-gram match count and reference n-gram total, by direct
/// enumeration over string keys.
pub fn naive_rouge(candidate: &[usize], reference: &[usize], n: usize) -> (usize, usize) {
    let grams = |s: &[usize]| -> Vec<String> {
        if s.len() < n {
            return Vec::new();
        }
        (0..=s.len() - n)
            .map(|i| {
                s[i..i + n]
                    .iter()
                    .map(|t| t.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect()
    };
    let reference = grams(reference);
    let mut pool = grams(candidate);
    let mut matched = 0;
    for g in &reference {
        if let Some(i) = pool.iter().position(|c| c == g) {
            pool.swap_remove(i);
            matched += 1;
        }
    }
    (matched, reference.len())
}

/// Projection onto the column space of `spanning` via an SVD pseudo-inverse.
pub fn svd_projection(spanning: &[Vec<f64>], v: &[f64], tol: f64) -> (Vec<f64>, usize) {
    let dim = v.len();
    if spanning.is_empty() {
        return (vec![0.0; dim], 0);
    }
    let a = DMatrix::from_fn(dim, spanning.len(), |i, j| spanning[j][i]);
    let svd = a.svd(true, false);
    let u = svd.u.expect("u requested");
    let smax = svd.singular_values.max();
    let mut p = DVector::zeros(dim);
    let x = DVector::from_column_slice(v);
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol * smax {
            let col = u.column(k);
            p += col * col.dot(&x);
            rank += 1;
        }
    }
    (p.iter().copied().collect(), rank)
}

fn residual_ratio(s: &Subspace, v: &[f64]) -> f64 {
    s.residual_ratio(v).unwrap_or(1.0)
}

/// Exhaustive reconstruction: every sequence over the bag, checked from
/// scratch with full model forward passes. Returns sequence → score.
///
/// Unidirectional outputs: admissible sequences that end in the end token,
/// reach `max_len`, or admit no admissible one-token extension. Every prefix
/// of an admissible sequence has each position inside the span.
/// Bidirectional outputs: complete sequences whose non-end positions all lie
/// inside the span of the whole sequence.
pub fn brute_force(
    model: &Model,
    s_la: &Subspace,
    bag: &WordBag,
    cfg: &AttackConfig,
) -> BTreeMap<Vec<usize>, f64> {
    let tokens = bag.to_vec();
    let max_len = cfg.max_len.min(model.config().max_seq_len);
    let end = cfg.end_token;
    let local_ok = |seq: &[usize]| -> bool {
        let t = seq.len() - 1;
        let w = seq[t];
        if t == 0 && end == Some(w) {
            return false;
        }
        if cfg.filters.eicw && t > 0 && seq[t - 1] == w {
            return false;
        }
        if cfg.filters.position && !bag.allows(w, t) {
            return false;
        }
        true
    };
    let mut out = BTreeMap::new();
    let mut stack: Vec<Vec<usize>> = vec![Vec::new()];
    while let Some(prefix) = stack.pop() {
        let mut extended = false;
        for &w in &tokens {
            let mut seq = prefix.clone();
            seq.push(w);
            if !local_ok(&seq) {
                continue;
            }
            let complete = end == Some(w) || seq.len() == max_len;
            let hidden = model.hidden_for_candidate(&seq).expect("valid sequence");
            match cfg.mode {
                AttentionMode::Unidirectional => {
                    let rs: Vec<f64> = hidden.iter().map(|h| residual_ratio(s_la, h)).collect();
                    if rs.iter().any(|&r| r >= cfg.epsilon_la) {
                        continue;
                    }
                    extended = true;
                    let score = rs.iter().map(|r| 1.0 - r).fold(f64::INFINITY, f64::min);
                    if complete {
                        out.insert(seq, score);
                    } else {
                        stack.push(seq);
                    }
                }
                AttentionMode::Bidirectional => {
                    if complete {
                        let worst = seq
                            .iter()
                            .zip(&hidden)
                            .filter(|(t, _)| Some(**t) != end)
                            .map(|(_, h)| residual_ratio(s_la, h))
                            .fold(0.0f64, f64::max);
                        if worst < cfg.epsilon_la {
                            out.insert(seq, 1.0 - worst);
                        }
                    } else {
                        stack.push(seq);
                    }
                }
            }
        }
        if !extended && !prefix.is_empty() && cfg.mode == AttentionMode::Unidirectional {
            let hidden = model.hidden_for_candidate(&prefix).expect("valid sequence");
            let score = hidden
                .iter()
                .map(|h| 1.0 - residual_ratio(s_la, h))
                .fold(f64::INFINITY, f64::min);
            out.insert(prefix, score);
        }
    }
    out
}

/// Counts of each element.
pub fn multiset(xs: &[usize]) -> HashMap<usize, usize> {
    let mut m = HashMap::new();
    for &x in xs {
        *m.entry(x).or_insert(0) += 1;
    }
    m
}

/// A small attack instance: model, shared update subspaces, word bag and an
/// exhaustive-beam configuration.
pub struct MicroInstance {
    pub model: Model,
    pub s_la: Subspace,
    pub bag: WordBag,
    pub config: AttackConfig,
    pub batch: Vec<Vec<usize>>,
}

pub fn micro_instance(seed: u64) -> MicroInstance {
    use adapter_inversion::attack::{build_attack_subspaces, infer_word_bag};
    use adapter_inversion::synth::{derive_rng, random_labels, SentenceSampler};
    use adapter_inversion::{GradientUpdate, ModelConfig};
    use rand::Rng;

    let mut rng = derive_rng(seed, &[0xbea3]);
    let mode = if rng.random_bool(0.5) {
        AttentionMode::Unidirectional
    } else {
        AttentionMode::Bidirectional
    };
    let model = Model::new(ModelConfig {
        vocab_size: 8,
        d_hidden: 32,
        reduction_factor: 2,
        attention_mode: mode,
        max_seq_len: 8,
        seed,
        ..ModelConfig::default()
    })
    .unwrap();
    let sampler = SentenceSampler {
        vocab_size: 8,
        min_words: 1,
        max_words: 4,
        distinct_across_batch: false,
    };
    let b = rng.random_range(1..=3usize);
    let batch = sampler.batch(&mut rng, b).unwrap();
    let labels = random_labels(&mut rng, b);
    let g = model.adapter_gradients(&batch, &labels).unwrap();
    let update = GradientUpdate {
        embedding_adapter: g.embedding_adapter,
        layer_adapter: g.layer_adapter,
        batch_size: b,
        round_id: 0,
    };
    let mut config = AttackConfig {
        mode,
        beam_width: 1 << 20,
        max_len: 5,
        epsilon_la: [1e-3, 1e-2, 0.3][rng.random_range(0..3)],
        ..AttackConfig::default()
    };
    config.filters.position = rng.random_bool(0.7);
    config.filters.eicw = rng.random_bool(0.8);
    let spaces = build_attack_subspaces(&update, &config).unwrap();
    let bag = infer_word_bag(&model, &spaces.embedding, &config).unwrap();
    MicroInstance {
        model,
        s_la: spaces.layer,
        bag,
        config,
        batch,
    }
}

/// Compares the beam output on a micro instance with [`brute_force`]:
/// the same sequences, scores equal within `1e-9`.
pub fn beam_matches_oracle(inst: &MicroInstance) -> Result<(), String> {
    use adapter_inversion::attack::reconstruct;
    let beam = reconstruct(&inst.model, &inst.s_la, &inst.bag, &inst.config, None)
        .map_err(|e| e.to_string())?;
    let oracle = brute_force(&inst.model, &inst.s_la, &inst.bag, &inst.config);
    let got: BTreeMap<Vec<usize>, f64> = beam
        .candidates
        .iter()
        .map(|c| (c.sequence.clone(), c.score))
        .collect();
    if got.len() != beam.candidates.len() {
        return Err("beam output has duplicates".into());
    }
    if got.keys().ne(oracle.keys()) {
        let extra: Vec<_> = got.keys().filter(|k| !oracle.contains_key(*k)).collect();
        let missing: Vec<_> = oracle.keys().filter(|k| !got.contains_key(*k)).collect();
        return Err(format!("sets differ: extra {extra:?}, missing {missing:?}"));
    }
    for (k, s) in &got {
        if (s - oracle[k]).abs() > 1e-9 {
            return Err(format!("score of {k:?}: beam {s}, oracle {}", oracle[k]));
        }
    }
    Ok(())
}
