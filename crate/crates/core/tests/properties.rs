mod common;

use adapter_inversion::attack::{
    build_attack_subspaces, compute_rwbg, infer_word_bag, AttackConfig,
};
use adapter_inversion::capacity::measure_capacity;
use adapter_inversion::corpus::{Corpus, END_TOKEN};
use adapter_inversion::fedsim::{
    apply_defense, clip_tensor, deserialize_update, prune_tensor, serialize_update, DefenseConfig,
};
use adapter_inversion::linalg::norm;
use adapter_inversion::metrics::{corpus_rouge, rouge_n};
use adapter_inversion::synth::{derive_rng, random_labels, SentenceSampler};
use adapter_inversion::{GradientUpdate, Model, ModelConfig, Subspace};
use common::{naive_rouge, svd_projection};
use proptest::prelude::*;

fn vectors(dim: usize, max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, dim), 0..=max)
}

fn update_for(seed: u64, batch_size: usize) -> (Model, Vec<Vec<usize>>, GradientUpdate) {
    let model = Model::new(ModelConfig {
        vocab_size: 60,
        d_hidden: 32,
        seed,
        ..ModelConfig::default()
    })
    .unwrap();
    let sampler = SentenceSampler {
        vocab_size: 60,
        min_words: 1,
        max_words: 4,
        distinct_across_batch: true,
    };
    let mut rng = derive_rng(seed, &[batch_size as u64]);
    let batch = sampler.batch(&mut rng, batch_size).unwrap();
    let labels = random_labels(&mut rng, batch_size);
    let g = model.adapter_gradients(&batch, &labels).unwrap();
    let update = GradientUpdate {
        embedding_adapter: g.embedding_adapter,
        layer_adapter: g.layer_adapter,
        batch_size,
        round_id: seed,
    };
    (model, batch, update)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_matches_svd_oracle(vs in vectors(6, 8), v in prop::collection::vec(-10.0f64..10.0, 6)) {
        let s = Subspace::orthonormalize(6, vs.iter().map(|x| x.as_slice()), 1e-8).unwrap();
        let (p, rank) = svd_projection(&vs, &v, 1e-8);
        prop_assert_eq!(s.rank(), rank);
        let mine = s.project(&v).unwrap();
        for (a, b) in mine.iter().zip(&p) {
            prop_assert!((a - b).abs() <= 1e-8 * (1.0 + norm(&v)));
        }
        let twice = s.project(&mine).unwrap();
        for (a, b) in twice.iter().zip(&mine) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + norm(&v)));
        }
        if norm(&v) > 0.0 {
            let r = s.residual_ratio(&v).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn basis_is_orthonormal_and_rank_bounded(vs in vectors(5, 9)) {
        let s = Subspace::orthonormalize(5, vs.iter().map(|x| x.as_slice()), 1e-8).unwrap();
        prop_assert!(s.rank() <= vs.len().min(5));
        let b = s.basis();
        for i in 0..b.rows() {
            for j in 0..b.rows() {
                let d: f64 = b.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((d - want).abs() < 1e-10);
            }
            let v = b.row(i).to_vec();
            prop_assert!(s.in_span(&v, 1e-6).unwrap());
        }
    }

    #[test]
    fn rouge_agrees_with_naive_counter(
        c in prop::collection::vec(0usize..6, 0..10),
        r in prop::collection::vec(0usize..6, 2..10),
    ) {
        for n in [1, 2] {
            let s = rouge_n(&c, &r, n).unwrap();
            prop_assert_eq!((s.matched, s.total), naive_rouge(&c, &r, n));
            prop_assert!((0.0..=100.0).contains(&s.recall_percent));
        }
        prop_assert_eq!(rouge_n(&r, &r, 1).unwrap().recall_percent, 100.0);
        prop_assert_eq!(rouge_n(&r, &r, 2).unwrap().recall_percent, 100.0);
        let mut rev = c.clone();
        rev.reverse();
        prop_assert_eq!(rouge_n(&rev, &r, 1).unwrap().matched, rouge_n(&c, &r, 1).unwrap().matched);
    }

    #[test]
    fn corpus_rouge_of_references_is_perfect(refs in prop::collection::vec(prop::collection::vec(0usize..9, 2..6), 1..4)) {
        prop_assert_eq!(corpus_rouge(&refs, &refs, 1).unwrap(), 100.0);
        prop_assert_eq!(corpus_rouge(&refs, &refs, 2).unwrap(), 100.0);
    }

    #[test]
    fn clip_and_prune_bounds(t in prop::collection::vec(-5.0f64..5.0, 1..40), rate in 0.0f64..0.999, bound in 0.1f64..4.0) {
        let mut c = t.clone();
        clip_tensor(&mut c, bound);
        prop_assert!(norm(&c) <= bound * (1.0 + 1e-12));
        if norm(&t) <= bound {
            prop_assert_eq!(&c, &t);
        }
        let mut p = t.clone();
        prune_tensor(&mut p, rate);
        let zeroed = p.iter().filter(|x| **x == 0.0).count();
        prop_assert!(zeroed >= (rate * t.len() as f64).floor() as usize);
        let kept_min = p.iter().filter(|x| **x != 0.0).map(|x| x.abs()).fold(f64::INFINITY, f64::min);
        let cut_max = t.iter().zip(&p).filter(|(_, q)| **q == 0.0).map(|(x, _)| x.abs()).fold(0.0, f64::max);
        prop_assert!(cut_max <= kept_min);
    }

    #[test]
    fn corpus_vocabulary_is_dense_and_covering(lines in prop::collection::vec(prop::collection::vec("[a-e]{1,3}", 1..5), 1..6)) {
        let text: String = lines.iter().map(|l| l.join(" ") + "\n").collect();
        let c = Corpus::parse(&text, 8, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(c.len(), lines.len());
        for (seq, words) in c.sequences().iter().zip(&lines) {
            prop_assert_eq!(*seq.last().unwrap(), END_TOKEN);
            prop_assert!(seq.iter().all(|&t| t < c.vocab_size()));
            prop_assert_eq!(c.decode(&seq[..seq.len() - 1]), words.join(" "));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn wire_round_trip_is_exact(seed in 0u64..1000, b in 1usize..4, cut in 1usize..64) {
        let (_, _, u) = update_for(seed, b);
        let bytes = serialize_update(&u);
        prop_assert_eq!(deserialize_update(&bytes).unwrap(), u);
        prop_assert!(deserialize_update(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn word_bag_grows_with_epsilon(seed in 0u64..1000, b in 1usize..5) {
        let (model, _, u) = update_for(seed, b);
        let mut prev: Option<Vec<usize>> = None;
        for eps in [1e-6, 1e-3, 1e-1, 0.9] {
            let cfg = AttackConfig { epsilon_ea: eps, ..AttackConfig::default() };
            let s = build_attack_subspaces(&u, &cfg).unwrap();
            let bag = infer_word_bag(&model, &s.embedding, &cfg).unwrap().to_vec();
            if let Some(p) = &prev {
                prop_assert!(p.iter().all(|t| bag.contains(t)));
            }
            prev = Some(bag);
        }
    }

    #[test]
    fn capacity_invariant_holds(seed in 0u64..1000, b in 1usize..12) {
        let (model, batch, u) = update_for(seed, b.min(8));
        let r = measure_capacity(&model, &u, &batch, &AttackConfig::default()).unwrap();
        prop_assert!(r.within_bounds());
    }

    #[test]
    fn rwbg_is_exact_under_power_of_two_scaling(seed in 0u64..1000, c in prop::sample::select(vec![0.25, 4.0, 1024.0])) {
        let (_, _, u) = update_for(seed, 2);
        let a = compute_rwbg(&u.embedding_adapter, 1e-12).unwrap();
        let s = compute_rwbg(&u.scaled(c).embedding_adapter, 1e-12).unwrap();
        prop_assert_eq!(a, s);
    }

    #[test]
    fn prune_zero_is_identity(seed in 0u64..1000) {
        let (_, _, u) = update_for(seed, 2);
        prop_assert_eq!(apply_defense(&u, &DefenseConfig::prune(0.0)).unwrap(), u);
    }

    #[test]
    fn spanning_rank_never_exceeds_count(seed in 0u64..1000, m in 1usize..20, dim in 1usize..16) {
        let mut rng = derive_rng(seed, &[m as u64, dim as u64]);
        use rand::Rng;
        let vs: Vec<Vec<f64>> = (0..m).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let s = Subspace::orthonormalize(dim, vs.iter().map(|v| v.as_slice()), 1e-8).unwrap();
        prop_assert!(s.rank() <= m.min(dim));
    }
}
