//! Attack success under two architecture variants: a smooth activation and a
//! deeper adapter.

use adapter_inversion::attack::{run_attack, score_attack, AttackConfig, AttackOutput};
use adapter_inversion::fedsim::GradientUpdate;
use adapter_inversion::model::Activation;
use adapter_inversion::synth::{derive_rng, random_labels, SentenceSampler};
use adapter_inversion::{Error, Model, ModelConfig};

fn main() -> adapter_inversion::Result<()> {
    let sampler = SentenceSampler {
        vocab_size: 200,
        min_words: 2,
        max_words: 4,
        distinct_across_batch: true,
    };
    let variants = [
        ("relu, depth 1", Activation::Relu, 1),
        ("gelu, depth 1", Activation::Gelu, 1),
        ("relu, depth 3", Activation::Relu, 3),
    ];
    for (name, activation, depth) in variants {
        let model = Model::new(ModelConfig {
            adapter_activation: activation,
            adapter_depth: depth,
            ..ModelConfig::default()
        })?;
        for batch_size in [2, 6] {
            let mut total = 0.0;
            let rounds = 5;
            for round in 0..rounds {
                let mut rng = derive_rng(9, &[batch_size as u64, round]);
                let batch = sampler.batch(&mut rng, batch_size)?;
                let labels = random_labels(&mut rng, batch_size);
                let g = model.adapter_gradients(&batch, &labels)?;
                let update = GradientUpdate {
                    embedding_adapter: g.embedding_adapter,
                    layer_adapter: g.layer_adapter,
                    batch_size,
                    round_id: round,
                };
                let config = AttackConfig::default();
                let output = match run_attack(&model, &update, &config, None) {
                    Ok(o) => o,
                    Err(Error::NoGradientSignal(w)) => {
                        AttackOutput::no_signal(&config, &update, w.to_string())
                    }
                    Err(e) => return Err(e),
                };
                total += score_attack(&output, &batch, None)?.corpus_rouge1;
            }
            println!(
                "{name:<14} B={batch_size} mean ROUGE-1 {:.1}",
                total / rounds as f64
            );
        }
    }
    Ok(())
}
