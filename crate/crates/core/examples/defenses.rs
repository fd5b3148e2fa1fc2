//! The same update attacked under Gaussian noise and under magnitude pruning.

use adapter_inversion::attack::{run_attack, score_attack, AttackConfig, AttackOutput};
use adapter_inversion::fedsim::{apply_defense, DefenseConfig, GradientUpdate};
use adapter_inversion::synth::{derive_rng, random_labels, SentenceSampler};
use adapter_inversion::{Error, Model, ModelConfig};

fn main() -> adapter_inversion::Result<()> {
    let model = Model::new(ModelConfig::default())?;
    let sampler = SentenceSampler {
        vocab_size: 200,
        min_words: 2,
        max_words: 5,
        distinct_across_batch: true,
    };
    let mut rng = derive_rng(7, &[]);
    let batch = sampler.batch(&mut rng, 4)?;
    let labels = random_labels(&mut rng, 4);
    let g = model.adapter_gradients(&batch, &labels)?;
    let update = GradientUpdate {
        embedding_adapter: g.embedding_adapter,
        layer_adapter: g.layer_adapter,
        batch_size: 4,
        round_id: 0,
    };
    let config = AttackConfig::default();

    let mut settings = vec![("none".to_string(), DefenseConfig::none())];
    for sigma in [1e-8, 1e-6, 3e-6] {
        settings.push((
            format!("dp sigma={sigma:e}"),
            DefenseConfig::dp(sigma, 1.0, 11),
        ));
    }
    for rate in [0.5, 0.9, 0.999] {
        settings.push((format!("prune rate={rate}"), DefenseConfig::prune(rate)));
    }
    for (name, defense) in settings {
        let shared = apply_defense(&update, &defense)?;
        let output = match run_attack(&model, &shared, &config, None) {
            Ok(o) => o,
            Err(Error::NoGradientSignal(what)) => {
                AttackOutput::no_signal(&config, &shared, what.to_string())
            }
            Err(e) => return Err(e),
        };
        let report = score_attack(&output, &batch, None)?;
        println!(
            "{name:<20} bag {:>4} tokens, recall {:.2}, ROUGE-1 {:>5.1}",
            report.word_bag.size, report.word_bag.recall, report.corpus_rouge1
        );
    }
    Ok(())
}
