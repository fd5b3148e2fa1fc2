//! What noise costs the client: held-out accuracy after training the
//! adapters with and without Gaussian noise on every step.

use adapter_inversion::model::{train_utility, LabeledSet, TrainConfig};
use adapter_inversion::synth::{derive_rng, SentenceSampler};
use adapter_inversion::{DefenseConfig, Model, ModelConfig};

/// Label 1 when the sentence contains a token from the lower half of the
/// vocabulary's word ids.
fn labeled(seed: u64, n: usize) -> adapter_inversion::Result<LabeledSet> {
    let sampler = SentenceSampler {
        vocab_size: 40,
        min_words: 2,
        max_words: 4,
        distinct_across_batch: false,
    };
    let mut rng = derive_rng(seed, &[]);
    let sequences = sampler.batch(&mut rng, n)?;
    let labels = sequences
        .iter()
        .map(|s| u8::from(s[..s.len() - 1].iter().any(|&t| t < 8)))
        .collect();
    Ok(LabeledSet { sequences, labels })
}

fn main() -> adapter_inversion::Result<()> {
    let config = ModelConfig {
        vocab_size: 40,
        d_hidden: 32,
        ..ModelConfig::default()
    };
    let train = labeled(1, 200)?;
    let test = labeled(2, 100)?;
    let steps = TrainConfig {
        steps: 400,
        lr: 0.5,
        batch_size: 8,
    };
    let untrained = test.accuracy(&Model::new(config.clone())?)?;
    println!("untrained             accuracy {untrained:.2}");
    for (name, defense) in [
        ("no defense", DefenseConfig::none()),
        ("dp sigma=0.01", DefenseConfig::dp(0.01, 1.0, 5)),
        ("dp sigma=1.0", DefenseConfig::dp(1.0, 1.0, 5)),
    ] {
        let mut model = Model::new(config.clone())?;
        let acc = train_utility(&mut model, &train, &test, &steps, &defense)?;
        println!("{name:<21} accuracy {acc:.2}");
    }
    Ok(())
}
