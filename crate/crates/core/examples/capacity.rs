//! Recovered tokens against the number of distinct tokens in the batch, next
//! to the bound `min(d_bottleneck, n, d_hidden)`.

use adapter_inversion::attack::AttackConfig;
use adapter_inversion::capacity::capacity_sweep;
use adapter_inversion::model::PositionalEncoding;
use adapter_inversion::synth::SentenceSampler;
use adapter_inversion::ModelConfig;

fn main() -> adapter_inversion::Result<()> {
    let model = ModelConfig {
        vocab_size: 1000,
        d_hidden: 64,
        reduction_factor: 4,
        positional_encoding: PositionalEncoding::AdditiveAfterEmbeddingAdapter,
        ..ModelConfig::default()
    };
    let sampler = SentenceSampler {
        vocab_size: 1000,
        min_words: 4,
        max_words: 4,
        distinct_across_batch: false,
    };
    let sizes = [1, 2, 4, 8, 16, 32];
    let reports = capacity_sweep(&model, &sizes, 2, 3, &sampler, &AttackConfig::default())?;
    println!("d_bottleneck = {}", model.d_bottleneck());
    println!(
        "{:>5} {:>5} {:>5} {:>5} {:>5}",
        "B", "n", "rank", "k", "kmax"
    );
    for r in &reports {
        println!(
            "{:>5} {:>5} {:>5} {:>5} {:>5}",
            r.batch_size,
            r.true_unique_tokens,
            r.subspace_rank,
            r.recovered_tokens,
            r.theoretical_kmax
        );
        assert!(r.within_bounds());
    }
    Ok(())
}
