//! Stage 1 on its own: recover the set of tokens in a private batch from the
//! embedding-adapter gradients.

use adapter_inversion::attack::{build_attack_subspaces, infer_word_bag, AttackConfig};
use adapter_inversion::fedsim::{client_round, ClientDataset};
use adapter_inversion::{Model, ModelConfig};

fn main() -> adapter_inversion::Result<()> {
    let model = Model::new(ModelConfig::default())?;
    let batch = vec![vec![17, 4, 93, 0], vec![5, 120, 61, 8, 0]];
    let texts = batch.iter().map(|s| format!("{s:?}")).collect();
    let data = ClientDataset::new(batch.clone(), vec![1, 0], texts)?;
    let update = client_round(&model, &data, &[0, 1], 0)?;

    let config = AttackConfig::default();
    let spaces = build_attack_subspaces(&update, &config)?;
    println!(
        "embedding subspace rank {} ({} neurons skipped)",
        spaces.embedding.rank(),
        spaces.embedding_skipped
    );
    let bag = infer_word_bag(&model, &spaces.embedding, &config)?;
    println!("word bag: {:?}", bag.to_vec());
    for (token, positions) in &bag.token_positions {
        println!("  token {token:>3} at positions {positions:?}");
    }
    let mut truth: Vec<usize> = batch.concat();
    truth.sort_unstable();
    truth.dedup();
    println!("true tokens: {truth:?}");
    Ok(())
}
