//! Full two-stage attack on a small text corpus, under both attention modes.

use std::path::Path;

use adapter_inversion::attack::{attack_end_to_end, run_attack, score_attack, AttackConfig};
use adapter_inversion::corpus::Corpus;
use adapter_inversion::fedsim::{client_round, ClientDataset};
use adapter_inversion::model::AttentionMode;
use adapter_inversion::{Model, ModelConfig};

const TEXT: &str = "the cat sat on a mat
green ideas sleep furiously
we shipped it on friday
";

fn main() -> adapter_inversion::Result<()> {
    let corpus = Corpus::parse(TEXT, 16, Path::new("inline"))?;
    for mode in [AttentionMode::Unidirectional, AttentionMode::Bidirectional] {
        let model = Model::new(ModelConfig {
            vocab_size: corpus.vocab_size(),
            attention_mode: mode,
            ..ModelConfig::default()
        })?;
        let data = ClientDataset::new(
            corpus.sequences().to_vec(),
            vec![1, 0, 1],
            corpus.sentences().to_vec(),
        )?;
        let update = client_round(&model, &data, &[0, 1, 2], 0)?;
        let config = AttackConfig {
            mode,
            ..AttackConfig::default()
        };
        let output = run_attack(&model, &update, &config, None)?;
        let report = score_attack(&output, &data.sequences, Some(corpus.vocabulary()))?;
        println!("{mode:?}: corpus ROUGE-1 {:.1}", report.corpus_rouge1);
        for s in &report.sentences {
            let got = s
                .candidate
                .as_ref()
                .and_then(|c| c.text.clone())
                .unwrap_or_default();
            println!(
                "  {:<32} <- {}",
                s.reference_text.as_deref().unwrap_or(""),
                got
            );
        }
        let quick = attack_end_to_end(&model, &update, &data.sequences, &config, None)?;
        assert_eq!(quick.corpus_rouge1, report.corpus_rouge1);
    }
    Ok(())
}
