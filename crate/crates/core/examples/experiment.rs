//! Running an experiment grid from an inline TOML config, without the CLI.

use adapter_inversion::experiment::{parse_override, Experiment, ExperimentConfig};

const CONFIG: &str = r#"
seed = 12
batch_sizes = [1, 4]
rounds = 3

[model]
vocab_size = 150
"#;

fn main() -> adapter_inversion::Result<()> {
    let overrides = vec![parse_override("attack.beam_width=256")?];
    let exp = Experiment::new(ExperimentConfig::from_toml_str(CONFIG, &overrides)?)?;
    for run in exp.attack_grid()? {
        let r = &run.report;
        println!(
            "B={} round={} R1={:.1} R2={} bag={}/{}",
            run.batch_size,
            run.round,
            r.corpus_rouge1,
            r.corpus_rouge2.map_or("-".into(), |v| format!("{v:.1}")),
            r.word_bag.hits,
            r.word_bag.true_tokens
        );
    }
    Ok(())
}
