//! Command-line front end for the experiment runners.

use std::path::PathBuf;
use std::process::ExitCode;

use adapter_inversion::experiment::{
    parse_override, write_attack_outputs, write_capacity_outputs, write_defense_outputs,
    write_hparam_outputs, Experiment, ExperimentConfig,
};
use adapter_inversion::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    version,
    about = "Gradient inversion experiments on adapter-based federated fine-tuning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Attack every batch size and round; writes summary.csv and per-run reports.
    Attack(Common),
    /// Success rates under noise and pruning; writes defense_sweep.csv.
    DefenseSweep(Common),
    /// Success against reduction factor and span threshold.
    HparamSweep(Common),
    /// Recoverable tokens against batch size; writes capacity.csv.
    Capacity(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file. Built-in defaults apply without it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `dotted.key=value`, applied after the file. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let overrides = self
            .overrides
            .iter()
            .map(|s| parse_override(s))
            .collect::<Result<Vec<_>>>()?;
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p, &overrides)?,
            None => ExperimentConfig::from_toml_str("", &overrides)?,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    let (name, common) = match &cli.command {
        Command::Attack(c) => ("attack", c),
        Command::DefenseSweep(c) => ("defense-sweep", c),
        Command::HparamSweep(c) => ("hparam-sweep", c),
        Command::Capacity(c) => ("capacity", c),
    };
    let exp = Experiment::new(common.resolve()?)?;
    let cfg = exp.config();
    let out = &cfg.output_dir;
    match cli.command {
        Command::Attack(_) => write_attack_outputs(out, cfg, &exp.attack_grid()?)?,
        Command::DefenseSweep(_) => write_defense_outputs(out, cfg, &exp.defense_sweep()?)?,
        Command::HparamSweep(_) => write_hparam_outputs(out, cfg, &exp.hparam_sweep()?)?,
        Command::Capacity(_) => write_capacity_outputs(out, cfg, &exp.capacity()?)?,
    }
    eprintln!("{name}: wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config_error() {
        1
    } else {
        2
    }
}
