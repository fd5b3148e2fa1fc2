//! Result files. Tables are CSV, per-run reports are JSON, and every output
//! directory gets a `manifest.json` holding the command and resolved config.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::runner::{Aggregate, DefenseRow, HparamResult, HparamRow, RunRecord};
use crate::capacity::{write_capacity_csv, CapacityReport};
use crate::error::{Error, Result};

pub const OUTPUT_FORMAT_VERSION: u32 = 1;

pub const SUMMARY_CSV_HEADER: [&str; 7] = [
    "batch_size",
    "round",
    "R1",
    "R2",
    "bag_recall",
    "bag_precision",
    "seconds",
];
pub const DEFENSE_CSV_HEADER: [&str; 6] = [
    "defense",
    "parameter",
    "success_rate",
    "mean_r1",
    "mean_r2",
    "runs",
];

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub format_version: u32,
    pub command: &'a str,
    pub config: &'a ExperimentConfig,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::write(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::write(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::write(path, e))?;
    w.flush().map_err(|e| Error::write(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::write(path, e))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn write_manifest(dir: &Path, command: &str, config: &ExperimentConfig) -> Result<()> {
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            format_version: OUTPUT_FORMAT_VERSION,
            command,
            config,
        },
    )
}

/// `summary.csv` plus `reports/b{B}_r{round}.json` per run.
pub fn write_attack_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    runs: &[RunRecord],
) -> Result<()> {
    write_manifest(dir, "attack", config)?;
    let path = dir.join("summary.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(SUMMARY_CSV_HEADER)?;
    for run in runs {
        let r = &run.report;
        let seconds = r
            .timings
            .map_or(0.0, |t| t.word_bag_seconds + t.reconstruct_seconds);
        w.write_record([
            run.batch_size.to_string(),
            run.round.to_string(),
            r.corpus_rouge1.to_string(),
            opt(r.corpus_rouge2),
            r.word_bag.recall.to_string(),
            r.word_bag.precision.to_string(),
            seconds.to_string(),
        ])?;
    }
    finish(w, &path)?;
    for run in runs {
        let name = format!("b{}_r{}.json", run.batch_size, run.round);
        write_json(&dir.join("reports").join(name), &run.report)?;
    }
    Ok(())
}

fn aggregate_fields(a: &Aggregate) -> [String; 4] {
    [
        a.success_rate.to_string(),
        a.mean_r1.to_string(),
        opt(a.mean_r2),
        a.runs.to_string(),
    ]
}

/// `defense_sweep.csv`.
pub fn write_defense_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    rows: &[DefenseRow],
) -> Result<()> {
    write_manifest(dir, "defense-sweep", config)?;
    let path = dir.join("defense_sweep.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(DEFENSE_CSV_HEADER)?;
    for row in rows {
        let [s, r1, r2, n] = aggregate_fields(&row.aggregate);
        w.write_record([row.defense.clone(), row.parameter.to_string(), s, r1, r2, n])?;
    }
    finish(w, &path)
}

fn write_hparam_table(path: &Path, first: &str, rows: &[HparamRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        first,
        "batch_size",
        "success_rate",
        "mean_r1",
        "mean_r2",
        "runs",
    ])?;
    for row in rows {
        let [s, r1, r2, n] = aggregate_fields(&row.aggregate);
        w.write_record([
            row.value.to_string(),
            row.batch_size.to_string(),
            s,
            r1,
            r2,
            n,
        ])?;
    }
    finish(w, path)
}

/// `reduction_factor.csv` and `epsilon.csv`, each only when its grid ran.
pub fn write_hparam_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    result: &HparamResult,
) -> Result<()> {
    write_manifest(dir, "hparam-sweep", config)?;
    if !result.reduction_factor.is_empty() {
        write_hparam_table(
            &dir.join("reduction_factor.csv"),
            "reduction_factor",
            &result.reduction_factor,
        )?;
    }
    if !result.epsilon.is_empty() {
        write_hparam_table(&dir.join("epsilon.csv"), "epsilon", &result.epsilon)?;
    }
    Ok(())
}

/// `capacity.csv`.
pub fn write_capacity_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    reports: &[CapacityReport],
) -> Result<()> {
    write_manifest(dir, "capacity", config)?;
    let path = dir.join("capacity.csv");
    write_capacity_csv(create(&path)?, reports)
}
