use std::path::{Path, PathBuf};

use icrlsm_core::dataset::{generate_synthetic, load_all, load_dataset, load_meta, save_dataset, Dataset, Split, SyntheticSpec};
use icrlsm_core::dci::{self, DciReport, REPORT_FILE};
use icrlsm_core::model::{load_checkpoint, load_manifest, CHECKPOINT_MANIFEST};
use icrlsm_core::trainer::{train_on_datasets, TrainConfig, TrainOutcome};
use icrlsm_core::{Error, Result};

use crate::config::ExperimentConfig;
use crate::manifest::Failure;

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric { .. } => 1,
        _ => 2,
    }
}

pub fn failure(cell: impl Into<String>, e: &Error) -> Failure {
    Failure {
        cell: cell.into(),
        exit_code: exit_code(e),
        error: e.to_string(),
    }
}

fn synthetic(config: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    generate_synthetic(&SyntheticSpec {
        graph: config.graph.source(),
        scm: config.scm,
        counts: config.counts,
        seed,
    })
}

fn train_config(config: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..config.train.clone()
    }
}

/// One dataset directory per seed.
pub fn generate(config: &ExperimentConfig) -> Result<Vec<Failure>> {
    for &seed in &config.seeds {
        let (train, val, test) = synthetic(config, seed)?;
        let dir = seed_dir(&config.output_dir, seed);
        save_dataset(&dir, &[&train, &val, &test])?;
        println!(
            "seed {seed}: {} with {} edges, {}/{}/{} samples -> {}",
            config.graph.label(),
            train.meta.graph()?.edge_count(),
            train.len(),
            val.len(),
            test.len(),
            dir.display()
        );
    }
    Ok(Vec::new())
}

/// One training run per seed. Without `data_dir` each seed also generates
/// its own dataset into `seed-<s>/data`.
pub fn train(config: &ExperimentConfig) -> Result<Vec<Failure>> {
    let shared = match &config.data_dir {
        Some(dir) => Some(load_all(dir)?),
        None => None,
    };
    let mut failures = Vec::new();
    for &seed in &config.seeds {
        let dir = seed_dir(&config.output_dir, seed);
        let owned;
        let (train_set, val_set) = match &shared {
            Some((train, val, _)) => (train, val),
            None => {
                owned = synthetic(config, seed)?;
                save_dataset(dir.join("data"), &[&owned.0, &owned.1, &owned.2])?;
                (&owned.0, &owned.1)
            }
        };
        match train_on_datasets(train_set, val_set, None, &train_config(config, seed), Some(&dir)) {
            Ok(outcome) => print_outcome(seed, &outcome),
            Err(e) => {
                eprintln!("seed {seed}: {e}");
                failures.push(failure(format!("seed-{seed}"), &e));
            }
        }
    }
    Ok(failures)
}

fn print_outcome(seed: u64, outcome: &TrainOutcome) {
    let r = &outcome.report;
    println!(
        "seed {seed}: {} epochs, best epoch {} with validation loss {:.4}",
        r.history.len(),
        r.best_epoch,
        r.best_val_loss
    );
}

/// A checkpoint directory, or a training run directory holding `best/`.
fn resolve_checkpoint(path: &Path) -> PathBuf {
    if !path.join(CHECKPOINT_MANIFEST).exists() && path.join("best").join(CHECKPOINT_MANIFEST).exists() {
        path.join("best")
    } else {
        path.to_path_buf()
    }
}

/// DCI of a checkpoint on the test split of a dataset, written to `<out>/dci_report.json`.
pub fn eval(config: &ExperimentConfig) -> Result<Vec<Failure>> {
    let checkpoint = config
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("eval needs --checkpoint".into()))?;
    let data = config
        .data_dir
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("eval needs --data".into()))?;
    let checkpoint = resolve_checkpoint(checkpoint);
    let manifest = load_manifest(&checkpoint)?;
    let meta = load_meta(data)?;
    if manifest.n != meta.n || manifest.d != meta.n {
        return Err(Error::Schema(format!(
            "checkpoint {} is sized n={} d={}, dataset {} has n={}",
            checkpoint.display(),
            manifest.n,
            manifest.d,
            data.display(),
            meta.n
        )));
    }
    let (params, _) = load_checkpoint(&checkpoint)?;
    let test = load_dataset(data, Split::Test)?;
    let report = dci::evaluate(&params, &test, &config.regressor)?;
    std::fs::create_dir_all(&config.output_dir).map_err(|e| Error::Io {
        path: config.output_dir.clone(),
        message: e.to_string(),
    })?;
    report.save(config.output_dir.join(REPORT_FILE))?;
    print_report(&report);
    Ok(Vec::new())
}

fn print_report(r: &DciReport) {
    println!("D_total {:.4}  C_total {:.4}  ({} samples)", r.d_total, r.c_total, r.samples);
    if !r.degenerate_rows.is_empty() || !r.degenerate_columns.is_empty() {
        println!("degenerate rows {:?}, columns {:?}", r.degenerate_rows, r.degenerate_columns);
    }
}
