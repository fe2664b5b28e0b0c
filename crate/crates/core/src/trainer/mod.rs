//! Minibatch Adam training of the augmented model.
//!
//! Shuffling, per-step noise and validation noise come from separate
//! substreams of the run seed, so a run is a pure function of its inputs.
//! Training is single-threaded; the learning rate follows a per-step cosine
//! decay and the checkpoint with the lowest validation negative ELBO wins.

pub mod objective;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, AicmParameters, CheckpointInfo, ModelConfig};
use crate::nn::Adam;
use crate::rng::{substream, Stream};

pub use objective::{
    consistency_loss, copy_assemble, elbo_loss, gradient_check, loss_and_gradient, Batch, LossBreakdown, LossWeights,
    Noise,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Rows per validation forward pass.
    pub val_chunk: usize,
    /// Record zero for every wall-clock field so that reruns write identical files.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 100,
            lr_start: 3e-4,
            lr_end: 1e-8,
            weights: LossWeights::default(),
            seed: 0,
            val_chunk: 2048,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.val_chunk == 0 {
            return Err(Error::InvalidArgument("batch_size and val_chunk must be positive".into()));
        }
        if !(self.lr_start > 0.0 && self.lr_end >= 0.0 && self.lr_end <= self.lr_start) {
            return Err(Error::InvalidArgument("need lr_start > 0 and 0 <= lr_end <= lr_start".into()));
        }
        let w = &self.weights;
        if [w.beta_kl, w.consistency_weight, w.delta_recon_weight].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Cosine decay from `start` at step 0 to `end` at step `total - 1`.
pub fn cosine_lr(step: usize, total: usize, start: f64, end: f64) -> f64 {
    if total <= 1 {
        return end;
    }
    let frac = step.min(total - 1) as f64 / (total - 1) as f64;
    end + 0.5 * (start - end) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train: Option<LossBreakdown>,
    pub val: LossBreakdown,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub config_hash: String,
    /// Validation loss of the initialization, before any step.
    pub initial_val_loss: f64,
    /// One record per completed epoch, starting at 1.
    pub history: Vec<EpochRecord>,
    /// 0 when no epoch ran and the initialization is returned.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub steps: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: AicmParameters,
    pub last: AicmParameters,
    pub report: TrainReport,
}

/// Mean negative ELBO (no consistency term) over `data` at fixed `noise`.
pub fn validation_loss(params: &AicmParameters, data: &Batch, noise: &Noise, config: &TrainConfig) -> Result<LossBreakdown> {
    let weights = LossWeights {
        consistency_weight: 0.0,
        ..config.weights
    };
    let mut acc = LossBreakdown::default();
    let rows = data.len();
    let mut start = 0;
    while start < rows {
        let idx: Vec<usize> = (start..(start + config.val_chunk).min(rows)).collect();
        let part = objective::evaluate(params, &data.select(&idx), &noise.select(&idx), &weights, None)?;
        acc.add_scaled(&part, idx.len() as f64 / rows as f64);
        start += idx.len();
    }
    Ok(acc)
}

fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e))?;
    w.write_record([
        "epoch", "lr", "train_total", "train_elbo", "val_elbo", "val_rec_x", "val_rec_x_tilde", "val_rec_delta",
        "val_kl_e", "val_kl_v", "val_kl_transition", "seconds",
    ])
    .map_err(|e| Error::io(path, e))?;
    for r in history {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            r.epoch.to_string(),
            r.lr.to_string(),
            opt(r.train.map(|t| t.total)),
            opt(r.train.map(|t| t.elbo_loss)),
            r.val.elbo_loss.to_string(),
            r.val.rec_x.to_string(),
            r.val.rec_x_tilde.to_string(),
            r.val.rec_delta.to_string(),
            r.val.kl_e.to_string(),
            r.val.kl_v.to_string(),
            r.val.kl_transition.to_string(),
            r.seconds.to_string(),
        ])
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Trains `init` on `train`, selecting by validation loss on `val`.
///
/// With `out_dir`, writes `history.csv`, `report.json` and the `best/` and
/// `last/` checkpoints. A non-finite loss or gradient aborts with
/// [`Error::Numeric`]; if `out_dir` is set the last finite parameters are saved
/// to `diverged/` first and the error carries that path.
pub fn train(
    init: AicmParameters,
    train: &Batch,
    val: &Batch,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be non-empty".into()));
    }
    let clock = Instant::now();
    let elapsed = || if config.deterministic { 0.0 } else { clock.elapsed().as_secs_f64() };
    let n = init.n();
    let config_hash = config.hash();
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let val_noise = Noise::draw(val.len(), n, &mut substream(config.seed, Stream::ValNoise, 0));

    let mut params = init;
    let mut adam = Adam::new(params.values().len());
    let initial = validation_loss(&params, val, &val_noise, config)?;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_val = initial.elbo_loss;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();

    let diverged = |params: &AicmParameters, term: String| -> Error {
        let checkpoint = out_dir.and_then(|dir| {
            let path = dir.join("diverged");
            let info = CheckpointInfo {
                train_config_hash: Some(config_hash.clone()),
                ..Default::default()
            };
            save_checkpoint(&path, params, &info).ok().map(|_| path)
        });
        Error::Numeric { term, checkpoint }
    };

    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut substream(config.seed, Stream::Batching, epoch as u64));
        let mut train_acc = LossBreakdown::default();
        let mut lr = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = train.select(chunk);
            let noise = Noise::draw(chunk.len(), n, &mut substream(config.seed, Stream::TrainNoise, step as u64));
            let (loss, grad) = match loss_and_gradient(&params, &batch, &noise, &config.weights) {
                Ok(v) => v,
                Err(Error::Numeric { term, .. }) => return Err(diverged(&params, term)),
                Err(e) => return Err(e),
            };
            lr = cosine_lr(step, total_steps, config.lr_start, config.lr_end);
            adam.step(params.values_mut(), &grad, lr);
            train_acc.add_scaled(&loss, chunk.len() as f64 / train.len() as f64);
            step += 1;
        }
        if let Some(k) = params.values().iter().position(|v| !v.is_finite()) {
            return Err(diverged(&best, format!("parameter[{k}]")));
        }
        let val_loss = match validation_loss(&params, val, &val_noise, config) {
            Ok(v) => v,
            Err(Error::Numeric { term, .. }) => return Err(diverged(&params, term)),
            Err(e) => return Err(e),
        };
        if epoch == 1 || val_loss.elbo_loss < best_val {
            best_val = val_loss.elbo_loss;
            best_epoch = epoch;
            best = params.clone();
        }
        history.push(EpochRecord {
            epoch,
            lr,
            train: Some(train_acc),
            val: val_loss,
            seconds: elapsed(),
        });
    }

    let report = TrainReport {
        config: config.clone(),
        config_hash: config_hash.clone(),
        initial_val_loss: initial.elbo_loss,
        history,
        best_epoch,
        best_val_loss: best_val,
        steps: step,
        wall_seconds: elapsed(),
    };
    if let Some(dir) = out_dir {
        write_outputs(dir, &best, &params, &report)?;
    }
    Ok(TrainOutcome {
        best,
        last: params,
        report,
    })
}

fn write_outputs(dir: &Path, best: &AicmParameters, last: &AicmParameters, report: &TrainReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let last_epoch = report.history.last().map(|r| r.epoch);
    let last_val = report.history.last().map(|r| r.val.elbo_loss);
    save_checkpoint(
        dir.join("best"),
        best,
        &CheckpointInfo {
            train_config_hash: Some(report.config_hash.clone()),
            epoch: Some(report.best_epoch),
            val_loss: Some(report.best_val_loss),
        },
    )?;
    save_checkpoint(
        dir.join("last"),
        last,
        &CheckpointInfo {
            train_config_hash: Some(report.config_hash.clone()),
            epoch: last_epoch,
            val_loss: last_val,
        },
    )?;
    write_history(&dir.join("history.csv"), &report.history)?;
    let rp: PathBuf = dir.join("report.json");
    fs::write(&rp, serde_json::to_string_pretty(report).expect("report serializes")).map_err(|e| Error::io(&rp, e))
}

/// Initializes a model sized to the data from `config.seed` and trains it.
pub fn train_on_datasets(
    train_set: &Dataset,
    val_set: &Dataset,
    model: Option<ModelConfig>,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if train_set.n() != val_set.n() {
        return Err(Error::InvalidArgument("train and validation sets have different n".into()));
    }
    let n = train_set.n();
    let model = model.unwrap_or_else(|| ModelConfig::new(n, n));
    if model.n != n || model.d != n {
        return Err(Error::InvalidArgument(format!("model is sized {}x{}, data has n = d = {n}", model.n, model.d)));
    }
    let init = AicmParameters::init(model, config.seed)?;
    let train_batch = Batch::from_samples(&train_set.samples)?;
    let val_batch = Batch::from_samples(&val_set.samples)?;
    train(init, &train_batch, &val_batch, config, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, GraphSource, SplitCounts, SyntheticSpec};
    use crate::model::load_checkpoint;
    use crate::scm::ScmInit;

    fn small_data(seed: u64) -> (Batch, Batch) {
        let spec = SyntheticSpec {
            graph: GraphSource::Registry("G6".into()),
            scm: ScmInit::default(),
            counts: SplitCounts { train: 200, val: 50, test: 1 },
            seed,
        };
        let (train_set, val_set, _) = generate_synthetic(&spec).unwrap();
        (Batch::from_samples(&train_set.samples).unwrap(), Batch::from_samples(&val_set.samples).unwrap())
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            batch_size: 32,
            epochs: 3,
            lr_start: 1e-3,
            seed: 9,
            deterministic: true,
            ..Default::default()
        }
    }

    fn small_model(n: usize) -> ModelConfig {
        let mut m = ModelConfig::new(n, n);
        m.coder_hidden = vec![16, 16];
        m.node_hidden = vec![8];
        m.prior_hidden = vec![4];
        m
    }

    #[test]
    fn schedule_is_monotone_and_hits_endpoints() {
        let total = 1000;
        let lrs: Vec<f64> = (0..total).map(|k| cosine_lr(k, total, 3e-4, 1e-8)).collect();
        assert_eq!(lrs[0], 3e-4);
        assert!((lrs[total - 1] - 1e-8).abs() < 1e-20);
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(cosine_lr(0, 1, 3e-4, 1e-8), 1e-8);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (train_b, val_b) = small_data(1);
        let init = AicmParameters::init(small_model(4), 4).unwrap();
        let config = TrainConfig { epochs: 0, ..small_config() };
        let out = train(init.clone(), &train_b, &val_b, &config, None).unwrap();
        assert_eq!(out.best, init);
        assert_eq!(out.report.best_epoch, 0);
        assert!(out.report.history.is_empty());
        assert_eq!(out.report.best_val_loss, out.report.initial_val_loss);
    }

    #[test]
    fn training_is_deterministic_and_improves() {
        let (train_b, val_b) = small_data(2);
        let init = AicmParameters::init(small_model(4), 4).unwrap();
        let a = train(init.clone(), &train_b, &val_b, &small_config(), None).unwrap();
        let b = train(init, &train_b, &val_b, &small_config(), None).unwrap();
        assert_eq!(a.best.values(), b.best.values());
        assert_eq!(a.report, b.report);
        assert_eq!(a.report.history.len(), 3);
        assert!(a.report.best_val_loss < a.report.initial_val_loss);
        let min = a.report.history.iter().map(|r| r.val.elbo_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(a.report.best_val_loss, min);
        assert_eq!(a.report.steps, 3 * 200usize.div_ceil(32));
    }

    #[test]
    fn outputs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (train_b, val_b) = small_data(3);
        let init = AicmParameters::init(small_model(4), 1).unwrap();
        let out = train(init, &train_b, &val_b, &small_config(), Some(dir.path())).unwrap();
        let (best, manifest) = load_checkpoint(dir.path().join("best")).unwrap();
        assert_eq!(manifest.epoch, Some(out.report.best_epoch));
        let x = val_b.x.view();
        let want = out.best.infer_causal_batch(x);
        let got = best.infer_causal_batch(x);
        assert!(want.iter().zip(got.iter()).all(|(a, b)| (a - b).abs() <= 1e-6));
        let noise = Noise::draw(val_b.len(), 4, &mut substream(9, Stream::ValNoise, 0));
        let reloaded = validation_loss(&best, &val_b, &noise, &small_config()).unwrap();
        assert!((reloaded.elbo_loss - out.report.best_val_loss).abs() < 1e-9);
        assert!(dir.path().join("history.csv").exists());
        let report: TrainReport = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(report.best_epoch, out.report.best_epoch);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (train_b, val_b) = small_data(4);
        let init = AicmParameters::init(small_model(4), 1).unwrap();
        let config = TrainConfig { batch_size: 0, ..small_config() };
        assert!(matches!(train(init, &train_b, &val_b, &config, None), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn divergence_reports_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let (mut train_b, val_b) = small_data(5);
        train_b.x[(0, 0)] = f64::INFINITY;
        train_b.dx[(0, 0)] = f64::NEG_INFINITY;
        let init = AicmParameters::init(small_model(4), 1).unwrap();
        let config = TrainConfig { batch_size: 200, ..small_config() };
        match train(init, &train_b, &val_b, &config, Some(dir.path())) {
            Err(Error::Numeric { checkpoint: Some(path), .. }) => assert!(path.join("params.bin").exists()),
            other => panic!("expected a numeric failure, got {other:?}"),
        }
    }
}
