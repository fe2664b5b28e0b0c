use icrlsm_core::dataset::{generate_synthetic, GraphSource, SplitCounts, SyntheticSpec};
use icrlsm_core::model::load_checkpoint;
use icrlsm_core::rng::{substream, Stream};
use icrlsm_core::scm::ScmInit;
use icrlsm_core::trainer::{train_on_datasets, validation_loss, Batch, Noise, TrainConfig};

#[test]
fn desk_scale_g6_training_loss_decreases() {
    let spec = SyntheticSpec {
        graph: GraphSource::Registry("G6".into()),
        scm: ScmInit::default(),
        counts: SplitCounts::DESK,
        seed: 3,
    };
    let (train, val, _) = generate_synthetic(&spec).unwrap();
    let config = TrainConfig {
        epochs: 10,
        seed: 3,
        deterministic: true,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let out = train_on_datasets(&train, &val, None, &config, Some(dir.path())).unwrap();
    let losses: Vec<f64> = out.report.history.iter().map(|r| r.train.unwrap().total).collect();
    assert_eq!(losses.len(), 10);
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "training loss went up: {losses:?}");
    }

    // reloading the best checkpoint reproduces its validation loss
    let (best, manifest) = load_checkpoint(dir.path().join("best")).unwrap();
    assert_eq!(manifest.epoch, Some(out.report.best_epoch));
    let val_batch = Batch::from_samples(&val.samples).unwrap();
    let noise = Noise::draw(val_batch.len(), 4, &mut substream(3, Stream::ValNoise, 0));
    let again = validation_loss(&best, &val_batch, &noise, &config).unwrap().elbo_loss;
    assert!((again - out.report.best_val_loss).abs() < 1e-6);
    assert_eq!(manifest.val_loss, Some(out.report.best_val_loss));
}
