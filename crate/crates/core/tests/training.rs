use rand::{Rng as _, SeedableRng};
use steerlab::backbone::BackboneConfig;
use steerlab::data::{FrameSet, Normalizer, Recording, Sample};
use steerlab::heads::{HeadParams, HeadRegistry};
use steerlab::model::{GridConfig, Model, ModelSpec, SoftTargetConfig};
use steerlab::rng::Rng;
use steerlab::trainer::{fit, validation_mae, TrainConfig};

/// Label `30 x0 - 10 x1` with a little noise.
fn recording(n: usize, seed: u64) -> Recording {
    let mut rng = Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            Sample {
                t: i as f64 * 0.1,
                s: 0.0,
                x: 0.0,
                y: 0.0,
                heading: 0.0,
                speed: 0.0,
                eff_deg: 0.0,
                label: 30.0 * x[0] - 10.0 * x[1] + rng.gen_range(-3.0..3.0),
                fork_window: false,
                observation: x.to_vec(),
            }
        })
        .collect();
    Recording {
        track_seed: seed,
        dt: 0.1,
        samples,
    }
}

fn model(head: &str) -> Model {
    let spec = ModelSpec {
        head: head.into(),
        params: HeadParams::default(),
        backbone: BackboneConfig {
            widths: vec![16],
            ..BackboneConfig::default()
        },
        grid: GridConfig::default(),
        soft_targets: SoftTargetConfig::default(),
        input_dim: 2,
    };
    Model::new(spec, Normalizer::identity(2), &HeadRegistry::default(), &mut Rng::seed_from_u64(1)).unwrap()
}

fn train_cfg(restore_best: bool) -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        max_epochs: 12,
        batches_per_epoch: 4,
        lr: 0.03,
        patience: 0,
        restore_best,
        ..TrainConfig::default()
    }
}

#[test]
fn fit_restores_the_best_epoch_by_default() {
    let (train, val) = (recording(256, 2), recording(64, 3));
    let id = Normalizer::identity(2);
    let (ts, vs) = (FrameSet::new([&train], &id).unwrap(), FrameSet::new([&val], &id).unwrap());
    let mut m = model("regression");
    let report = fit(&mut m, &ts, &vs, &train_cfg(true), &mut Rng::seed_from_u64(4)).unwrap();
    assert!(report.best_val_mae < report.curve[0].val_mae);
    let best = report.curve.iter().map(|e| e.val_mae).fold(f64::INFINITY, f64::min);
    assert_eq!(report.best_val_mae, best);
    assert_eq!(validation_mae(&m, &vs).unwrap(), best);
}

#[test]
fn fit_can_keep_the_last_parameters() {
    let (train, val) = (recording(256, 2), recording(64, 3));
    let id = Normalizer::identity(2);
    let (ts, vs) = (FrameSet::new([&train], &id).unwrap(), FrameSet::new([&val], &id).unwrap());
    let mut m = model("mdn");
    let report = fit(&mut m, &ts, &vs, &train_cfg(false), &mut Rng::seed_from_u64(4)).unwrap();
    assert_eq!(report.curve.len(), 13);
    assert_eq!(validation_mae(&m, &vs).unwrap(), report.curve.last().unwrap().val_mae);
}

#[test]
fn full_batch_mae_does_not_move_between_balanced_modes() {
    let samples = (0..64)
        .map(|i| Sample {
            t: i as f64 * 0.1,
            s: 0.0,
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            speed: 0.0,
            eff_deg: 0.0,
            label: if i % 2 == 0 { 200.0 } else { -200.0 },
            fork_window: false,
            observation: vec![0.3, 0.7],
        })
        .collect();
    let rec = Recording {
        track_seed: 0,
        dt: 0.1,
        samples,
    };
    let set = FrameSet::new([&rec], &Normalizer::identity(2)).unwrap();
    let mut m = model("regression");
    let before = m.infer(&rec.samples[0].observation).unwrap().command;
    assert!(before.abs() < 200.0, "{before}");
    let cfg = TrainConfig {
        batch_size: 64,
        weight_decay: 0.0,
        ..train_cfg(false)
    };
    fit(&mut m, &set, &set, &cfg, &mut Rng::seed_from_u64(4)).unwrap();
    assert_eq!(m.infer(&rec.samples[0].observation).unwrap().command, before);
}
