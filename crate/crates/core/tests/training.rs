mod common;

use nextpoi::config::{EvalConfig, PipelineConfig, TrainConfig};
use nextpoi::error::Error;
use nextpoi::model::ModelState;
use nextpoi::sample::all_train_samples;
use nextpoi::train::{fit, train, FitData};

#[test]
fn overfits_one_user() {
    let rec1 = common::overfit_one_user();
    assert!(rec1 >= 0.9, "Rec@1 {rec1}");
}

fn quick_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.model = common::micro_model_config();
    cfg.train = TrainConfig {
        learning_rate: 0.005,
        batch_size: 8,
        max_epochs: 3,
        ..TrainConfig::default()
    };
    cfg
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let f = common::micro();
    let cfg = quick_config();
    let dir = tempfile::tempdir().unwrap();
    let a = train(&f.split, &f.ctx, f.frozen.clone(), &cfg, Some(dir.path())).unwrap();
    let b = train(&f.split, &f.ctx, f.frozen.clone(), &cfg, None).unwrap();
    assert_eq!(a.history.len(), 3);
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        assert_eq!(x.val_recall1, y.val_recall1);
    }
    for id in a.state.store.ids() {
        assert_eq!(a.state.store.get(id), b.state.store.get(id));
    }

    let curve = std::fs::read_to_string(dir.path().join("loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 4);
    assert!(curve.lines().nth(1).unwrap().split(',').all(|c| !c.is_empty()));

    let best = ModelState::load(&dir.path().join("checkpoints/best")).unwrap();
    assert_eq!(best.store.len(), a.state.store.len());
    for id in a.state.store.ids() {
        let name = a.state.store.name(id);
        let other = best.store.get(best.store.id(name).unwrap());
        for (x, y) in a.state.store.get(id).iter().zip(other) {
            assert_eq!(x.to_bits(), y.to_bits(), "{name}");
        }
    }
    assert!(ModelState::load(&dir.path().join("checkpoints/last")).is_ok());
    let set = all_train_samples(&f.split);
    let s = &set.samples[3];
    let tl = set.timeline(s.user);
    assert_eq!(
        a.state.predict_scores(tl, s, &f.ctx),
        best.predict_scores(tl, s, &f.ctx)
    );
}

#[test]
fn training_reduces_loss() {
    let f = common::micro();
    let mut cfg = quick_config();
    cfg.train.max_epochs = 4;
    let out = train(&f.split, &f.ctx, f.frozen.clone(), &cfg, None).unwrap();
    let first = out.history.first().unwrap().train_loss;
    let last = out.history.last().unwrap().train_loss;
    assert!(last < first, "{first} -> {last}");
    assert!(out.history.iter().all(|r| r.test_loss.is_some_and(f64::is_finite)));
}

#[test]
fn non_finite_loss_is_a_numeric_error() {
    let f = common::micro();
    let mut state = common::model(&f, &common::micro_model_config(), 1);
    let id = state.store.id("head.b_y").unwrap();
    state.store.get_mut(id)[[0, 0]] = f64::NAN;
    let set = all_train_samples(&f.split);
    let dir = tempfile::tempdir().unwrap();
    let data = FitData {
        train: &set,
        val: None,
        test: None,
        ctx: &f.ctx,
    };
    let err = fit(state, &data, &TrainConfig::default(), &EvalConfig::default(), Some(dir.path()))
        .err()
        .unwrap();
    assert!(matches!(err, Error::Numeric(_)));
    assert_eq!(err.exit_code(), 3);
    assert!(dir.path().join("nonfinite.json").exists());
}
