#![allow(dead_code)]

use ndarray::Array2;
use nextpoi::autograd::Tape;
use nextpoi::config::{CorpusConfig, EpsilonMode, EvalConfig, ModelConfig, TrainConfig};
use nextpoi::context::ContextStats;
use nextpoi::corpus::CorpusSplit;
use nextpoi::embedding::FrozenEmbeddings;
use nextpoi::metrics::evaluate_set;
use nextpoi::model::ModelState;
use nextpoi::sample::{all_train_samples, PredictionSample, SampleSet};
use nextpoi::train::{fit, FitData, StopReason};
use nextpoi::synthetic::{self, SyntheticConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub split: CorpusSplit,
    pub ctx: ContextStats,
    pub frozen: FrozenEmbeddings,
}

pub fn micro_corpus_config() -> CorpusConfig {
    CorpusConfig {
        min_poi_visits: 1,
        min_user_trajs: 3,
        ..CorpusConfig::default()
    }
}

/// About 20 POIs, a handful of users, 8-d frozen embeddings.
pub fn micro() -> Fixture {
    let syn = SyntheticConfig {
        users: 5,
        pois: 20,
        categories: 5,
        clusters: 2,
        days: 10,
        seed: 11,
        ..SyntheticConfig::default()
    };
    build(&syn, &micro_corpus_config(), 8)
}

pub fn build(syn: &SyntheticConfig, corpus: &CorpusConfig, dim: usize) -> Fixture {
    let split = synthetic::corpus(syn, corpus).unwrap();
    let ctx = ContextStats::build(&split, &Default::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rand_mat = |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0));
    let frozen = FrozenEmbeddings {
        poi: rand_mat(split.vocab.num_pois(), dim),
        category: rand_mat(split.vocab.num_categories(), dim),
    };
    Fixture { split, ctx, frozen }
}

pub fn micro_model_config() -> ModelConfig {
    ModelConfig {
        user_dim: 4,
        slot_dim: 3,
        weekday_dim: 2,
        hidden: 8,
        init_range: 0.3,
        ..ModelConfig::default()
    }
}

pub fn model(f: &Fixture, cfg: &ModelConfig, seed: u64) -> ModelState {
    ModelState::new(cfg, f.frozen.clone(), f.split.num_users(), seed).unwrap()
}

fn loss_value(state: &ModelState, set: &SampleSet, samples: &[&PredictionSample], f: &Fixture) -> f64 {
    let mut t = Tape::new(&state.store);
    let l = state.loss(&mut t, set.timeline(samples[0].user), samples, &f.ctx);
    t.scalar(l.total)
}

/// Central finite differences against the tape gradient for a few
/// entries of each named parameter; panics on a mismatch.
pub fn grad_check(mode: EpsilonMode, variant: &str, names: &[&str]) {
    let f = micro();
    let mut cfg = micro_model_config();
    cfg.epsilon_mode = mode;
    cfg.variant = variant.into();
    let mut state = model(&f, &cfg, 5);
    let set = all_train_samples(&f.split);
    // A user with history, so every branch is exercised.
    let samples: Vec<&PredictionSample> = set
        .samples
        .iter()
        .filter(|s| s.user == 1 && !s.history.is_empty())
        .take(5)
        .collect();
    assert!(!samples.is_empty());

    let mut t = Tape::new(&state.store);
    let l = state.loss(&mut t, set.timeline(1), &samples, &f.ctx);
    let grads = t.backward(l.total);
    drop(t);

    let h = 1e-6;
    let mut checked = 0;
    for name in names {
        let id = state.store.id(name).unwrap_or_else(|| panic!("no param {name}"));
        let analytic = grads.get(id).cloned().unwrap_or_else(|| state.store.get(id).mapv(|_| 0.0));
        let (r, c) = analytic.dim();
        let picks: Vec<(usize, usize)> = (0..6).map(|k| ((k * 7) % r, (k * 5 + k / 2) % c)).collect();
        for (i, j) in picks {
            let orig = state.store.get(id)[[i, j]];
            state.store.get_mut(id)[[i, j]] = orig + h;
            let up = loss_value(&state, &set, &samples, &f);
            state.store.get_mut(id)[[i, j]] = orig - h;
            let down = loss_value(&state, &set, &samples, &f);
            state.store.get_mut(id)[[i, j]] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[[i, j]];
            let scale = a.abs().max(numeric.abs());
            if scale > 1e-6 {
                let rel = (a - numeric).abs() / scale;
                assert!(rel < 1e-3, "{name}[{i},{j}]: analytic {a} numeric {numeric} rel {rel}");
                checked += 1;
            } else {
                assert!((a - numeric).abs() < 1e-8, "{name}[{i},{j}]: {a} vs {numeric}");
            }
        }
    }
    assert!(checked > names.len(), "too few non-trivial gradient entries ({checked})");
}


/// Trains on the first 20 training trajectories of user 0 for 200 steps
/// and returns the training-set Rec@1.
pub fn overfit_one_user() -> f64 {
    let syn = SyntheticConfig {
        users: 2,
        pois: 24,
        categories: 6,
        clusters: 1,
        days: 34,
        routine_prob: 0.7,
        seed: 21,
        ..SyntheticConfig::default()
    };
    let f = build(&syn, &micro_corpus_config(), 8);
    let n = 20;
    assert!(f.split.train[0].len() >= n);
    let all = all_train_samples(&f.split);
    let set = SampleSet {
        timelines: all.timelines.clone(),
        samples: all.samples.iter().filter(|s| s.user == 0 && s.current < n).cloned().collect(),
    };
    let cfg = ModelConfig {
        hidden: 16,
        ..micro_model_config()
    };
    let tcfg = TrainConfig {
        learning_rate: 0.01,
        weight_decay: 0.0,
        batch_size: 8,
        max_steps: Some(200),
        max_epochs: 1000,
        early_stop_patience: 0,
        lr_patience: 0,
        ..TrainConfig::default()
    };
    let data = FitData {
        train: &set,
        val: None,
        test: None,
        ctx: &f.ctx,
    };
    let out = fit(model(&f, &cfg, 4), &data, &tcfg, &EvalConfig::default(), None).unwrap();
    assert_eq!(out.steps, 200);
    assert_eq!(out.stop, StopReason::MaxSteps);
    evaluate_set(&out.state, &set, &f.ctx, &EvalConfig::default(), 16).unwrap().recall_at(1)
}
