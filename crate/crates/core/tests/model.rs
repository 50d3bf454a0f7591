mod common;

use nextpoi::autograd::Tape;
use nextpoi::config::EpsilonMode;
use common::grad_check;
use nextpoi::model::Components;
use nextpoi::sample::{all_train_samples, test_set, PredictionSample, SampleSet};

fn batch<'s>(set: &'s SampleSet, user: usize) -> Vec<&'s PredictionSample> {
    set.samples.iter().filter(|s| s.user == user).take(6).collect()
}

#[test]
fn gradients_match_finite_differences() {
    grad_check(
        EpsilonMode::Hard,
        "full",
        &[
            "head.w_y",
            "head.b_y",
            "head.w_aux",
            "short.fuse_w1",
            "short.fuse_w2",
            "long.w_q",
            "long.w_k",
            "long.w_v",
            "long.w_i",
            "long.user_proj",
            "history.fwd.w_x",
            "history.bwd.w_h",
            "current.w_x",
            "short.dilated.w_h",
            "emb.user",
            "emb.slot",
        ],
    );
}

#[test]
fn routing_weight_gradients_in_relaxed_mode() {
    grad_check(
        EpsilonMode::StraightThrough,
        "full",
        &["short.eps_w1", "short.eps_w2", "short.eps_w3", "short.dilated.b", "head.w_y"],
    );
}

#[test]
fn gradients_hold_for_reduced_variants() {
    grad_check(EpsilonMode::Hard, "w/o Short&Self-Att", &["long.w_i", "long.user_proj", "head.w_y"]);
    grad_check(EpsilonMode::Hard, "w/o Long&LSTM", &["short.dilated.w_x", "head.w_y"]);
}

#[test]
fn scores_are_distributions_for_every_variant() {
    let f = common::micro();
    let set = test_set(&f.split, false);
    for tag in Components::TAGS {
        let mut cfg = common::micro_model_config();
        cfg.variant = tag.into();
        let state = common::model(&f, &cfg, 1);
        for s in set.samples.iter().take(10) {
            let p = state.predict_scores(set.timeline(s.user), s, &f.ctx);
            assert_eq!(p.len(), f.split.vocab.num_pois());
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "{tag}: {sum}");
            assert!(p.iter().all(|x| *x >= 0.0 && x.is_finite()));
        }
    }
}

#[test]
fn batched_logits_equal_single_sample_logits() {
    let f = common::micro();
    let state = common::model(&f, &common::micro_model_config(), 2);
    let set = all_train_samples(&f.split);
    for user in 0..f.split.num_users() {
        let b = batch(&set, user);
        let tl = set.timeline(user);
        let joint = state.logits(tl, &b, &f.ctx);
        for (i, s) in b.iter().enumerate() {
            let single = state.logits(tl, &[s], &f.ctx);
            for (x, y) in joint.row(i).iter().zip(single.row(0)) {
                assert!((x - y).abs() < 1e-10, "user {user} sample {i}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn frozen_embeddings_get_no_gradient() {
    let f = common::micro();
    let state = common::model(&f, &common::micro_model_config(), 2);
    let set = all_train_samples(&f.split);
    let b = batch(&set, 0);
    let mut t = Tape::new(&state.store);
    let l = state.loss(&mut t, set.timeline(0), &b, &f.ctx);
    let g = t.backward(l.total);
    for (id, _) in g.iter() {
        assert!(!state.store.name(id).starts_with("frozen"));
    }
    assert!(g.all_finite());
}
