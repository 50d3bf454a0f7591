//! Training loop: Adam, validation-driven learning-rate halving, early
//! stopping and checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::config::{EvalConfig, PipelineConfig, TrainConfig};
use crate::context::ContextStats;
use crate::corpus::CorpusSplit;
use crate::embedding::FrozenEmbeddings;
use crate::error::{Error, Result};
use crate::metrics::evaluate_set;
use crate::model::ModelState;
use crate::nn::Adam;
use crate::sample::{test_set, train_sets, PredictionSample, SampleSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_recall1: Option<f64>,
    pub test_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    MaxSteps,
    EarlyStop,
}

pub struct TrainOutcome {
    /// Parameters of the best epoch.
    pub state: ModelState,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub steps: usize,
    pub stop: StopReason,
}

/// Data for [`fit`].
pub struct FitData<'a, 's> {
    pub train: &'a SampleSet<'s>,
    pub val: Option<&'a SampleSet<'s>>,
    /// Evaluated each epoch for the loss curve only.
    pub test: Option<&'a SampleSet<'s>>,
    pub ctx: &'a ContextStats,
}

#[derive(Serialize)]
struct NonFiniteDump<'a> {
    epoch: usize,
    step: usize,
    user: usize,
    samples: Vec<(usize, usize, u32)>,
    nll: f64,
    aux: f64,
    lr: f64,
    grads_finite: bool,
    note: &'a str,
}

fn mean_loss(state: &ModelState, set: &SampleSet, ctx: &ContextStats, batch: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    crate::metrics::score_set(state, set, ctx, batch, |b| {
        sum += b.loss * b.samples.len() as f64;
        n += b.samples.len();
        Ok(())
    })?;
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

fn write_curve(dir: &Path, history: &[EpochRecord]) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut s = String::from("epoch,steps,lr,train_loss,val_loss,val_recall1,test_loss,seconds\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{:e},{:.6},{},{},{},{:.2}",
            r.epoch,
            r.steps,
            r.lr,
            r.train_loss,
            opt(r.val_loss),
            opt(r.val_recall1),
            opt(r.test_loss),
            r.seconds
        );
    }
    let p = dir.join("loss_curve.csv");
    fs::write(&p, s).map_err(|e| Error::io(&p, e))
}

/// Trains `state` in place and returns the best epoch's parameters.
///
/// With a validation set the selection criterion is validation Rec@1;
/// otherwise it is the training loss.
pub fn fit(
    mut state: ModelState,
    data: &FitData,
    cfg: &TrainConfig,
    eval: &EvalConfig,
    run_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if data.train.is_empty() {
        return Err(Error::data("no training samples"));
    }
    if !(cfg.learning_rate > 0.0) || cfg.batch_size == 0 {
        return Err(Error::Usage("learning_rate and batch_size must be positive".into()));
    }
    let mut adam = Adam::new(cfg.learning_rate, cfg.weight_decay, Some(cfg.clip_norm).filter(|c| *c > 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let val_eval = EvalConfig { ks: vec![1], ..eval.clone() };
    let ckpt = run_dir.map(|d| d.join("checkpoints"));

    let mut best: Option<(f64, usize, ModelState)> = None;
    let mut bad = 0usize;
    let mut steps = 0usize;
    let mut history = Vec::new();
    let mut stop = StopReason::MaxEpochs;

    'epochs: for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in data.train.shuffled_batches(cfg.batch_size, &mut rng) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                stop = StopReason::MaxSteps;
                break;
            }
            let samples: Vec<&PredictionSample> = batch.samples.iter().map(|&i| &data.train.samples[i]).collect();
            let tl = data.train.timeline(batch.user);
            let mut t = Tape::new(&state.store);
            let loss = state.loss(&mut t, tl, &samples, data.ctx);
            let value = t.scalar(loss.total);
            let grads = t.backward(loss.total);
            drop(t);
            let grads_finite = grads.all_finite();
            if !value.is_finite() || !grads_finite {
                let dump = NonFiniteDump {
                    epoch,
                    step: steps,
                    user: batch.user,
                    samples: samples.iter().map(|s| (s.current, s.prefix_len, s.target)).collect(),
                    nll: loss.nll,
                    aux: loss.aux,
                    lr: adam.lr,
                    grads_finite,
                    note: "non-finite loss or gradient",
                };
                let mut msg = format!("non-finite loss {value} at epoch {epoch} step {steps}");
                if let Some(dir) = run_dir {
                    let p = dir.join("nonfinite.json");
                    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                    fs::write(&p, serde_json::to_string_pretty(&dump)?).map_err(|e| Error::io(&p, e))?;
                    msg.push_str(&format!("; diagnostics in {}", p.display()));
                }
                return Err(Error::Numeric(msg));
            }
            adam.step(&mut state.store, grads);
            loss_sum += value * samples.len() as f64;
            seen += samples.len();
            steps += 1;
        }
        if seen == 0 {
            break;
        }
        let train_loss = loss_sum / seen as f64;

        let (val_loss, val_recall1) = match data.val.filter(|v| !v.is_empty()) {
            Some(v) => {
                let r = evaluate_set(&state, v, data.ctx, &val_eval, cfg.batch_size)?;
                (Some(r.mean_loss), Some(r.recall_at(1)))
            }
            None => (None, None),
        };
        let test_loss = match data.test {
            Some(s) => Some(mean_loss(&state, s, data.ctx, cfg.batch_size)?),
            None => None,
        };
        let rec = EpochRecord {
            epoch,
            steps,
            lr: adam.lr,
            train_loss,
            val_loss,
            val_recall1,
            test_loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch} steps {steps} lr {:.2e} train {train_loss:.4} val Rec@1 {}",
            adam.lr,
            val_recall1.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
        );
        history.push(rec);

        let score = val_recall1.unwrap_or(-train_loss);
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch, state.clone()));
            bad = 0;
            if let Some(c) = &ckpt {
                state.save(&c.join("best"))?;
            }
        } else {
            bad += 1;
            if cfg.lr_patience > 0 && bad % cfg.lr_patience == 0 {
                adam.lr /= 2.0;
                info!("no improvement for {bad} epochs; learning rate now {:.2e}", adam.lr);
            }
        }
        if let Some(c) = &ckpt {
            state.save(&c.join("last"))?;
        }
        if let Some(d) = run_dir {
            write_curve(d, &history)?;
        }
        if stop == StopReason::MaxSteps {
            break 'epochs;
        }
        if cfg.early_stop_patience > 0 && bad >= cfg.early_stop_patience {
            stop = StopReason::EarlyStop;
            break;
        }
    }
    let (_, best_epoch, best_state) = match best {
        Some(b) => b,
        None => {
            warn!("training ran no epochs; returning the initial parameters");
            (0.0, 0, state)
        }
    };
    Ok(TrainOutcome {
        state: best_state,
        best_epoch,
        history,
        steps,
        stop,
    })
}

/// Builds a fresh model and trains it on the split's training trajectories.
pub fn train(
    split: &CorpusSplit,
    ctx: &ContextStats,
    frozen: FrozenEmbeddings,
    cfg: &PipelineConfig,
    run_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let state = ModelState::new(&cfg.model, frozen, split.num_users(), cfg.train.seed)?;
    let (train, val) = train_sets(split, cfg.train.val_frac);
    let test = test_set(split, cfg.eval.strict_train_history);
    info!(
        "{} training samples, {} validation samples, {} parameters",
        train.len(),
        val.len(),
        state.store.num_scalars()
    );
    let data = FitData {
        train: &train,
        val: Some(&val),
        test: Some(&test),
        ctx,
    };
    fit(state, &data, &cfg.train, &cfg.eval, run_dir)
}
