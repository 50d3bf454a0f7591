//! Ranking metrics and evaluation.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autograd::{Mat, Tape};
use crate::config::{Aggregation, EvalConfig};
use crate::context::ContextStats;
use crate::corpus::CorpusSplit;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::sample::{test_set, PredictionSample, SampleSet};

/// 1-based position of `target` when items are sorted by descending score;
/// equal scores are ordered by index.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let s = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(i, &x)| x > s || (x == s && i < target))
        .count()
}

/// Items ordered by descending score, ties by index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// 1 if `target` is among the first `k` entries of `ranked`.
pub fn recall_at_k(ranked: &[usize], target: usize, k: usize) -> f64 {
    recall_from_rank(ranked.iter().position(|&x| x == target).map(|p| p + 1), k)
}

/// `1/log2(rank+1)` if `target` is within the first `k` entries, else 0.
pub fn ndcg_at_k(ranked: &[usize], target: usize, k: usize) -> f64 {
    ndcg_from_rank(ranked.iter().position(|&x| x == target).map(|p| p + 1), k)
}

pub fn recall_from_rank(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    }
}

pub fn ndcg_from_rank(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}

/// Aggregated Recall@K / NDCG@K plus run metadata.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub variant: String,
    pub dataset: String,
    pub seed: u64,
    pub aggregation: Aggregation,
    pub predictions: usize,
    pub users: usize,
    /// Mean loss (NLL plus auxiliary term) over the evaluated samples.
    pub mean_loss: f64,
    pub runtime_secs: f64,
}

impl EvalReport {
    pub fn recall_at(&self, k: usize) -> f64 {
        self.recall.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg.get(&k).copied().unwrap_or(f64::NAN)
    }

    /// One-line summary such as `Rec@1 0.1935 NDCG@1 0.1935 ...`.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for (k, r) in &self.recall {
            s.push_str(&format!("Rec@{k} {r:.4} NDCG@{k} {:.4}  ", self.ndcg[k]));
        }
        s.trim_end().to_string()
    }
}

/// Accumulates per-prediction ranks into either aggregation.
#[derive(Clone, Debug)]
pub struct MetricAccumulator {
    ks: Vec<usize>,
    per_user: BTreeMap<usize, (usize, Vec<f64>, Vec<f64>)>,
    count: usize,
    recall: Vec<f64>,
    ndcg: Vec<f64>,
}

impl MetricAccumulator {
    pub fn new(ks: &[usize]) -> Self {
        Self {
            ks: ks.to_vec(),
            per_user: BTreeMap::new(),
            count: 0,
            recall: vec![0.0; ks.len()],
            ndcg: vec![0.0; ks.len()],
        }
    }

    pub fn add(&mut self, user: usize, rank: usize) {
        let n = self.ks.len();
        let entry = self
            .per_user
            .entry(user)
            .or_insert_with(|| (0, vec![0.0; n], vec![0.0; n]));
        entry.0 += 1;
        self.count += 1;
        for (i, &k) in self.ks.iter().enumerate() {
            let r = recall_from_rank(Some(rank), k);
            let g = ndcg_from_rank(Some(rank), k);
            self.recall[i] += r;
            self.ndcg[i] += g;
            entry.1[i] += r;
            entry.2[i] += g;
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn users(&self) -> usize {
        self.per_user.len()
    }

    /// `(recall, ndcg)` keyed by k.
    pub fn finish(&self, aggregation: Aggregation) -> (BTreeMap<usize, f64>, BTreeMap<usize, f64>) {
        let mut recall = BTreeMap::new();
        let mut ndcg = BTreeMap::new();
        for (i, &k) in self.ks.iter().enumerate() {
            let (r, g) = match aggregation {
                _ if self.count == 0 => (0.0, 0.0),
                Aggregation::PerPrediction => (
                    self.recall[i] / self.count as f64,
                    self.ndcg[i] / self.count as f64,
                ),
                Aggregation::PerUser => {
                    let u = self.per_user.len() as f64;
                    let r = self.per_user.values().map(|(c, r, _)| r[i] / *c as f64).sum::<f64>();
                    let g = self.per_user.values().map(|(c, _, g)| g[i] / *c as f64).sum::<f64>();
                    (r / u, g / u)
                }
            };
            recall.insert(k, r);
            ndcg.insert(k, g);
        }
        (recall, ndcg)
    }
}

/// Scores of one evaluated batch.
pub struct ScoredBatch<'s> {
    pub samples: Vec<&'s PredictionSample>,
    pub logits: Mat,
    pub loss: f64,
}

/// Runs the model over `set` in batches of `batch_size`, calling `visit`
/// with each batch's logits.
pub fn score_set<'s>(
    state: &ModelState,
    set: &'s SampleSet,
    ctx: &ContextStats,
    batch_size: usize,
    mut visit: impl FnMut(ScoredBatch<'s>) -> Result<()>,
) -> Result<()> {
    for batch in set.batches(batch_size) {
        let samples: Vec<&PredictionSample> = batch.samples.iter().map(|&i| &set.samples[i]).collect();
        let tl = set.timeline(batch.user);
        let mut t = Tape::new(&state.store);
        let loss = state.loss(&mut t, tl, &samples, ctx);
        let logits = t.value(loss.logits).clone();
        let loss = t.scalar(loss.total);
        visit(ScoredBatch { samples, logits, loss })?;
    }
    Ok(())
}

/// Evaluates `state` on an arbitrary sample set.
pub fn evaluate_set(
    state: &ModelState,
    set: &SampleSet,
    ctx: &ContextStats,
    cfg: &EvalConfig,
    batch_size: usize,
) -> Result<EvalReport> {
    if cfg.ks.is_empty() || cfg.ks.contains(&0) {
        return Err(Error::Usage("evaluation ks must be positive".into()));
    }
    let start = Instant::now();
    let mut acc = MetricAccumulator::new(&cfg.ks);
    let mut loss_sum = 0.0;
    score_set(state, set, ctx, batch_size, |b| {
        loss_sum += b.loss * b.samples.len() as f64;
        for (i, s) in b.samples.iter().enumerate() {
            let row = b.logits.row(i);
            let row = row.as_slice().expect("contiguous logits");
            acc.add(s.user, rank_of(row, s.target as usize));
        }
        Ok(())
    })?;
    let (recall, ndcg) = acc.finish(cfg.aggregation);
    Ok(EvalReport {
        recall,
        ndcg,
        variant: state.config.variant.clone(),
        dataset: String::new(),
        seed: state.seed,
        aggregation: cfg.aggregation,
        predictions: acc.count(),
        users: acc.users(),
        mean_loss: if acc.count() > 0 { loss_sum / acc.count() as f64 } else { 0.0 },
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Evaluates on the test split.
pub fn evaluate(state: &ModelState, split: &CorpusSplit, ctx: &ContextStats, cfg: &EvalConfig) -> Result<EvalReport> {
    let set = test_set(split, cfg.strict_train_history);
    evaluate_set(state, &set, ctx, cfg, 64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_cases() {
        let ranked: Vec<usize> = (0..20).collect();
        assert_eq!(recall_at_k(&ranked, 2, 5), 1.0);
        assert_eq!(recall_at_k(&ranked, 10, 10), 0.0);
        assert_eq!(recall_at_k(&ranked, 0, 1), 1.0);
        assert_eq!(ndcg_at_k(&ranked, 0, 1), 1.0);
        assert_eq!(ndcg_at_k(&ranked, 2, 10), 0.5);
        assert_eq!(ndcg_at_k(&ranked, 15, 10), 0.0);
    }

    #[test]
    fn rank_breaks_ties_by_index() {
        let s = [0.5, 0.9, 0.5, 0.1];
        assert_eq!(rank_of(&s, 1), 1);
        assert_eq!(rank_of(&s, 0), 2);
        assert_eq!(rank_of(&s, 2), 3);
        assert_eq!(ranking(&s), vec![1, 0, 2, 3]);
    }

    #[test]
    fn aggregation_modes() {
        let mut acc = MetricAccumulator::new(&[1]);
        acc.add(0, 1);
        acc.add(0, 1);
        acc.add(0, 1);
        acc.add(1, 2);
        let (r, _) = acc.finish(Aggregation::PerPrediction);
        assert_eq!(r[&1], 0.75);
        let (r, _) = acc.finish(Aggregation::PerUser);
        assert_eq!(r[&1], 0.5);
    }

    proptest! {
        #[test]
        fn monotone_in_k(scores in prop::collection::vec(-5i32..5, 1..40), t in 0usize..40, k in 1usize..40) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let t = t % scores.len();
            let ranked = ranking(&scores);
            prop_assert!(recall_at_k(&ranked, t, k) <= recall_at_k(&ranked, t, k + 1));
            prop_assert!(ndcg_at_k(&ranked, t, k) <= ndcg_at_k(&ranked, t, k + 1));
            prop_assert_eq!(ranked.iter().position(|&x| x == t).unwrap() + 1, rank_of(&scores, t));
        }
    }
}
