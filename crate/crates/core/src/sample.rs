//! Prediction samples and batching.
//!
//! Every position `t ≥ 1` (0-based) of a trajectory yields one sample: the
//! prefix `0..t` is the input and check-in `t` is the target. Samples keep
//! indexes into their user's [`Timeline`] rather than copies.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{Checkin, CorpusSplit, Trajectory};

/// One user's trajectories in chronological order.
#[derive(Clone, Debug)]
pub struct Timeline<'a> {
    pub user: usize,
    pub trajs: Vec<&'a Trajectory>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictionSample {
    pub user: usize,
    /// Timeline indexes of the historical trajectories. Empty means the
    /// current prefix stands in as its own history.
    pub history: Vec<usize>,
    pub current: usize,
    pub prefix_len: usize,
    pub target: u32,
}

impl PredictionSample {
    pub fn prefix<'a>(&self, tl: &Timeline<'a>) -> &'a [Checkin] {
        &tl.trajs[self.current].checkins[..self.prefix_len]
    }

    pub fn query<'a>(&self, tl: &Timeline<'a>) -> &'a Checkin {
        &tl.trajs[self.current].checkins[self.prefix_len - 1]
    }

    pub fn target_checkin<'a>(&self, tl: &Timeline<'a>) -> &'a Checkin {
        &tl.trajs[self.current].checkins[self.prefix_len]
    }
}

/// All samples of trajectory `current` with the given history.
pub fn trajectory_samples(tl: &Timeline, current: usize, history: &[usize]) -> Vec<PredictionSample> {
    let traj = tl.trajs[current];
    (1..traj.len())
        .map(|t| PredictionSample {
            user: tl.user,
            history: history.to_vec(),
            current,
            prefix_len: t,
            target: traj.checkins[t].poi,
        })
        .collect()
}

/// Timelines and the samples drawn from them.
#[derive(Clone, Debug)]
pub struct SampleSet<'a> {
    /// Indexed by user.
    pub timelines: Vec<Timeline<'a>>,
    pub samples: Vec<PredictionSample>,
}

impl<'a> SampleSet<'a> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn timeline(&self, user: usize) -> &Timeline<'a> {
        &self.timelines[user]
    }

    /// Groups consecutive samples of the same user into chunks of at most
    /// `batch_size`.
    pub fn batches(&self, batch_size: usize) -> Vec<Batch> {
        let batch_size = batch_size.max(1);
        let mut out: Vec<Batch> = Vec::new();
        for (i, s) in self.samples.iter().enumerate() {
            match out.last_mut() {
                Some(b) if b.user == s.user && b.samples.len() < batch_size => b.samples.push(i),
                _ => out.push(Batch {
                    user: s.user,
                    samples: vec![i],
                }),
            }
        }
        out
    }

    /// Batches in a seeded random order.
    pub fn shuffled_batches<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Vec<Batch> {
        let mut b = self.batches(batch_size);
        b.shuffle(rng);
        b
    }
}

/// Sample indexes (into a [`SampleSet`]) sharing one user.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub user: usize,
    pub samples: Vec<usize>,
}

/// Number of trailing training trajectories held out for validation.
pub fn validation_count(n_train: usize, val_frac: f64) -> usize {
    if n_train < 2 || val_frac <= 0.0 {
        return 0;
    }
    ((n_train as f64 * val_frac).floor() as usize).clamp(1, n_train - 1)
}

/// Training and validation samples. Each user's timeline is their training
/// trajectories; the last `validation_count` of them only produce
/// validation samples.
pub fn train_sets(split: &CorpusSplit, val_frac: f64) -> (SampleSet<'_>, SampleSet<'_>) {
    let mut timelines = Vec::with_capacity(split.num_users());
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (user, trajs) in split.train.iter().enumerate() {
        let tl = Timeline {
            user,
            trajs: trajs.iter().collect(),
        };
        let n_val = validation_count(trajs.len(), val_frac);
        let cut = trajs.len() - n_val;
        for c in 0..trajs.len() {
            let history: Vec<usize> = (0..c).collect();
            let s = trajectory_samples(&tl, c, &history);
            if c < cut {
                train.extend(s);
            } else {
                val.extend(s);
            }
        }
        timelines.push(tl);
    }
    (
        SampleSet {
            timelines: timelines.clone(),
            samples: train,
        },
        SampleSet {
            timelines,
            samples: val,
        },
    )
}

/// Every training sample, without a validation hold-out.
pub fn all_train_samples(split: &CorpusSplit) -> SampleSet<'_> {
    train_sets(split, 0.0).0
}

/// Test samples. Histories are every earlier trajectory of the user, or only
/// the training trajectories when `strict_train_history` is set.
pub fn test_set(split: &CorpusSplit, strict_train_history: bool) -> SampleSet<'_> {
    let mut timelines = Vec::with_capacity(split.num_users());
    let mut samples = Vec::new();
    for user in 0..split.num_users() {
        let tl = Timeline {
            user,
            trajs: split.user_trajectories(user).collect(),
        };
        let n_train = split.train[user].len();
        for c in n_train..tl.trajs.len() {
            let end = if strict_train_history { n_train } else { c };
            let history: Vec<usize> = (0..end).collect();
            samples.extend(trajectory_samples(&tl, c, &history));
        }
        timelines.push(tl);
    }
    SampleSet { timelines, samples }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::traj;

    #[test]
    fn samples_cover_every_position_after_the_first() {
        let t = traj(0, &[1, 2, 3, 4]);
        let tl = Timeline { user: 0, trajs: vec![&t] };
        let s = trajectory_samples(&tl, 0, &[]);
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].prefix(&tl).len(), 1);
        assert_eq!(s[2].target, 4);
        assert_eq!(s[2].query(&tl).poi, 3);
        for x in &s {
            assert!(x.prefix(&tl).iter().all(|c| !std::ptr::eq(c, x.target_checkin(&tl))));
        }
    }

    #[test]
    fn validation_counts() {
        assert_eq!(validation_count(1, 0.1), 0);
        assert_eq!(validation_count(4, 0.1), 1);
        assert_eq!(validation_count(20, 0.1), 2);
        assert_eq!(validation_count(20, 0.0), 0);
    }

    #[test]
    fn batches_never_mix_users() {
        let a = traj(0, &[1, 2, 3, 4, 5]);
        let b = traj(1, &[1, 2, 3]);
        let set = SampleSet {
            timelines: vec![
                Timeline { user: 0, trajs: vec![&a] },
                Timeline { user: 1, trajs: vec![&b] },
            ],
            samples: trajectory_samples(&Timeline { user: 0, trajs: vec![&a] }, 0, &[])
                .into_iter()
                .chain(trajectory_samples(&Timeline { user: 1, trajs: vec![&b] }, 0, &[]))
                .collect(),
        };
        let batches = set.batches(3);
        assert_eq!(batches.len(), 3);
        assert_eq!(batches[0].samples, vec![0, 1, 2]);
        assert_eq!(batches[1].samples, vec![3]);
        assert_eq!(batches[2].user, 1);
    }
}
