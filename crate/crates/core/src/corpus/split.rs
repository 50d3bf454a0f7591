use std::collections::HashMap;

use indexmap::IndexMap;

use super::{
    time_slot_of, weekday_of, CategoryInfo, Checkin, CorpusSplit, CorpusStats, PoiInfo,
    RawCheckin, Trajectory, Vocab,
};
use crate::config::{CorpusConfig, SegmentMode};
use crate::error::{Error, Result};

/// A segmented session that has not been indexed yet.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTrajectory {
    pub user_id: String,
    pub checkins: Vec<RawCheckin>,
}

/// Drops every check-in at a venue visited fewer than `min_visits` times.
/// Applied once; surviving counts are computed on the input list.
pub fn filter_rare_pois(checkins: Vec<RawCheckin>, min_visits: usize) -> Vec<RawCheckin> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for c in &checkins {
        *counts.entry(c.venue_id.as_str()).or_default() += 1;
    }
    let keep: Vec<bool> = checkins
        .iter()
        .map(|c| counts[c.venue_id.as_str()] >= min_visits)
        .collect();
    checkins
        .into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c))
        .collect()
}

/// Groups check-ins by user (first-appearance order), sorts each user's
/// stream by clock time (stable), and cuts it into sessions.
///
/// In anchored mode a check-in joins the open trajectory iff it lies less
/// than `window_hours` after the trajectory's first check-in; in gap mode the
/// reference is the previous check-in. Sessions shorter than `min_len` are
/// dropped.
pub fn segment_trajectories(
    checkins: Vec<RawCheckin>,
    window_hours: i64,
    min_len: usize,
    mode: SegmentMode,
) -> Vec<RawTrajectory> {
    let mut by_user: IndexMap<String, Vec<RawCheckin>> = IndexMap::new();
    for c in checkins {
        by_user.entry(c.user_id.clone()).or_default().push(c);
    }
    let window = chrono::Duration::hours(window_hours);
    let mut out = Vec::new();
    for (user_id, mut stream) in by_user {
        stream.sort_by_key(|c| c.clock_time);
        let mut current: Vec<RawCheckin> = Vec::new();
        for c in stream {
            let starts_new = match (current.first(), current.last()) {
                (Some(first), Some(last)) => {
                    let anchor = match mode {
                        SegmentMode::Anchored => first.clock_time,
                        SegmentMode::Gap => last.clock_time,
                    };
                    c.clock_time - anchor >= window
                }
                _ => false,
            };
            if starts_new {
                let done = std::mem::take(&mut current);
                if done.len() >= min_len {
                    out.push(RawTrajectory {
                        user_id: user_id.clone(),
                        checkins: done,
                    });
                }
            }
            current.push(c);
        }
        if current.len() >= min_len {
            out.push(RawTrajectory {
                user_id: user_id.clone(),
                checkins: current,
            });
        }
    }
    out
}

/// Keeps only users owning at least `min_trajs` trajectories.
pub fn filter_users(trajs: Vec<RawTrajectory>, min_trajs: usize) -> Vec<RawTrajectory> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &trajs {
        *counts.entry(t.user_id.as_str()).or_default() += 1;
    }
    let keep: Vec<bool> = trajs
        .iter()
        .map(|t| counts[t.user_id.as_str()] >= min_trajs)
        .collect();
    trajs
        .into_iter()
        .zip(keep)
        .filter_map(|(t, k)| k.then_some(t))
        .collect()
}

/// Number of leading trajectories assigned to training: ⌈frac·n⌉, but at
/// least one trajectory is always left for testing.
pub(crate) fn train_count(n: usize, frac: f64) -> usize {
    let raw = (frac * n as f64 - 1e-9).ceil().max(0.0) as usize;
    raw.min(n.saturating_sub(1))
}

/// Indexes the corpus and splits each user's trajectories chronologically.
/// The vocabulary covers train and test so that every POI can be scored.
pub fn split_corpus(trajs: Vec<RawTrajectory>, train_frac: f64) -> Result<CorpusSplit> {
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(Error::Usage(format!("train_frac {train_frac} not in [0,1]")));
    }
    let mut users: IndexMap<String, Vec<RawTrajectory>> = IndexMap::new();
    for t in trajs {
        users.entry(t.user_id.clone()).or_default().push(t);
    }

    let mut pois: IndexMap<String, PoiInfo> = IndexMap::new();
    let mut cats: IndexMap<String, CategoryInfo> = IndexMap::new();
    let mut train = Vec::with_capacity(users.len());
    let mut test = Vec::with_capacity(users.len());
    let mut stats = CorpusStats::default();

    for (u, (_, user_trajs)) in users.iter().enumerate() {
        let mut indexed = Vec::with_capacity(user_trajs.len());
        for (ti, rt) in user_trajs.iter().enumerate() {
            let mut checkins = Vec::with_capacity(rt.checkins.len());
            for c in &rt.checkins {
                let cat_index = match cats.get_index_of(&c.category_id) {
                    Some(i) => i,
                    None => {
                        cats.insert(
                            c.category_id.clone(),
                            CategoryInfo {
                                id: c.category_id.clone(),
                                name: c.category_name.clone(),
                            },
                        );
                        cats.len() - 1
                    }
                };
                let poi_index = match pois.get_index_of(&c.venue_id) {
                    Some(i) => i,
                    None => {
                        pois.insert(
                            c.venue_id.clone(),
                            PoiInfo {
                                id: c.venue_id.clone(),
                                lat: c.latitude,
                                lon: c.longitude,
                                category: cat_index as u32,
                            },
                        );
                        pois.len() - 1
                    }
                };
                checkins.push(Checkin {
                    user: u as u32,
                    poi: poi_index as u32,
                    category: cat_index as u32,
                    time_slot: time_slot_of(&c.clock_time),
                    weekday: weekday_of(&c.clock_time),
                    local_ts: c.clock_time.and_utc().timestamp(),
                    lat: c.latitude,
                    lon: c.longitude,
                });
            }
            stats.checkins += checkins.len();
            indexed.push(Trajectory {
                user: u as u32,
                traj_id: ti as u32,
                checkins,
            });
        }
        let n_train = train_count(indexed.len(), train_frac);
        let test_part = indexed.split_off(n_train);
        stats.train_trajectories += indexed.len();
        stats.test_trajectories += test_part.len();
        train.push(indexed);
        test.push(test_part);
    }

    stats.users = users.len();
    stats.pois = pois.len();
    stats.categories = cats.len();
    stats.trajectories = stats.train_trajectories + stats.test_trajectories;
    Ok(CorpusSplit {
        train,
        test,
        vocab: Vocab {
            users: users.keys().cloned().collect(),
            pois: pois.into_values().collect(),
            categories: cats.into_values().collect(),
        },
        stats,
    })
}

/// Full filtering pipeline: rare POIs → segmentation → user filter → split.
pub fn preprocess(checkins: Vec<RawCheckin>, cfg: &CorpusConfig) -> Result<CorpusSplit> {
    if cfg.min_poi_visits == 0 {
        return Err(Error::Usage("min_poi_visits must be >= 1".into()));
    }
    let kept = filter_rare_pois(checkins, cfg.min_poi_visits);
    let trajs = segment_trajectories(kept, cfg.window_hours, cfg.min_traj_len, cfg.segment_mode);
    let trajs = filter_users(trajs, cfg.min_user_trajs);
    split_corpus(trajs, cfg.train_frac)
}

/// Re-indexes an already indexed subset of users densely.
pub(super) fn reindex(
    per_user: Vec<Vec<Trajectory>>,
    train: &[Vec<Trajectory>],
    vocab: &Vocab,
) -> CorpusSplit {
    let mut poi_map: IndexMap<u32, u32> = IndexMap::new();
    let mut cat_map: IndexMap<u32, u32> = IndexMap::new();
    let mut stats = CorpusStats::default();
    let mut new_train = Vec::new();
    let mut new_test = Vec::new();
    for (u, trajs) in per_user.into_iter().enumerate() {
        let mut mapped = Vec::with_capacity(trajs.len());
        for mut t in trajs {
            t.user = u as u32;
            for c in &mut t.checkins {
                let next_cat = cat_map.len() as u32;
                c.category = *cat_map.entry(c.category).or_insert(next_cat);
                let next_poi = poi_map.len() as u32;
                c.poi = *poi_map.entry(c.poi).or_insert(next_poi);
                c.user = u as u32;
            }
            stats.checkins += t.len();
            mapped.push(t);
        }
        let test = mapped.split_off(train[u].len());
        stats.train_trajectories += mapped.len();
        stats.test_trajectories += test.len();
        new_train.push(mapped);
        new_test.push(test);
    }
    let pois = poi_map
        .keys()
        .map(|&old| {
            let mut p = vocab.pois[old as usize].clone();
            p.category = cat_map[&p.category];
            p
        })
        .collect();
    let categories = cat_map
        .keys()
        .map(|&old| vocab.categories[old as usize].clone())
        .collect();
    stats.users = new_train.len();
    stats.pois = poi_map.len();
    stats.categories = cat_map.len();
    stats.trajectories = stats.train_trajectories + stats.test_trajectories;
    CorpusSplit {
        train: new_train,
        test: new_test,
        vocab: Vocab {
            users: vocab.users[..stats.users].to_vec(),
            pois,
            categories,
        },
        stats,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TzMode;
    use chrono::{Duration, NaiveDate};

    pub(crate) fn raw(user: &str, venue: &str, hours: i64) -> RawCheckin {
        let base = NaiveDate::from_ymd_opt(2012, 4, 2)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let clock = base + Duration::hours(hours);
        RawCheckin {
            user_id: user.into(),
            venue_id: venue.into(),
            category_id: format!("cat-{venue}"),
            category_name: format!("Category {venue}"),
            latitude: 40.0,
            longitude: -74.0,
            utc_time: clock.and_utc(),
            tz_offset: 0,
            clock_time: clock,
        }
    }

    #[test]
    fn rare_poi_boundary() {
        let mut v: Vec<RawCheckin> = (0..10).map(|h| raw("u", "a", h)).collect();
        let all_ten = filter_rare_pois(v.clone(), 10);
        assert_eq!(all_ten.len(), 10);
        v.extend((0..9).map(|h| raw("u", "b", h)));
        let out = filter_rare_pois(v, 10);
        assert_eq!(out.len(), 10);
        assert!(out.iter().all(|c| c.venue_id == "a"));
    }

    #[test]
    fn segmentation_window() {
        let v: Vec<RawCheckin> = [0, 1, 2, 30, 31, 32]
            .iter()
            .map(|&h| raw("u", "a", h))
            .collect();
        let t = segment_trajectories(v, 24, 3, SegmentMode::Anchored);
        assert_eq!(t.len(), 2);
        assert!(t.iter().all(|t| t.checkins.len() == 3));
    }

    #[test]
    fn segmentation_drops_short_users() {
        let v = vec![raw("u", "a", 0), raw("u", "b", 1)];
        assert!(segment_trajectories(v, 24, 3, SegmentMode::Anchored).is_empty());
    }

    #[test]
    fn anchored_and_gap_modes_differ() {
        // 0, 20, 40: anchored splits at 40 (40-0 >= 24); gap keeps one session.
        let v: Vec<RawCheckin> = [0, 20, 40].iter().map(|&h| raw("u", "a", h)).collect();
        assert_eq!(segment_trajectories(v.clone(), 24, 1, SegmentMode::Anchored).len(), 2);
        assert_eq!(segment_trajectories(v, 24, 1, SegmentMode::Gap).len(), 1);
    }

    #[test]
    fn segmentation_sorts_and_keeps_ties_stable() {
        let v = vec![raw("u", "c", 5), raw("u", "a", 1), raw("u", "b", 1)];
        let t = segment_trajectories(v, 24, 1, SegmentMode::Anchored);
        let order: Vec<&str> = t[0].checkins.iter().map(|c| c.venue_id.as_str()).collect();
        assert_eq!(order, ["a", "b", "c"]);
    }

    fn user_with_trajs(user: &str, n: usize) -> Vec<RawTrajectory> {
        (0..n)
            .map(|i| RawTrajectory {
                user_id: user.into(),
                checkins: (0..3).map(|j| raw(user, "a", 48 * i as i64 + j)).collect(),
            })
            .collect()
    }

    #[test]
    fn user_filter_boundary() {
        let mut t = user_with_trajs("four", 4);
        t.extend(user_with_trajs("five", 5));
        let kept = filter_users(t, 5);
        assert_eq!(kept.len(), 5);
        assert!(kept.iter().all(|t| t.user_id == "five"));
    }

    #[test]
    fn split_counts() {
        assert_eq!(train_count(5, 0.8), 4);
        assert_eq!(train_count(10, 0.8), 8);
        assert_eq!(train_count(15, 0.8), 12);
        assert_eq!(train_count(3, 1.0), 2);
        let mut t = user_with_trajs("a", 5);
        t.extend(user_with_trajs("b", 10));
        let s = split_corpus(t, 0.8).unwrap();
        assert_eq!((s.train[0].len(), s.test[0].len()), (4, 1));
        assert_eq!((s.train[1].len(), s.test[1].len()), (8, 2));
        assert_eq!(s.stats.trajectories, 15);
    }

    #[test]
    fn preprocess_via_parse_of_nothing() {
        let parsed = crate::corpus::parse_reader(&b""[..], TzMode::Local).unwrap();
        let split = preprocess(parsed.checkins, &CorpusConfig::default()).unwrap();
        assert_eq!(split.stats, CorpusStats::default());
    }
}
