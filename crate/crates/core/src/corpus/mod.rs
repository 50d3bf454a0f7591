//! Check-in corpus: parsing, filtering, trajectory segmentation and the
//! chronological train/test split.

mod io;
mod parse;
mod report;
mod split;

use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

pub use io::{load_corpus, save_corpus, CorpusMeta, CORPUS_FORMAT_VERSION};
pub use parse::{parse_dataset, parse_reader, ParseOutcome, RawCheckin};
pub use report::{corpus_report, max_activity_radius_km, CorpusReport, RadiusBucket};
pub use split::{
    filter_rare_pois, filter_users, preprocess, segment_trajectories, split_corpus,
    RawTrajectory,
};

/// Number of hour buckets in a week: 24 weekday hours + 24 weekend hours.
pub const NUM_TIME_SLOTS: usize = 48;
pub const NUM_WEEKDAYS: usize = 7;

/// Maps a local timestamp onto one of the 48 hour slots: weekday hours keep
/// their hour, weekend hours are shifted by 24.
pub fn time_slot_of(local_time: &NaiveDateTime) -> u8 {
    let hour = local_time.hour() as u8;
    if is_weekend(local_time) {
        24 + hour
    } else {
        hour
    }
}

/// Monday = 0 .. Sunday = 6.
pub fn weekday_of(local_time: &NaiveDateTime) -> u8 {
    local_time.weekday().num_days_from_monday() as u8
}

fn is_weekend(t: &NaiveDateTime) -> bool {
    weekday_of(t) >= 5
}

/// One indexed visit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkin {
    pub user: u32,
    pub poi: u32,
    pub category: u32,
    pub time_slot: u8,
    pub weekday: u8,
    /// Seconds since the epoch of the local wall-clock time.
    pub local_ts: i64,
    pub lat: f64,
    pub lon: f64,
}

impl Checkin {
    pub fn local_time(&self) -> NaiveDateTime {
        chrono::DateTime::from_timestamp(self.local_ts, 0)
            .expect("timestamp in range")
            .naive_utc()
    }
}

/// A user's session of check-ins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub user: u32,
    /// Chronological ordinal of this trajectory among the user's trajectories.
    pub traj_id: u32,
    pub checkins: Vec<Checkin>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.checkins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkins.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoiInfo {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub category: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryInfo {
    pub id: String,
    pub name: String,
}

/// Dense index maps built over the full filtered corpus.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    pub users: Vec<String>,
    pub pois: Vec<PoiInfo>,
    pub categories: Vec<CategoryInfo>,
}

impl Vocab {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_pois(&self) -> usize {
        self.pois.len()
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn user_index(&self, id: &str) -> Option<u32> {
        self.users.iter().position(|u| u == id).map(|i| i as u32)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub users: usize,
    pub pois: usize,
    pub categories: usize,
    pub checkins: usize,
    pub trajectories: usize,
    pub train_trajectories: usize,
    pub test_trajectories: usize,
}

/// Chronological per-user split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    /// Indexed by user.
    pub train: Vec<Vec<Trajectory>>,
    /// Indexed by user.
    pub test: Vec<Vec<Trajectory>>,
    pub vocab: Vocab,
    pub stats: CorpusStats,
}

impl CorpusSplit {
    pub fn num_users(&self) -> usize {
        self.vocab.num_users()
    }

    pub fn train_trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.train.iter().flatten()
    }

    pub fn test_trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.test.iter().flatten()
    }

    /// All trajectories of `user`, train first then test (chronological).
    pub fn user_trajectories(&self, user: usize) -> impl Iterator<Item = &Trajectory> {
        self.train[user].iter().chain(self.test[user].iter())
    }

    /// Keeps the first `n` users (in index order) and re-indexes everything
    /// densely. Used for desk-scale subsamples.
    pub fn subsample_users(&self, n: usize) -> CorpusSplit {
        let n = n.min(self.num_users());
        let keep: Vec<Vec<Trajectory>> = (0..n)
            .map(|u| self.user_trajectories(u).cloned().collect())
            .collect();
        split::reindex(keep, &self.train[..n], &self.vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn at(y: i32, m: u32, d: u32, h: u32, min: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, m, d)
            .unwrap()
            .and_hms_opt(h, min, 0)
            .unwrap()
    }

    #[test]
    fn time_slots() {
        // 2012-04-03 was a Tuesday, 2012-04-07 a Saturday, 2012-04-09 a Monday.
        assert_eq!(time_slot_of(&at(2012, 4, 3, 14, 7)), 14);
        assert_eq!(time_slot_of(&at(2012, 4, 7, 14, 7)), 38);
        assert_eq!(time_slot_of(&at(2012, 4, 9, 0, 0)), 0);
        assert_eq!(time_slot_of(&at(2012, 4, 8, 23, 59)), 47);
        assert_eq!(weekday_of(&at(2012, 4, 3, 14, 7)), 1);
    }

    #[test]
    fn slot_weekend_iff_saturday_or_sunday() {
        for day in 1..=14u32 {
            for hour in [0u32, 11, 23] {
                let t = at(2012, 4, day, hour, 30);
                let slot = time_slot_of(&t);
                assert!(slot < 48);
                assert_eq!(slot >= 24, weekday_of(&t) >= 5);
            }
        }
    }
}
