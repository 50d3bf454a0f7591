use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CorpusSplit;
use crate::error::{Error, Result};
use crate::geo::haversine_km;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusBucket {
    pub lo_km: f64,
    pub hi_km: f64,
    pub users: usize,
    pub proportion: f64,
}

/// Dataset statistics behind the activity-radius and hourly-trajectory plots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub radius_km: Vec<f64>,
    pub radius_buckets: Vec<RadiusBucket>,
    /// Trajectory start counts per local hour.
    pub hourly_trajectories: [usize; 24],
    pub share_within_30km: f64,
}

/// Largest great-circle distance between any two check-in locations.
pub fn max_activity_radius_km(points: &[(f64, f64)]) -> f64 {
    let mut uniq: Vec<(f64, f64)> = points.to_vec();
    uniq.sort_by(|a, b| a.partial_cmp(b).unwrap());
    uniq.dedup();
    let mut best = 0.0f64;
    for i in 0..uniq.len() {
        for j in i + 1..uniq.len() {
            best = best.max(haversine_km(uniq[i].0, uniq[i].1, uniq[j].0, uniq[j].1));
        }
    }
    best
}

pub fn corpus_report(split: &CorpusSplit, bucket_km: f64) -> Result<CorpusReport> {
    if split.num_users() == 0 {
        return Err(Error::data("corpus report needs at least one user"));
    }
    if bucket_km <= 0.0 {
        return Err(Error::Usage("bucket width must be positive".into()));
    }
    let mut radius_km = Vec::with_capacity(split.num_users());
    let mut hourly = [0usize; 24];
    for u in 0..split.num_users() {
        let mut pts = Vec::new();
        for t in split.user_trajectories(u) {
            pts.extend(t.checkins.iter().map(|c| (c.lat, c.lon)));
            if let Some(first) = t.checkins.first() {
                hourly[(first.time_slot % 24) as usize] += 1;
            }
        }
        radius_km.push(max_activity_radius_km(&pts));
    }
    let max_bucket = radius_km
        .iter()
        .map(|r| (r / bucket_km).floor() as usize)
        .max()
        .unwrap_or(0);
    let mut counts = vec![0usize; max_bucket + 1];
    for r in &radius_km {
        counts[(r / bucket_km).floor() as usize] += 1;
    }
    let n = radius_km.len() as f64;
    let radius_buckets = counts
        .iter()
        .enumerate()
        .map(|(i, &users)| RadiusBucket {
            lo_km: i as f64 * bucket_km,
            hi_km: (i + 1) as f64 * bucket_km,
            users,
            proportion: users as f64 / n,
        })
        .collect();
    let share_within_30km = radius_km.iter().filter(|&&r| r <= 30.0).count() as f64 / n;
    Ok(CorpusReport {
        radius_km,
        radius_buckets,
        hourly_trajectories: hourly,
        share_within_30km,
    })
}

impl CorpusReport {
    /// Writes `radius_hist.csv` and `hourly_trajectories.csv`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut s = String::from("lo_km,hi_km,users,proportion\n");
        for b in &self.radius_buckets {
            s += &format!("{},{},{},{:.6}\n", b.lo_km, b.hi_km, b.users, b.proportion);
        }
        let p = dir.join("radius_hist.csv");
        fs::write(&p, s).map_err(|e| Error::io(&p, e))?;

        let total: usize = self.hourly_trajectories.iter().sum();
        let mut s = String::from("hour,trajectories,proportion\n");
        for (h, &c) in self.hourly_trajectories.iter().enumerate() {
            let prop = if total == 0 { 0.0 } else { c as f64 / total as f64 };
            s += &format!("{h},{c},{prop:.6}\n");
        }
        let p = dir.join("hourly_trajectories.csv");
        fs::write(&p, s).map_err(|e| Error::io(&p, e))
    }
}
