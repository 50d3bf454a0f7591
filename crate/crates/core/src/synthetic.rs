//! Seeded synthetic check-in logs with learnable routines.
//!
//! POIs sit in spatial clusters; each user lives in one cluster and
//! follows a weekday and a weekend route most days, wandering randomly
//! otherwise. Output is [`RawCheckin`] rows, or the public TSV layout.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::CorpusConfig;
use crate::corpus::{preprocess, CorpusSplit, RawCheckin};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub users: usize,
    pub pois: usize,
    pub categories: usize,
    pub clusters: usize,
    pub days: usize,
    pub min_visits_per_day: usize,
    pub max_visits_per_day: usize,
    /// Probability that a day follows the user's routine.
    pub routine_prob: f64,
    /// Timezone offset in minutes written to every row.
    pub tz_offset: i32,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            users: 30,
            pois: 80,
            categories: 12,
            clusters: 4,
            days: 20,
            min_visits_per_day: 3,
            max_visits_per_day: 6,
            routine_prob: 0.8,
            tz_offset: -240,
            seed: 7,
        }
    }
}

struct Poi {
    lat: f64,
    lon: f64,
    category: usize,
    cluster: usize,
}

pub fn generate(cfg: &SyntheticConfig) -> Result<Vec<RawCheckin>> {
    if cfg.users == 0 || cfg.pois == 0 || cfg.categories == 0 || cfg.clusters == 0 {
        return Err(Error::Usage("synthetic sizes must be positive".into()));
    }
    if cfg.min_visits_per_day == 0 || cfg.max_visits_per_day < cfg.min_visits_per_day {
        return Err(Error::Usage("invalid visits-per-day range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centres: Vec<(f64, f64)> = (0..cfg.clusters)
        .map(|_| (40.7 + rng.random_range(-0.15..0.15), -74.0 + rng.random_range(-0.15..0.15)))
        .collect();
    let pois: Vec<Poi> = (0..cfg.pois)
        .map(|i| {
            let cluster = i % cfg.clusters;
            let (la, lo) = centres[cluster];
            Poi {
                lat: la + rng.random_range(-0.01..0.01),
                lon: lo + rng.random_range(-0.01..0.01),
                category: rng.random_range(0..cfg.categories),
                cluster,
            }
        })
        .collect();
    let by_cluster: Vec<Vec<usize>> = (0..cfg.clusters)
        .map(|c| (0..cfg.pois).filter(|&p| pois[p].cluster == c).collect())
        .collect();

    let start = NaiveDate::from_ymd_opt(2012, 4, 2).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let mut out = Vec::new();
    for u in 0..cfg.users {
        let home = &by_cluster[u % cfg.clusters];
        let route = |rng: &mut ChaCha8Rng| -> Vec<usize> {
            let len = rng.random_range(cfg.min_visits_per_day..=cfg.max_visits_per_day);
            (0..len).map(|_| *home.choose(rng).unwrap()).collect()
        };
        let weekday_route = route(&mut rng);
        let weekend_route = route(&mut rng);
        for d in 0..cfg.days {
            let day = start + Duration::days(d as i64);
            let weekend = d % 7 >= 5;
            let visits = if rng.random_bool(cfg.routine_prob) {
                if weekend {
                    weekend_route.clone()
                } else {
                    weekday_route.clone()
                }
            } else {
                route(&mut rng)
            };
            let mut minute = 8 * 60 + rng.random_range(0..60);
            for p in visits {
                let local = day + Duration::minutes(minute);
                let utc = (local - Duration::minutes(cfg.tz_offset as i64)).and_utc();
                let poi = &pois[p];
                out.push(RawCheckin {
                    user_id: format!("u{u}"),
                    venue_id: format!("v{p}"),
                    category_id: format!("c{}", poi.category),
                    category_name: format!("Category {}", poi.category),
                    latitude: poi.lat,
                    longitude: poi.lon,
                    utc_time: utc,
                    tz_offset: cfg.tz_offset,
                    clock_time: local,
                });
                minute += rng.random_range(45..150);
            }
        }
    }
    Ok(out)
}

/// Renders rows in the public tab-separated layout.
pub fn to_tsv(rows: &[RawCheckin]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.user_id,
            r.venue_id,
            r.category_id,
            r.category_name,
            r.latitude,
            r.longitude,
            r.tz_offset,
            r.utc_time.format("%a %b %d %H:%M:%S +0000 %Y")
        );
    }
    s
}

pub fn write_tsv(rows: &[RawCheckin], path: &Path) -> Result<()> {
    fs::write(path, to_tsv(rows)).map_err(|e| Error::io(path, e))
}

/// Generates and preprocesses a corpus with the given filter settings.
pub fn corpus(cfg: &SyntheticConfig, corpus_cfg: &CorpusConfig) -> Result<CorpusSplit> {
    preprocess(generate(cfg)?, corpus_cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TzMode;
    use crate::corpus::parse_reader;

    #[test]
    fn deterministic_and_round_trips_through_tsv() {
        let cfg = SyntheticConfig::default();
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        let parsed = parse_reader(to_tsv(&a).as_bytes(), TzMode::Local).unwrap();
        assert_eq!(parsed.skipped, 0);
        assert_eq!(parsed.checkins.len(), a.len());
        for (x, y) in a.iter().zip(&parsed.checkins) {
            assert_eq!(x.clock_time, y.clock_time);
            assert_eq!(x.venue_id, y.venue_id);
            assert!((x.latitude - y.latitude).abs() < 1e-12);
        }
    }

    #[test]
    fn default_corpus_survives_filters() {
        let split = corpus(&SyntheticConfig::default(), &CorpusConfig::default()).unwrap();
        assert!(split.num_users() >= 25);
        assert!(split.vocab.num_pois() > 20);
    }
}
