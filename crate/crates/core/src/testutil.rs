use chrono::NaiveDate;

use crate::corpus::{time_slot_of, weekday_of, Checkin, Trajectory};

fn base_ts() -> i64 {
    // Monday 2012-04-02 00:00
    NaiveDate::from_ymd_opt(2012, 4, 2)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap()
        .and_utc()
        .timestamp()
}

pub fn checkin(user: u32, poi: u32, hours: f64) -> Checkin {
    let ts = base_ts() + (hours * 3600.0).round() as i64;
    let t = chrono::DateTime::from_timestamp(ts, 0).unwrap().naive_utc();
    Checkin {
        user,
        poi,
        category: poi,
        time_slot: time_slot_of(&t),
        weekday: weekday_of(&t),
        local_ts: ts,
        lat: 40.0 + poi as f64 * 0.01,
        lon: -74.0,
    }
}

/// One check-in per hour, category equal to POI index.
pub fn traj(user: u32, pois: &[u32]) -> Trajectory {
    traj_at(
        user,
        &pois
            .iter()
            .enumerate()
            .map(|(i, &p)| (p, i as f64))
            .collect::<Vec<_>>(),
    )
}

pub fn traj_at(user: u32, visits: &[(u32, f64)]) -> Trajectory {
    Trajectory {
        user,
        traj_id: 0,
        checkins: visits.iter().map(|&(p, h)| checkin(user, p, h)).collect(),
    }
}
