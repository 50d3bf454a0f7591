use std::collections::BTreeMap;

use crate::corpus::Trajectory;

/// Mean time between consecutive visits of each observed POI pair, in hours.
/// Unobserved pairs take the largest observed mean.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeIntervalMatrix {
    observed: BTreeMap<(u32, u32), f64>,
    min_hours: f64,
    max_hours: f64,
}

impl TimeIntervalMatrix {
    pub fn from_observed(observed: BTreeMap<(u32, u32), f64>) -> Self {
        let mut min_hours = f64::INFINITY;
        let mut max_hours = 0.0f64;
        for &v in observed.values() {
            min_hours = min_hours.min(v);
            max_hours = max_hours.max(v);
        }
        if observed.is_empty() {
            min_hours = 0.0;
        }
        Self {
            observed,
            min_hours,
            max_hours,
        }
    }

    pub fn is_observed(&self, i: u32, j: u32) -> bool {
        self.observed.contains_key(&(i, j))
    }

    pub fn observed(&self) -> &BTreeMap<(u32, u32), f64> {
        &self.observed
    }

    pub fn bounds_hours(&self) -> (f64, f64) {
        (self.min_hours, self.max_hours)
    }

    pub fn hours(&self, i: u32, j: u32) -> f64 {
        self.observed.get(&(i, j)).copied().unwrap_or(self.max_hours)
    }

    /// Min-max scaled over observed entries; all zeros if degenerate.
    pub fn norm(&self, i: u32, j: u32) -> f64 {
        let span = self.max_hours - self.min_hours;
        if span <= 0.0 {
            return 0.0;
        }
        ((self.hours(i, j) - self.min_hours) / span).clamp(0.0, 1.0)
    }
}

pub fn build_time_interval_matrix<'a>(
    train: impl IntoIterator<Item = &'a Trajectory>,
) -> TimeIntervalMatrix {
    let mut acc: BTreeMap<(u32, u32), (f64, usize)> = BTreeMap::new();
    for t in train {
        for w in t.checkins.windows(2) {
            let hours = (w[1].local_ts - w[0].local_ts) as f64 / 3600.0;
            let e = acc.entry((w[0].poi, w[1].poi)).or_default();
            e.0 += hours.max(0.0);
            e.1 += 1;
        }
    }
    TimeIntervalMatrix::from_observed(
        acc.into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::traj_at;

    #[test]
    fn mean_and_fill() {
        let m = build_time_interval_matrix(&[
            traj_at(0, &[(0, 0.0), (1, 1.0)]),
            traj_at(0, &[(0, 0.0), (1, 3.0), (2, 13.0)]),
        ]);
        assert_eq!(m.hours(0, 1), 2.0);
        assert_eq!(m.hours(1, 2), 10.0);
        assert!(!m.is_observed(2, 0));
        assert_eq!(m.hours(2, 0), 10.0);
        assert_eq!(m.norm(0, 1), 0.0);
        assert_eq!(m.norm(1, 2), 1.0);
        assert_eq!(m.norm(2, 0), 1.0);
    }

    #[test]
    fn all_equal_gaps_normalize_to_zero() {
        let m = build_time_interval_matrix(&[traj_at(0, &[(0, 0.0), (1, 2.0), (2, 4.0)])]);
        assert_eq!(m.norm(0, 1), 0.0);
        assert_eq!(m.norm(1, 2), 0.0);
        assert_eq!(m.norm(2, 1), 0.0);
    }
}
