use std::collections::BTreeSet;

use ndarray::Array2;

use crate::corpus::{Trajectory, NUM_TIME_SLOTS};

/// Jaccard similarity between the POI sets of every pair of time slots.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeCorrelationMatrix {
    pub tau: Array2<f64>,
    pub slot_locs: Vec<BTreeSet<u32>>,
}

pub fn jaccard(a: &BTreeSet<u32>, b: &BTreeSet<u32>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

impl TimeCorrelationMatrix {
    pub fn from_slot_locs(slot_locs: Vec<BTreeSet<u32>>) -> Self {
        let n = slot_locs.len();
        let tau = Array2::from_shape_fn((n, n), |(i, j)| jaccard(&slot_locs[i], &slot_locs[j]));
        Self { tau, slot_locs }
    }

    pub fn get(&self, i: u8, j: u8) -> f64 {
        self.tau[[i as usize, j as usize]]
    }
}

pub fn build_time_correlation<'a>(
    train: impl IntoIterator<Item = &'a Trajectory>,
) -> TimeCorrelationMatrix {
    let mut slot_locs = vec![BTreeSet::new(); NUM_TIME_SLOTS];
    for t in train {
        for c in &t.checkins {
            slot_locs[c.time_slot as usize].insert(c.poi);
        }
    }
    TimeCorrelationMatrix::from_slot_locs(slot_locs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[u32]) -> BTreeSet<u32> {
        v.iter().copied().collect()
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard(&set(&[1, 2]), &set(&[1, 2])), 1.0);
        assert_eq!(jaccard(&set(&[1]), &set(&[2])), 0.0);
        assert_eq!(jaccard(&set(&[0, 1, 2]), &set(&[1, 2, 3])), 0.5);
        assert_eq!(jaccard(&set(&[]), &set(&[])), 0.0);
    }

    #[test]
    fn matrix_properties() {
        let mut locs = vec![BTreeSet::new(); NUM_TIME_SLOTS];
        locs[3] = set(&[1, 2, 3]);
        locs[12] = set(&[2, 3, 4]);
        locs[40] = set(&[9]);
        let m = TimeCorrelationMatrix::from_slot_locs(locs);
        assert_eq!(m.get(3, 12), 0.5);
        assert_eq!(m.get(3, 3), 1.0);
        assert_eq!(m.get(0, 0), 0.0);
        for i in 0..48 {
            for j in 0..48 {
                assert_eq!(m.tau[[i, j]], m.tau[[j, i]]);
                assert!((0.0..=1.0).contains(&m.tau[[i, j]]));
            }
        }
    }
}
