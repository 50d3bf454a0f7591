use std::collections::BTreeMap;

use ndarray::Array2;

use crate::corpus::Trajectory;
use crate::error::{Error, Result};

/// Check-in similarity between users and the derived "friend" of each user.
#[derive(Clone, Debug, PartialEq)]
pub struct SocialContext {
    /// Sparse POI visit counts per user (training check-ins only).
    visits: Vec<BTreeMap<u32, f64>>,
    norms: Vec<f64>,
    /// Dense |U|×|U| cosine similarities when the user count allows it.
    sim: Option<Array2<f64>>,
    pub friend: Vec<u32>,
}

fn sparse_dot(a: &BTreeMap<u32, f64>, b: &BTreeMap<u32, f64>) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small
        .iter()
        .filter_map(|(k, v)| large.get(k).map(|w| v * w))
        .sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

impl SocialContext {
    pub fn from_visits(visits: Vec<BTreeMap<u32, f64>>, dense_limit: usize) -> Result<Self> {
        let n = visits.len();
        if n < 2 {
            return Err(Error::data("social context needs at least two users"));
        }
        let norms: Vec<f64> = visits
            .iter()
            .map(|v| v.values().map(|x| x * x).sum::<f64>().sqrt())
            .collect();

        // Inverted index so each similarity row costs only the overlap.
        let mut by_poi: BTreeMap<u32, Vec<(u32, f64)>> = BTreeMap::new();
        for (u, v) in visits.iter().enumerate() {
            for (&p, &c) in v {
                by_poi.entry(p).or_default().push((u as u32, c));
            }
        }
        let mut sim = (n <= dense_limit).then(|| Array2::zeros((n, n)));
        let mut friend = Vec::with_capacity(n);
        let mut row = vec![0.0f64; n];
        for i in 0..n {
            row.iter_mut().for_each(|x| *x = 0.0);
            for (p, c) in &visits[i] {
                for &(j, cj) in &by_poi[p] {
                    row[j as usize] += c * cj;
                }
            }
            for j in 0..n {
                let denom = norms[i] * norms[j];
                row[j] = if denom > 0.0 { row[j] / denom } else { 0.0 };
            }
            if norms[i] > 0.0 {
                row[i] = 1.0;
            }
            let mut best = if i == 0 { 1 } else { 0 };
            for j in 0..n {
                if j != i && row[j] > row[best] {
                    best = j;
                }
            }
            friend.push(best as u32);
            if let Some(s) = sim.as_mut() {
                s.row_mut(i).assign(&ndarray::ArrayView1::from(&row[..]));
            }
        }
        Ok(Self {
            visits,
            norms,
            sim,
            friend,
        })
    }

    pub fn num_users(&self) -> usize {
        self.visits.len()
    }

    pub fn visits(&self) -> &[BTreeMap<u32, f64>] {
        &self.visits
    }

    pub fn dense(&self) -> Option<&Array2<f64>> {
        self.sim.as_ref()
    }

    pub fn similarity(&self, i: usize, j: usize) -> f64 {
        if let Some(s) = &self.sim {
            return s[[i, j]];
        }
        if i == j && self.norms[i] > 0.0 {
            return 1.0;
        }
        let denom = self.norms[i] * self.norms[j];
        if denom == 0.0 {
            0.0
        } else {
            sparse_dot(&self.visits[i], &self.visits[j]) / denom
        }
    }
}

/// Visit-frequency vectors from training trajectories (`train[u]` belongs to
/// user `u`), then cosine similarity and argmax friend (ties to the smaller
/// index).
pub fn build_social_context(train: &[Vec<Trajectory>], dense_limit: usize) -> Result<SocialContext> {
    let visits = train
        .iter()
        .map(|trajs| {
            let mut v = BTreeMap::new();
            for c in trajs.iter().flat_map(|t| &t.checkins) {
                *v.entry(c.poi).or_insert(0.0) += 1.0;
            }
            v
        })
        .collect();
    SocialContext::from_visits(visits, dense_limit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn visits(rows: &[&[(u32, f64)]]) -> Vec<BTreeMap<u32, f64>> {
        rows.iter().map(|r| r.iter().copied().collect()).collect()
    }

    #[test]
    fn cosine_reference_values() {
        assert!((cosine(&[1.0, 2.0, 0.0], &[1.0, 2.0, 0.0]) - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert!((cosine(&[1.0, 2.0, 0.0], &[2.0, 1.0, 0.0]) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn similarity_and_friends() {
        let v = visits(&[&[(0, 1.0), (1, 2.0)], &[(0, 2.0), (1, 1.0)], &[(2, 5.0)]]);
        for limit in [0, 100] {
            let s = SocialContext::from_visits(v.clone(), limit).unwrap();
            assert!((s.similarity(0, 1) - 0.8).abs() < 1e-12);
            assert_eq!(s.similarity(0, 2), 0.0);
            assert_eq!(s.similarity(1, 1), 1.0);
            assert_eq!(s.friend, vec![1, 0, 0]);
            assert_eq!(s.dense().is_some(), limit == 100);
        }
    }

    #[test]
    fn friend_is_never_self() {
        let v = visits(&[&[(0, 1.0)], &[(0, 1.0)], &[(0, 1.0)], &[]]);
        let s = SocialContext::from_visits(v, 100).unwrap();
        for (i, &f) in s.friend.iter().enumerate() {
            assert_ne!(i as u32, f);
        }
        // all ties: smallest other index
        assert_eq!(s.friend, vec![1, 0, 0, 0]);
    }

    #[test]
    fn single_user_is_rejected() {
        assert!(SocialContext::from_visits(visits(&[&[(0, 1.0)]]), 10).is_err());
    }
}
