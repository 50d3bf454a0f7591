use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geo::haversine_km;

/// Pairwise haversine distances between POIs.
///
/// The |L|×|L| matrix is not materialized: entries are evaluated from the
/// coordinates on demand, and only the off-diagonal min/max used for
/// min-max scaling are precomputed.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    coords: Vec<(f64, f64)>,
    min_km: f64,
    max_km: f64,
}

impl DistanceMatrix {
    pub fn new(coords: Vec<(f64, f64)>) -> Result<Self> {
        if let Some(i) = coords.iter().position(|(la, lo)| !la.is_finite() || !lo.is_finite()) {
            return Err(Error::data(format!("POI {i} has no valid coordinates")));
        }
        let mut min_km = f64::INFINITY;
        let mut max_km = 0.0f64;
        for i in 0..coords.len() {
            let (la, lo) = coords[i];
            for &(lb, lob) in &coords[i + 1..] {
                let d = haversine_km(la, lo, lb, lob);
                min_km = min_km.min(d);
                max_km = max_km.max(d);
            }
        }
        if !min_km.is_finite() {
            min_km = 0.0;
        }
        Ok(Self {
            coords,
            min_km,
            max_km,
        })
    }

    pub(crate) fn from_parts(coords: Vec<(f64, f64)>, min_km: f64, max_km: f64) -> Self {
        Self {
            coords,
            min_km,
            max_km,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    pub fn bounds_km(&self) -> (f64, f64) {
        (self.min_km, self.max_km)
    }

    pub fn km(&self, i: u32, j: u32) -> f64 {
        if i == j {
            return 0.0;
        }
        let (a, b) = (self.coords[i as usize], self.coords[j as usize]);
        haversine_km(a.0, a.1, b.0, b.1)
    }

    /// Min-max scaled distance in [0,1]; zero when all distances coincide.
    pub fn norm(&self, i: u32, j: u32) -> f64 {
        let span = self.max_km - self.min_km;
        if span <= 0.0 {
            return 0.0;
        }
        ((self.km(i, j) - self.min_km) / span).clamp(0.0, 1.0)
    }

    pub fn to_dense_km(&self) -> Array2<f64> {
        let n = self.len() as u32;
        Array2::from_shape_fn((n as usize, n as usize), |(i, j)| self.km(i as u32, j as u32))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_values() {
        let m = DistanceMatrix::new(vec![(0.0, 0.0), (0.0, 1.0), (0.0, 0.0)]).unwrap();
        assert!((m.km(0, 1) - 111.194_926_644_558_73).abs() < 1e-9);
        assert_eq!(m.km(0, 2), 0.0);
        assert_eq!(m.km(1, 1), 0.0);
        assert_eq!(m.norm(0, 1), 1.0);
        assert_eq!(m.norm(0, 2), 0.0);
    }

    #[test]
    fn non_finite_coordinates_are_fatal() {
        assert!(DistanceMatrix::new(vec![(0.0, f64::NAN)]).is_err());
    }

    #[test]
    fn degenerate_scaling_is_zero() {
        let m = DistanceMatrix::new(vec![(1.0, 1.0), (1.0, 1.0)]).unwrap();
        assert_eq!(m.norm(0, 1), 0.0);
    }

    proptest! {
        #[test]
        fn symmetric_and_triangle(pts in prop::collection::vec((-80.0f64..80.0, -179.0f64..179.0), 3..8)) {
            let m = DistanceMatrix::new(pts.clone()).unwrap();
            let n = pts.len() as u32;
            for i in 0..n {
                prop_assert_eq!(m.km(i, i), 0.0);
                for j in 0..n {
                    prop_assert!((m.km(i, j) - m.km(j, i)).abs() < 1e-9);
                    let v = m.norm(i, j);
                    prop_assert!((0.0..=1.0).contains(&v));
                    for k in 0..n {
                        prop_assert!(m.km(i, k) <= m.km(i, j) + m.km(j, k) + 1e-6);
                    }
                }
            }
        }
    }
}
