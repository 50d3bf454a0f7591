//! Great-circle helpers.

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Haversine distance in kilometres between two (lat, lon) points in degrees.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_points_are_zero() {
        assert_eq!(haversine_km(40.7, -74.0, 40.7, -74.0), 0.0);
    }

    #[test]
    fn one_degree_of_longitude_on_equator() {
        // 2·π·6371/360
        let expected = 111.194_926_644_558_73;
        assert!((haversine_km(0.0, 0.0, 0.0, 1.0) - expected).abs() < 1e-9);
    }

    #[test]
    fn symmetric() {
        let a = haversine_km(35.68, 139.76, 40.71, -74.0);
        let b = haversine_km(40.71, -74.0, 35.68, 139.76);
        assert!((a - b).abs() < 1e-9);
    }
}
