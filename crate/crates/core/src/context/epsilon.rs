/// Logistic function.
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Transition cost between two check-ins: small when the normalized
/// distance and time interval are small and the category transition is
/// likely.
pub fn epsilon_cost(d_norm: f64, t_norm: f64, cat_p: f64, weights: [f64; 3]) -> f64 {
    let features = epsilon_features(d_norm, t_norm, cat_p);
    weights.iter().zip(features).map(|(w, f)| w * f).sum()
}

/// The three squashed terms that the cost weights multiply.
pub fn epsilon_features(d_norm: f64, t_norm: f64, cat_p: f64) -> [f64; 3] {
    [sigmoid(d_norm), sigmoid(t_norm), 1.0 - sigmoid(cat_p)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_values() {
        let third = 1.0 / 3.0;
        assert!((epsilon_cost(0.0, 0.0, 0.0, [third; 3]) - 0.5).abs() < 1e-12);
        let expect = 2.0 * sigmoid(1.0) + 0.5;
        assert!((epsilon_cost(1.0, 1.0, 0.0, [1.0; 3]) - expect).abs() < 1e-12);
        assert!((expect - 1.962_117_157_260_009_8).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (d, t, c) = (0.3, 0.7, 0.2);
        let w = [0.4, -0.2, 0.9];
        let analytic = epsilon_features(d, t, c);
        let h = 1e-6;
        for k in 0..3 {
            let (mut wp, mut wm) = (w, w);
            wp[k] += h;
            wm[k] -= h;
            let fd = (epsilon_cost(d, t, c, wp) - epsilon_cost(d, t, c, wm)) / (2.0 * h);
            assert!((fd - analytic[k]).abs() / analytic[k].abs() < 1e-4);
        }
    }

    proptest! {
        #[test]
        fn monotone(d in 0.0f64..1.0, t in 0.0f64..1.0, c in 0.0f64..1.0,
                    dd in 0.0f64..1.0, dt in 0.0f64..1.0, dc in 0.0f64..1.0,
                    w in prop::array::uniform3(0.01f64..2.0)) {
            let base = epsilon_cost(d, t, c, w);
            let better = epsilon_cost(d * (1.0 - dd), t * (1.0 - dt), c + (1.0 - c) * dc, w);
            prop_assert!(better <= base + 1e-12);
        }

        #[test]
        fn category_strictly_decreasing(c1 in 0.0f64..0.99, w3 in 0.01f64..2.0) {
            let c2 = c1 + 0.01;
            prop_assert!(epsilon_cost(0.5, 0.5, c2, [1.0, 1.0, w3]) < epsilon_cost(0.5, 0.5, c1, [1.0, 1.0, w3]));
        }
    }
}
