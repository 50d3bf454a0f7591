use ndarray::Array2;

use crate::config::CategoryNorm;
use crate::corpus::Trajectory;

/// Category-to-category transition counts and their row-normalized
/// probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryTransitionMatrix {
    pub counts: Array2<f64>,
    pub probs: Array2<f64>,
}

impl CategoryTransitionMatrix {
    pub fn from_counts(counts: Array2<f64>, norm: CategoryNorm) -> Self {
        let mut probs = counts.clone();
        for mut row in probs.rows_mut() {
            match norm {
                CategoryNorm::Softmax => {
                    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|x| (x - m).exp());
                    let s = row.sum();
                    row.mapv_inplace(|x| x / s);
                }
                CategoryNorm::Ratio => {
                    let s = row.sum();
                    if s > 0.0 {
                        row.mapv_inplace(|x| x / s);
                    } else {
                        let n = row.len() as f64;
                        row.fill(1.0 / n);
                    }
                }
            }
        }
        Self { counts, probs }
    }

    pub fn prob(&self, from: u32, to: u32) -> f64 {
        self.probs[[from as usize, to as usize]]
    }
}

pub fn build_category_transitions<'a>(
    num_categories: usize,
    train: impl IntoIterator<Item = &'a Trajectory>,
    norm: CategoryNorm,
) -> CategoryTransitionMatrix {
    let mut counts = Array2::zeros((num_categories, num_categories));
    for t in train {
        for w in t.checkins.windows(2) {
            counts[[w[0].category as usize, w[1].category as usize]] += 1.0;
        }
    }
    CategoryTransitionMatrix::from_counts(counts, norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_row() {
        let m = CategoryTransitionMatrix::from_counts(array![[2.0, 1.0, 0.0]], CategoryNorm::Softmax);
        // e^2, e^1, e^0 over their sum
        let expect = [0.665_240_955_774_821_8, 0.244_728_471_054_797_6, 0.090_030_573_170_380_46];
        for (a, b) in m.probs.row(0).iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_counts_give_uniform_rows() {
        let m = CategoryTransitionMatrix::from_counts(Array2::from_elem((4, 4), 3.0), CategoryNorm::Softmax);
        assert!(m.probs.iter().all(|&p| (p - 0.25).abs() < 1e-12));
    }

    #[test]
    fn ratio_mode() {
        let m = CategoryTransitionMatrix::from_counts(array![[3.0, 1.0], [0.0, 0.0]], CategoryNorm::Ratio);
        assert_eq!(m.probs, array![[0.75, 0.25], [0.5, 0.5]]);
    }

    #[test]
    fn rows_sum_to_one() {
        let counts = Array2::from_shape_fn((5, 5), |(i, j)| ((i * 7 + j * 3) % 5) as f64 * 4.0);
        for norm in [CategoryNorm::Softmax, CategoryNorm::Ratio] {
            let m = CategoryTransitionMatrix::from_counts(counts.clone(), norm);
            for row in m.probs.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            }
        }
    }
}
