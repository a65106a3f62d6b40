use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Row-wise softmax with the row maximum subtracted first. Entries that would
/// underflow to zero are floored at the smallest normal `f64`, so the result
/// stays strictly positive even for logit gaps beyond ~745.
pub fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.apply(|x| *x = (*x - max).exp());
        let total: f64 = row.iter().sum();
        row.apply(|x| *x = (*x / total).max(f64::MIN_POSITIVE));
    }
    out
}

/// Pulls a gradient with respect to the realized matrix back to the logits:
/// `dL/dz_jk = a_jk (g_jk - sum_l a_jl g_jl)`.
pub fn softmax_rows_backward(realized: &DMatrix<f64>, grad: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(realized.nrows(), realized.ncols());
    for j in 0..realized.nrows() {
        let inner: f64 = (0..realized.ncols()).map(|k| realized[(j, k)] * grad[(j, k)]).sum();
        for k in 0..realized.ncols() {
            out[(j, k)] = realized[(j, k)] * (grad[(j, k)] - inner);
        }
    }
    out
}

/// A matrix whose realization is the row-softmax of free logits, hence
/// strictly positive and row-stochastic for every finite logit value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxMatrix {
    pub logits: DMatrix<f64>,
}

impl SoftmaxMatrix {
    /// All-zero logits, realizing the uniform matrix with entries `1/cols`.
    pub fn uniform(rows: usize, cols: usize) -> Self {
        Self { logits: DMatrix::zeros(rows, cols) }
    }

    pub fn realize(&self) -> DMatrix<f64> {
        softmax_rows(&self.logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_logits_are_uniform() {
        let a = SoftmaxMatrix::uniform(3, 4).realize();
        assert!(a.iter().all(|&x| x == 0.25));
    }

    #[test]
    fn large_logit_saturates_to_one_hot() {
        let mut logits = DMatrix::zeros(1, 4);
        logits[(0, 2)] = 40.0;
        let a = softmax_rows(&logits);
        for k in 0..4 {
            let target = if k == 2 { 1.0 } else { 0.0 };
            assert!((a[(0, k)] - target).abs() < 1e-12);
        }
    }

    #[test]
    fn per_row_shift_is_invisible() {
        let logits = DMatrix::from_row_slice(2, 3, &[0.1, -2.0, 3.0, 5.0, 5.5, -1.0]);
        let mut shifted = logits.clone();
        for (j, c) in [7.0, -300.0].iter().enumerate() {
            shifted.row_mut(j).add_scalar_mut(*c);
        }
        let (a, b) = (softmax_rows(&logits), softmax_rows(&shifted));
        assert!((a - b).abs().max() < 1e-15);
    }

    #[test]
    fn backward_matches_central_differences() {
        let logits = DMatrix::from_row_slice(2, 3, &[0.3, -0.2, 1.1, -0.7, 0.0, 0.4]);
        let weights = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 1.5, -1.0]);
        let loss = |z: &DMatrix<f64>| softmax_rows(z).component_mul(&weights).sum();
        let analytic = softmax_rows_backward(&softmax_rows(&logits), &weights);
        let h = 1e-6;
        for idx in 0..6 {
            let (mut up, mut down) = (logits.clone(), logits.clone());
            up[idx] += h;
            down[idx] -= h;
            let fd = (loss(&up) - loss(&down)) / (2.0 * h);
            assert!((fd - analytic[idx]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn realization_is_positive_and_row_stochastic(
            entries in prop::collection::vec(-1e3f64..1e3, 12)
        ) {
            let m = SoftmaxMatrix { logits: DMatrix::from_row_slice(3, 4, &entries) };
            let a = m.realize();
            for row in a.row_iter() {
                prop_assert!(row.iter().all(|&x| x > 0.0));
                prop_assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
    }
}
