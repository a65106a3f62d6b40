//! Minimal neural substrate: dense rectifier networks with inverted dropout and
//! hand-written reverse mode, row-softmax matrices, and Adam.

mod adam;
mod mlp;
mod softmax;

pub use adam::Adam;
pub use mlp::{Dense, Mlp, MlpCache, MlpGrads};
pub use softmax::{softmax_rows, softmax_rows_backward, SoftmaxMatrix};

use nalgebra::DMatrix;

/// Stacks equal-length rows into a batch matrix (one row per sample).
pub fn batch_from_rows<R: AsRef<[f64]>>(rows: &[R]) -> DMatrix<f64> {
    let cols = rows.first().map_or(0, |r| r.as_ref().len());
    DMatrix::from_fn(rows.len(), cols, |i, j| rows[i].as_ref()[j])
}

pub fn row_to_vec(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

/// Relative discrepancy `|a - b| / max(|a|, |b|)` between two flattened
/// gradients, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
