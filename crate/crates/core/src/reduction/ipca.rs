use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, usage, Result};

/// Running mean and covariance updated one reward at a time:
/// `mu' = t/(t+1) mu + r/(t+1)`, `C' = t/(t+1) C + t/(t+1)^2 (r - mu)(r - mu)^T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamingMoments {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    count: u64,
}

impl StreamingMoments {
    pub fn new(dim: usize) -> Self {
        Self { mean: DVector::zeros(dim), covariance: DMatrix::zeros(dim, dim), count: 0 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn observe(&mut self, r: &[f64]) -> Result<()> {
        ensure_len("reward", r.len(), self.dim())?;
        let r = DVector::from_column_slice(r);
        if self.count == 0 {
            self.mean = r;
        } else {
            let t = self.count as f64;
            let d = &r - &self.mean;
            self.mean = &self.mean * (t / (t + 1.0)) + r / (t + 1.0);
            self.covariance = &self.covariance * (t / (t + 1.0)) + (&d * d.transpose()) * (t / ((t + 1.0) * (t + 1.0)));
        }
        self.count += 1;
        Ok(())
    }

    /// Eigenpairs of the symmetrized covariance, eigenvalues descending (ties
    /// keep solver order). `None` when the solver fails to converge.
    pub fn eigen(&self) -> Option<(Vec<f64>, DMatrix<f64>)> {
        let sym = (&self.covariance + self.covariance.transpose()) * 0.5;
        let eig = sym.try_symmetric_eigen(f64::EPSILON, 100_000)?;
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(self.dim(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
        if vectors.iter().any(|x| !x.is_finite()) {
            return None;
        }
        Some((values, vectors))
    }
}

/// Top-`m` eigenvectors as columns, each signed so its largest-magnitude
/// entry (first on ties) is positive.
pub fn top_eigenvectors(moments: &StreamingMoments, m: usize) -> Option<DMatrix<f64>> {
    let (_, vectors) = moments.eigen()?;
    let mut u = vectors.columns(0, m).into_owned();
    for mut col in u.column_iter_mut() {
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
    Some(u)
}

/// Smallest number of leading eigenvalues whose sum reaches `threshold` of
/// the trace. Negative round-off eigenvalues count as zero; a zero spectrum
/// has rank 0.
pub fn effective_rank(moments: &StreamingMoments, threshold: f64) -> Result<usize> {
    if moments.count() < 2 {
        return Err(usage("effective rank needs at least two observations"));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(usage(format!("threshold {threshold} outside (0, 1]")));
    }
    let (values, _) = moments
        .eigen()
        .ok_or_else(|| crate::Error::Numeric("eigendecomposition did not converge".into()))?;
    let values: Vec<f64> = values.into_iter().map(|v| v.max(0.0)).collect();
    let trace: f64 = values.iter().sum();
    if trace <= 0.0 {
        return Ok(0);
    }
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if acc >= threshold * trace {
            return Ok(i + 1);
        }
    }
    Ok(values.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IpcaParams {
    pub refresh_interval: usize,
}

impl Default for IpcaParams {
    fn default() -> Self {
        Self { refresh_interval: 20 }
    }
}

/// Incremental PCA: streaming moments plus a projection refreshed from the
/// covariance eigenvectors. Reduced reward is `U^T (r - mu)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpcaReducer {
    moments: StreamingMoments,
    projection: Option<DMatrix<f64>>,
    m: usize,
    params: IpcaParams,
}

impl IpcaReducer {
    pub fn new(k: usize, m: usize, params: IpcaParams) -> Result<Self> {
        if m < 1 || m >= k {
            return Err(usage(format!("reduction needs K > m >= 1, got K={k}, m={m}")));
        }
        Ok(Self { moments: StreamingMoments::new(k), projection: None, m, params })
    }

    pub fn source_dim(&self) -> usize {
        self.moments.dim()
    }

    pub fn target_dim(&self) -> usize {
        self.m
    }

    pub fn params(&self) -> &IpcaParams {
        &self.params
    }

    pub fn moments(&self) -> &StreamingMoments {
        &self.moments
    }

    pub fn projection(&self) -> Option<&DMatrix<f64>> {
        self.projection.as_ref()
    }

    pub fn observe(&mut self, r: &[f64]) -> Result<()> {
        self.moments.observe(r)
    }

    /// Recomputes `U`. If the eigensolver fails the previous `U` is kept and a
    /// warning is logged.
    pub fn refresh(&mut self) -> Result<()> {
        if self.moments.count() < 2 {
            return Err(usage("refresh needs at least two observations"));
        }
        match top_eigenvectors(&self.moments, self.m) {
            Some(u) => self.projection = Some(u),
            None => log::warn!("ipca: eigensolver did not converge; keeping previous projection"),
        }
        Ok(())
    }

    pub fn transform(&self, r: &[f64]) -> Result<Vec<f64>> {
        ensure_len("reward", r.len(), self.source_dim())?;
        let out = self.transform_batch(&DMatrix::from_row_slice(1, r.len(), r))?;
        Ok(out.iter().copied().collect())
    }

    pub fn transform_batch(&self, rewards: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        ensure_len("reward batch width", rewards.ncols(), self.source_dim())?;
        let u = self.projection.as_ref().ok_or_else(|| usage("ipca transform before the first refresh"))?;
        Ok(centered_projection(rewards, self.moments.mean(), u))
    }
}

/// Rows of `(R - 1 mu^T) U`.
pub(crate) fn centered_projection(rewards: &DMatrix<f64>, mean: &DVector<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
    let mut centered = rewards.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    centered * u
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stream(n: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..k).map(|_| r.random_range(-3.0..3.0)).collect()).collect()
    }

    fn moments_of(rows: &[Vec<f64>]) -> StreamingMoments {
        let mut s = StreamingMoments::new(rows[0].len());
        rows.iter().for_each(|r| s.observe(r).unwrap());
        s
    }

    #[test]
    fn two_sample_mean() {
        let s = moments_of(&[vec![1.0, 1.0], vec![3.0, 3.0]]);
        assert_eq!(s.mean().as_slice(), &[2.0, 2.0]);
        assert_eq!(s.count(), 2);
    }

    #[test]
    fn mean_matches_batch_mean_and_covariance_is_symmetric() {
        let rows = stream(100, 5, 1);
        let s = moments_of(&rows);
        for k in 0..5 {
            let batch: f64 = rows.iter().map(|r| r[k]).sum::<f64>() / 100.0;
            assert!((s.mean()[k] - batch).abs() < 1e-9);
        }
        let c = s.covariance();
        assert!((c - c.transpose()).amax() < 1e-9);
        // the recursion yields the biased (1/n) sample covariance
        for i in 0..5 {
            for j in 0..5 {
                let biased: f64 = rows
                    .iter()
                    .map(|r| (r[i] - s.mean()[i]) * (r[j] - s.mean()[j]))
                    .sum::<f64>()
                    / 100.0;
                assert!((c[(i, j)] - biased).abs() < 1e-9);
            }
        }
    }

    fn diagonal(values: &[f64]) -> StreamingMoments {
        let k = values.len();
        StreamingMoments {
            mean: DVector::zeros(k),
            covariance: DMatrix::from_diagonal(&DVector::from_row_slice(values)),
            count: 10,
        }
    }

    #[test]
    fn diagonal_covariance_picks_coordinate_axes() {
        let u = top_eigenvectors(&diagonal(&[3.0, 2.0, 1.0]), 2).unwrap();
        let expected = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!((u - expected).amax() < 1e-12);
    }

    #[test]
    fn refreshed_projection_is_orthonormal_and_maximal() {
        let mut ipca = IpcaReducer::new(6, 3, IpcaParams::default()).unwrap();
        for r in stream(200, 6, 2) {
            ipca.observe(&r).unwrap();
        }
        ipca.refresh().unwrap();
        let u = ipca.projection().unwrap().clone();
        assert!((u.transpose() * &u - DMatrix::identity(3, 3)).amax() < 1e-6);
        let c = ipca.moments().covariance();
        let captured = (u.transpose() * c * &u).trace();
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let g = DMatrix::from_fn(6, 3, |_, _| r.random_range(-1.0..1.0));
            let q = g.qr().q();
            assert!((q.transpose() * c * &q).trace() <= captured + 1e-9);
        }
    }

    #[test]
    fn transform_centers_and_projects() {
        let mut ipca = IpcaReducer::new(4, 2, IpcaParams::default()).unwrap();
        assert!(ipca.transform(&[0.0; 4]).is_err());
        ipca.observe(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(ipca.refresh().is_err());
        ipca.observe(&[3.0, 2.0, 1.0, 0.0]).unwrap();
        ipca.refresh().unwrap();
        let mean: Vec<f64> = ipca.moments().mean().iter().copied().collect();
        let out = ipca.transform(&mean).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|x| x.abs() < 1e-12));

        ipca.projection = Some(DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]));
        let shifted: Vec<f64> = mean.iter().zip([5.0, 7.0, 9.0, 11.0]).map(|(m, d)| m + d).collect();
        let out = ipca.transform(&shifted).unwrap();
        assert!((out[0] - 5.0).abs() < 1e-12 && (out[1] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn effective_rank_examples() {
        assert_eq!(effective_rank(&diagonal(&[10.0, 0.1, 0.1]), 0.9).unwrap(), 1);
        assert_eq!(effective_rank(&diagonal(&[1.0; 4]), 0.95).unwrap(), 4);
        assert_eq!(effective_rank(&diagonal(&[0.0; 3]), 0.95).unwrap(), 0);
        assert!(effective_rank(&StreamingMoments::new(3), 0.95).is_err());
    }

    #[test]
    fn low_rank_stream_has_rank_two() {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let m = DMatrix::from_fn(16, 2, |_, _| r.random_range(-1.0..1.0));
        let mut s = StreamingMoments::new(16);
        for _ in 0..500 {
            let z = DVector::from_fn(2, |_, _| r.random_range(-1.0..1.0));
            s.observe((&m * z).as_slice()).unwrap();
        }
        assert_eq!(effective_rank(&s, 0.95).unwrap(), 2);
    }
}
