use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ipca::{centered_projection, StreamingMoments};
use crate::error::{ensure_len, usage, Error, Result};
use crate::nn::Adam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NpcaParams {
    pub lr: f64,
    pub beta: f64,
    pub update_interval: usize,
}

impl Default for NpcaParams {
    fn default() -> Self {
        Self { lr: 1e-4, beta: 5e4, update_interval: 20 }
    }
}

/// Objective `tr(U^T C U) - beta ||U^T U - I||_F^2` at `U`.
pub fn npca_objective(u: &DMatrix<f64>, c: &DMatrix<f64>, beta: f64) -> f64 {
    let gram = u.tr_mul(u) - DMatrix::identity(u.ncols(), u.ncols());
    (u.tr_mul(&(c * u))).trace() - beta * gram.norm_squared()
}

/// Gradient of [`npca_objective`] with respect to `U` for symmetric `C`:
/// `2 C U - 4 beta U (U^T U - I)`.
pub fn npca_objective_gradient(u: &DMatrix<f64>, c: &DMatrix<f64>, beta: f64) -> DMatrix<f64> {
    let gram = u.tr_mul(u) - DMatrix::identity(u.ncols(), u.ncols());
    (c * u) * 2.0 - (u * gram) * (4.0 * beta)
}

/// Online nonnegative PCA with `U = relu(P)` trained by gradient ascent on
/// the streaming covariance. Reduced reward is `U^T (r - mu)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpcaReducer {
    moments: StreamingMoments,
    free: DMatrix<f64>,
    adam: Adam,
    params: NpcaParams,
}

impl NpcaReducer {
    /// Free parameters start with every entry `1/K`.
    pub fn new(k: usize, m: usize, params: NpcaParams) -> Result<Self> {
        if m < 1 || m >= k {
            return Err(usage(format!("reduction needs K > m >= 1, got K={k}, m={m}")));
        }
        Ok(Self {
            moments: StreamingMoments::new(k),
            free: DMatrix::from_element(k, m, 1.0 / k as f64),
            adam: Adam::new(params.lr),
            params,
        })
    }

    pub fn source_dim(&self) -> usize {
        self.free.nrows()
    }

    pub fn target_dim(&self) -> usize {
        self.free.ncols()
    }

    pub fn params(&self) -> &NpcaParams {
        &self.params
    }

    pub fn moments(&self) -> &StreamingMoments {
        &self.moments
    }

    pub fn free_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.free
    }

    pub fn realized(&self) -> DMatrix<f64> {
        self.free.map(|x| x.max(0.0))
    }

    pub fn observe(&mut self, r: &[f64]) -> Result<()> {
        self.moments.observe(r)
    }

    /// Objective value at the current parameters and its gradient with respect
    /// to the free parameters (zero where the rectifier is inactive).
    pub fn objective_and_gradient(&self, c: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let u = self.realized();
        let objective = npca_objective(&u, c, self.params.beta);
        let mut grad = npca_objective_gradient(&u, c, self.params.beta);
        grad.zip_apply(&self.free, |g, p| {
            if p <= 0.0 {
                *g = 0.0;
            }
        });
        (objective, grad)
    }

    /// One Adam ascent step on the current covariance. Returns the objective
    /// before the step; a non-finite objective skips it.
    pub fn update(&mut self) -> Result<f64> {
        let c = self.moments.covariance().clone();
        self.update_with(&c)
    }

    pub fn update_with(&mut self, c: &DMatrix<f64>) -> Result<f64> {
        ensure_len("covariance", c.nrows(), self.source_dim())?;
        let (objective, grad) = self.objective_and_gradient(c);
        if !objective.is_finite() {
            return Err(Error::Numeric(format!("npca objective is {objective}")));
        }
        let descent = -grad;
        self.adam.step(&mut [self.free.as_mut_slice()], &[descent.as_slice()])?;
        Ok(objective)
    }

    pub fn transform(&self, r: &[f64]) -> Result<Vec<f64>> {
        ensure_len("reward", r.len(), self.source_dim())?;
        let out = self.transform_batch(&DMatrix::from_row_slice(1, r.len(), r))?;
        Ok(out.iter().copied().collect())
    }

    pub fn transform_batch(&self, rewards: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        ensure_len("reward batch width", rewards.ncols(), self.source_dim())?;
        Ok(centered_projection(rewards, self.moments.mean(), &self.realized()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::relative_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_covariance(k: usize, seed: u64) -> DMatrix<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(k, k, |_, _| r.random_range(-1.0..1.0));
        &g * g.transpose()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let mut npca = NpcaReducer::new(6, 3, NpcaParams { beta: 2.0, ..NpcaParams::default() }).unwrap();
        npca.free.apply(|x| *x = r.random_range(0.05..0.6));
        let c = random_covariance(6, 5);
        let (_, grad) = npca.objective_and_gradient(&c);
        let h = 1e-6;
        let mut numeric = Vec::new();
        for i in 0..npca.free.len() {
            let orig = npca.free[i];
            npca.free[i] = orig + h;
            let up = npca.objective_and_gradient(&c).0;
            npca.free[i] = orig - h;
            let down = npca.objective_and_gradient(&c).0;
            npca.free[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        assert!(relative_error(grad.as_slice(), &numeric) < 1e-4);
    }

    #[test]
    fn realized_projection_stays_nonnegative() {
        let mut npca = NpcaReducer::new(5, 2, NpcaParams { lr: 0.05, ..NpcaParams::default() }).unwrap();
        let c = random_covariance(5, 1);
        for _ in 0..500 {
            npca.update_with(&c).unwrap();
            assert!(npca.realized().iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn unpenalized_ascent_grows_along_the_dominant_axis() {
        let mut c = DMatrix::zeros(4, 4);
        c[(0, 0)] = 1.0;
        let mut npca = NpcaReducer::new(4, 2, NpcaParams { beta: 0.0, lr: 1e-2, ..NpcaParams::default() }).unwrap();
        let mut last = f64::NEG_INFINITY;
        for _ in 0..50 {
            let objective = npca.update_with(&c).unwrap();
            assert!(objective > last);
            last = objective;
        }
        // only the first row receives gradient
        assert!(npca.realized().row(0).iter().all(|&x| x > 0.25));
        assert!(npca.realized().rows(1, 3).iter().all(|&x| x == 0.25));
    }

    #[test]
    fn transform_is_centered() {
        let mut npca = NpcaReducer::new(3, 2, NpcaParams::default()).unwrap();
        npca.observe(&[1.0, 2.0, 3.0]).unwrap();
        npca.observe(&[3.0, 4.0, 5.0]).unwrap();
        assert!(npca.transform(&[2.0, 3.0, 4.0]).unwrap().iter().all(|x| x.abs() < 1e-15));
        let out = npca.transform(&[5.0, 3.0, 4.0]).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-12 && (out[1] - 1.0).abs() < 1e-12);
    }
}
