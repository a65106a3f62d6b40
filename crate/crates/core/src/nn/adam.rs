use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};

/// Adam with bias-corrected moments. Moment buffers are created on the first
/// step and must keep the shapes they were created with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    /// One descent step. Non-finite gradients abort the step and leave both the
    /// parameters and the optimizer state untouched.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(usage("adam: parameter and gradient counts differ"));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(usage("adam: parameter and gradient shapes differ"));
            }
        }
        if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::Numeric("adam: non-finite gradient".into()));
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != grads.len()
            || self.first.iter().zip(grads).any(|(m, g)| m.len() != g.len())
        {
            return Err(usage("adam: parameter shapes changed between steps"));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let mut adam = Adam::new(0.1);
        let mut p = vec![1.0, -2.0];
        adam.step(&mut [&mut p], &[&[0.5, 0.5]]).unwrap();
        let after_first = p.clone();
        let m_before = adam.first_moments()[0].clone();
        adam.step(&mut [&mut p], &[&[0.0, 0.0]]).unwrap();
        let m_after = &adam.first_moments()[0];
        for i in 0..2 {
            assert!((m_after[i] - 0.9 * m_before[i]).abs() < 1e-15);
        }
        // stale momentum still moves parameters; a fresh optimizer does not
        let mut fresh = Adam::new(0.1);
        let mut q = after_first.clone();
        fresh.step(&mut [&mut q], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(q, after_first);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        // With a constant gradient g, m_hat = g and v_hat = g^2 exactly, so each
        // step moves by lr * |g| / (|g| + eps).
        let lr = 1e-3;
        let mut adam = Adam::new(lr);
        let mut p = vec![0.0, 0.0, 0.0];
        let g = [2.0, -0.5, 1e-3];
        let mut prev = p.clone();
        for _ in 0..2000 {
            adam.step(&mut [&mut p], &[&g]).unwrap();
            for i in 0..3 {
                let expected = lr * g[i].abs() / (g[i].abs() + 1e-8);
                assert!(((prev[i] - p[i]).abs() - expected).abs() < 1e-12);
            }
            prev = p.clone();
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_side_effects() {
        let mut adam = Adam::new(0.1);
        let mut p = vec![1.0];
        assert!(matches!(adam.step(&mut [&mut p], &[&[f64::NAN]]), Err(Error::Numeric(_))));
        assert_eq!(p, vec![1.0]);
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn identical_inputs_give_identical_outputs() {
        let run = || {
            let mut adam = Adam::new(0.01);
            let mut p = vec![0.3, 0.7];
            for i in 0..10 {
                adam.step(&mut [&mut p], &[&[i as f64, -1.0]]).unwrap();
            }
            (p, adam)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_a_usage_error() {
        let mut adam = Adam::new(0.1);
        let mut p = vec![1.0, 2.0];
        assert!(adam.step(&mut [&mut p], &[&[1.0]]).is_err());
    }
}
