//! Envelope multi-objective Q-learning over (possibly reduced) rewards, the
//! replay buffer it learns from, and an exact scalarized solver for tabular
//! MOMDPs.

mod moq;
mod replay;
mod tabular;

pub use moq::{argmax, AgentParams, EnvelopeBatch, EnvelopeLoss, MoqAgent};
pub use replay::{Experience, ReplayBuffer};
pub use tabular::{solve_scalar_rewards, tabular_scalarized_solve, tabular_scalarized_solve_mapped, value_iteration};

use rand::Rng;

use crate::error::{usage, Result};

/// Flat-Dirichlet preference on the `(d-1)`-simplex.
pub fn sample_preference<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Vec<f64>> {
    if d < 1 {
        return Err(usage("preference dimension must be positive"));
    }
    Ok(crate::momdp::flat_dirichlet(rng, d))
}

/// Nonnegative entries summing to one within `tol`.
pub fn is_preference(w: &[f64], tol: f64) -> bool {
    !w.is_empty() && w.iter().all(|&x| x >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() <= tol
}
