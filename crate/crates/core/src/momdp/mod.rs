//! Multi-objective environments: the stepping contract, trajectories and
//! discounted vector returns, plus two environment families.

mod tabular;
mod traffic;

pub use tabular::{make_random_tabular_momdp, TabularEnv, TabularMomdp};
pub(crate) use tabular::flat_dirichlet;
pub use traffic::{TrafficConfig, TrafficQueueEnv, NUM_LANES, NUM_PHASES};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};

/// Outcome of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: Vec<f64>,
    pub reward: Vec<f64>,
    /// The MDP reached an absorbing state; bootstrapping must stop.
    pub terminal: bool,
    /// The episode ended, either terminally or by the step limit.
    pub done: bool,
}

/// A seeded, stateful multi-objective environment.
pub trait Environment {
    fn num_objectives(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn observation_dim(&self) -> usize;
    /// Discrete identifier of the current state, used for trajectory export.
    fn state_id(&self) -> usize;
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<Step>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: Vec<f64>,
    pub next_state: usize,
    pub done: bool,
}

/// An ordered episode record; every reward shares one dimension and only the
/// last transition may be flagged `done`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if let Some(last) = self.transitions.last() {
            if last.done {
                return Err(usage("trajectory already finished"));
            }
            if last.reward.len() != t.reward.len() {
                return Err(usage("trajectory rewards of mixed dimension"));
            }
        }
        self.transitions.push(t);
        Ok(())
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn rewards(&self) -> impl Iterator<Item = &[f64]> {
        self.transitions.iter().map(|t| t.reward.as_slice())
    }

    /// CSV with columns `step,state,action,r_1..r_K`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let k = self.transitions.first().map_or(0, |t| t.reward.len());
        let mut header = vec!["step".to_string(), "state".into(), "action".into()];
        header.extend((1..=k).map(|i| format!("r_{i}")));
        w.write_record(&header)?;
        for (i, t) in self.transitions.iter().enumerate() {
            let mut row = vec![i.to_string(), t.state.to_string(), t.action.to_string()];
            row.extend(t.reward.iter().map(|x| format!("{x:?}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `sum_t gamma^t r_t`, componentwise. An empty stream yields the zero vector
/// of dimension `dim`.
pub fn discounted_return<'a, I>(rewards: I, gamma: f64, dim: usize) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    if !(0.0..1.0).contains(&gamma) {
        return Err(usage(format!("discount {gamma} outside [0, 1)")));
    }
    let mut total = vec![0.0; dim];
    let mut weight = 1.0;
    for r in rewards {
        if r.len() != dim {
            return Err(usage(format!(
                "reward of dimension {} in a stream of dimension {dim}",
                r.len()
            )));
        }
        for (acc, x) in total.iter_mut().zip(r) {
            *acc += weight * x;
        }
        weight *= gamma;
    }
    Ok(total)
}

/// Steps needed before `gamma^t` drops below `tol`.
pub fn truncation_horizon(gamma: f64, tol: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    (tol.ln() / gamma.ln()).ceil().max(1.0) as usize
}
