use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::train::{stream_rng, Stream};
use crate::agent::MoqAgent;
use crate::error::{usage, Result};
use crate::metrics::{equidistant_simplex_points, eum, hypervolume, pareto_filter_tagged, sparsity, MetricRecord, ParetoSet};
use crate::momdp::discounted_return;
use crate::reduction::Reducer;

/// Mean original-space discounted return of the greedy policy for one
/// evaluation preference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub preference: Vec<f64>,
    pub value: Vec<f64>,
}

/// Greedy rollouts for every lattice preference of the reduced simplex. Each
/// rollout runs in a fresh environment seeded from the evaluation stream; the
/// scored return is the ORIGINAL K-dimensional discounted reward sum.
pub fn evaluate(config: &ExperimentConfig, agent: &MoqAgent, reducer: &Reducer, seed: u64) -> Result<Vec<EvalPoint>> {
    let k = config.num_objectives()?;
    let m = config.reduced_dim()?;
    if reducer.target_dim() != m || agent.reward_dim() != m || reducer.source_dim() != k {
        return Err(usage("agent, reducer and config disagree on dimensions"));
    }
    let rollouts = config.rollouts_per_preference()?;
    let gamma = agent.params().gamma;
    let mut eval_rng = stream_rng(seed, Stream::Evaluation);
    let mut points = Vec::new();
    for omega in equidistant_simplex_points(m, config.eval.divisions) {
        let mut mean = vec![0.0; k];
        for _ in 0..rollouts {
            let mut env = config.env.build(eval_rng.random())?;
            let mut obs = env.reset();
            let mut rewards = Vec::new();
            loop {
                let step = env.step(agent.greedy_action(&obs, &omega)?)?;
                rewards.push(step.reward);
                if step.done {
                    break;
                }
                obs = step.observation;
            }
            let ret = discounted_return(rewards.iter().map(Vec::as_slice), gamma, k)?;
            mean.iter_mut().zip(&ret).for_each(|(acc, x)| *acc += x / rollouts as f64);
        }
        points.push(EvalPoint { preference: omega, value: mean });
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub front: ParetoSet,
    pub hypervolume: f64,
    pub sparsity: f64,
    pub eum: f64,
}

impl Score {
    /// The three metrics as JSON metric records.
    pub fn records(&self, reference: &[f64]) -> Vec<MetricRecord> {
        let n_points = self.front.len();
        vec![
            MetricRecord { metric: "hypervolume".into(), value: self.hypervolume, ref_point: Some(reference.to_vec()), n_points },
            MetricRecord { metric: "sparsity".into(), value: self.sparsity, ref_point: None, n_points },
            MetricRecord { metric: "eum".into(), value: self.eum, ref_point: None, n_points },
        ]
    }
}

/// Pareto-filters the evaluated points, then computes hypervolume against
/// `reference`, sparsity, and EUM over the K-dimensional lattice with
/// `eum_divisions` divisions.
pub fn score(points: &[EvalPoint], reference: &[f64], eum_divisions: usize) -> Result<Score> {
    let values: Vec<Vec<f64>> = points.iter().map(|p| p.value.clone()).collect();
    let tags = points.iter().map(|p| Some(p.preference.clone())).collect();
    let front = pareto_filter_tagged(values, tags)?;
    if front.dim() != reference.len() {
        return Err(usage("reference point and returns differ in dimension"));
    }
    let prefs = equidistant_simplex_points(front.dim(), eum_divisions);
    Ok(Score {
        hypervolume: hypervolume(front.points(), reference)?,
        sparsity: sparsity(front.points())?,
        eum: eum(&front, &prefs)?,
        front,
    })
}
