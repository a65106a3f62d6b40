//! Exhaustive ground truth on tiny MOMDPs: every deterministic stationary
//! policy is evaluated exactly, giving the deterministic-class Pareto front and
//! convex coverage set, and the scalarized optima under a reduction matrix are
//! checked for front membership.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::tabular_scalarized_solve_mapped;
use crate::error::{usage, Result};
use crate::metrics::{equidistant_simplex_points, pareto_filter_tagged, ParetoSet};
use crate::momdp::TabularMomdp;
use crate::nn::softmax_rows;

/// Largest policy count `enumerate_returns` accepts.
pub const ENUMERATION_LIMIT: usize = 100_000;

/// Absolute per-coordinate tolerance for front membership.
pub const MEMBERSHIP_TOL: f64 = 1e-8;

/// A deterministic stationary policy: one action per state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolicyTable(pub Vec<usize>);

/// Policy tables in mixed-radix order (state 0 varies fastest).
pub fn enumerate_policies(num_states: usize, num_actions: usize) -> Result<Vec<PolicyTable>> {
    let count = (num_actions as f64).powi(num_states as i32);
    if count > ENUMERATION_LIMIT as f64 {
        return Err(usage(format!(
            "{num_actions}^{num_states} policies exceed the enumeration limit of {ENUMERATION_LIMIT}"
        )));
    }
    Ok((0..count as usize)
        .map(|mut code| {
            PolicyTable(
                (0..num_states)
                    .map(|_| {
                        let a = code % num_actions;
                        code /= num_actions;
                        a
                    })
                    .collect(),
            )
        })
        .collect())
}

/// Exact expected discounted return of every deterministic stationary policy.
pub fn enumerate_returns(momdp: &TabularMomdp) -> Result<Vec<(PolicyTable, Vec<f64>)>> {
    enumerate_policies(momdp.num_states(), momdp.num_actions())?
        .into_iter()
        .map(|p| {
            let ret = momdp.policy_return(&p.0)?;
            Ok((p, ret))
        })
        .collect()
}

pub fn exact_pareto_front(momdp: &TabularMomdp) -> Result<ParetoSet> {
    let points: Vec<Vec<f64>> = enumerate_returns(momdp)?.into_iter().map(|(_, r)| r).collect();
    let tags = vec![None; points.len()];
    pareto_filter_tagged(points, tags)
}

/// Front points attaining `max_w w^T J` for some grid weight (ties within a
/// relative 1e-12 all count). Each survivor is tagged with the first such weight.
pub fn exact_ccs(front: &ParetoSet, weight_grid: &[Vec<f64>]) -> Result<ParetoSet> {
    if front.is_empty() {
        return Err(usage("CCS of an empty front"));
    }
    let mut tags: Vec<Option<Vec<f64>>> = vec![None; front.len()];
    for w in weight_grid {
        if w.len() != front.dim() {
            return Err(usage("weight and front dimensions differ"));
        }
        let scores: Vec<f64> = front.points().iter().map(|p| dot(p, w)).collect();
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-12 * (1.0 + best.abs());
        for (i, s) in scores.iter().enumerate() {
            if *s >= best - tol && tags[i].is_none() {
                tags[i] = Some(w.clone());
            }
        }
    }
    let (points, tags): (Vec<_>, Vec<_>) = front
        .points()
        .iter()
        .zip(tags)
        .filter(|(_, t)| t.is_some())
        .map(|(p, t)| (p.clone(), t))
        .unzip();
    pareto_filter_tagged(points, tags)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The 21-point preference grid: 20 divisions for `m = 2`, 5 for `m = 3`.
/// Other dimensions use the coarsest lattice with at least 21 points.
pub fn oracle_weight_grid(m: usize) -> Vec<Vec<f64>> {
    let divisions = (1..).find(|&d| crate::metrics::lattice_size(m, d) >= 21).unwrap_or(1);
    equidistant_simplex_points(m, divisions)
}

/// A scalarized optimum that missed the deterministic-class front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Failure {
    pub instance: usize,
    pub weight: Vec<f64>,
    pub policy: Vec<usize>,
    pub achieved: Vec<f64>,
    /// A front point dominating the achieved return, when one exists.
    pub dominated_by: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Verdict {
    pub instances: usize,
    pub checks: usize,
    pub failures: Vec<Theorem1Failure>,
}

impl Theorem1Verdict {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Folds another verdict in, renumbering its instances after ours.
    pub fn absorb(&mut self, other: Theorem1Verdict) {
        let offset = self.instances;
        self.instances += other.instances;
        self.checks += other.checks;
        self.failures.extend(other.failures.into_iter().map(|mut f| {
            f.instance += offset;
            f
        }));
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// For every grid preference, solves the MOMDP under reward `A r` and checks
/// that the greedy policy's original-space return lies on the exact front.
pub fn verify_theorem1(momdp: &TabularMomdp, a: &DMatrix<f64>, weight_grid: &[Vec<f64>]) -> Result<Theorem1Verdict> {
    if a.ncols() != momdp.num_objectives() {
        return Err(usage(format!(
            "matrix has {} columns but the MOMDP has {} objectives",
            a.ncols(),
            momdp.num_objectives()
        )));
    }
    let front = exact_pareto_front(momdp)?;
    let reduce = |r: &[f64]| (a * DVector::from_column_slice(r)).iter().copied().collect::<Vec<f64>>();
    let mut verdict = Theorem1Verdict { instances: 1, ..Default::default() };
    for w in weight_grid {
        let (policy, achieved) = tabular_scalarized_solve_mapped(momdp, reduce, w)?;
        verdict.checks += 1;
        if !front.contains_approx(&achieved, MEMBERSHIP_TOL) {
            let dominated_by = front
                .points()
                .iter()
                .find(|p| crate::metrics::dominates_unchecked(p, &achieved))
                .cloned();
            verdict.failures.push(Theorem1Failure { instance: 0, weight: w.clone(), policy, achieved, dominated_by });
        }
    }
    Ok(verdict)
}

/// Random strictly positive row-stochastic `m x K` matrix (softmax of
/// uniform logits in `[-3, 3]`).
pub fn random_positive_row_stochastic<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> DMatrix<f64> {
    let logits = DMatrix::from_fn(m, k, |_, _| rng.random_range(-3.0..3.0));
    softmax_rows(&logits)
}

/// Random row-stochastic matrix of mixed sign, as realized under the
/// `-positivity` ablation: uniform entries in `[-1, 1]` shifted so each row
/// sums to one.
pub fn random_sign_mixed_row_stochastic<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> DMatrix<f64> {
    let mut a = DMatrix::from_fn(m, k, |_, _| rng.random_range(-1.0..1.0));
    for mut row in a.row_iter_mut() {
        let shift = (row.sum() - 1.0) / k as f64;
        row.add_scalar_mut(-shift);
    }
    a
}

/// Which matrix family a suite draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixFamily {
    PositiveRowStochastic,
    SignMixedRowStochastic,
}

/// Shape of the random oracle suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSuite {
    pub instances: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub objectives: Vec<usize>,
    pub reduced_dims: Vec<usize>,
    pub gamma: f64,
}

impl Default for OracleSuite {
    fn default() -> Self {
        Self { instances: 200, max_states: 4, max_actions: 3, objectives: vec![3, 4, 5], reduced_dims: vec![2, 3], gamma: 0.9 }
    }
}

/// Runs [`verify_theorem1`] over random MOMDPs and matrices. Instance `i`
/// draws its sizes, MOMDP seed and matrix from `rng` in order.
pub fn run_theorem1_suite<R: Rng + ?Sized>(
    suite: &OracleSuite,
    family: MatrixFamily,
    rng: &mut R,
) -> Result<Theorem1Verdict> {
    if suite.objectives.is_empty() || suite.reduced_dims.is_empty() || suite.max_states == 0 || suite.max_actions < 2 {
        return Err(usage("oracle suite needs objective and reduced-dimension choices, states and >= 2 actions"));
    }
    let mut total = Theorem1Verdict::default();
    for _ in 0..suite.instances {
        let states = rng.random_range(1..=suite.max_states);
        let actions = rng.random_range(2..=suite.max_actions);
        let k = suite.objectives[rng.random_range(0..suite.objectives.len())];
        let m = suite.reduced_dims[rng.random_range(0..suite.reduced_dims.len())];
        let seed: u64 = rng.random();
        let momdp = crate::momdp::make_random_tabular_momdp(seed, states, actions, k, suite.gamma)?;
        let a = match family {
            MatrixFamily::PositiveRowStochastic => random_positive_row_stochastic(m, k, rng),
            MatrixFamily::SignMixedRowStochastic => random_sign_mixed_row_stochastic(m, k, rng),
        };
        total.absorb(verify_theorem1(&momdp, &a, &oracle_weight_grid(m))?);
    }
    Ok(total)
}
