use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_len, usage, Result};
use crate::momdp::TabularMomdp;

const SPAN_TOL: f64 = 1e-10;
const TIE_TOL: f64 = 1e-10;

/// Scalar value iteration on per-pair rewards `rewards[s * A + a]` until the
/// span of successive differences drops below `1e-10`. Returns the values and
/// the span after every sweep. The values can be off by a common constant,
/// which leaves the greedy policy unchanged.
pub fn value_iteration(momdp: &TabularMomdp, rewards: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, na) = (momdp.num_states(), momdp.num_actions());
    ensure_len("scalar reward table", rewards.len(), n * na)?;
    let mut v = vec![0.0; n];
    let mut spans = Vec::new();
    for _ in 0..1_000_000 {
        let next: Vec<f64> = (0..n)
            .map(|s| (0..na).map(|a| q_value(momdp, rewards, &v, s, a)).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let diffs: Vec<f64> = next.iter().zip(&v).map(|(x, y)| x - y).collect();
        let span = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - diffs.iter().copied().fold(f64::INFINITY, f64::min);
        v = next;
        spans.push(span);
        if span < SPAN_TOL {
            return Ok((v, spans));
        }
    }
    Err(crate::Error::Numeric("value iteration did not converge".into()))
}

fn q_value(momdp: &TabularMomdp, rewards: &[f64], v: &[f64], s: usize, a: usize) -> f64 {
    let na = momdp.num_actions();
    let future: f64 = momdp.transition(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
    rewards[s * na + a] + momdp.gamma() * future
}

/// Greedy policy with ties (within a relative `1e-10`) going to the lowest
/// action index.
fn greedy(momdp: &TabularMomdp, rewards: &[f64], v: &[f64]) -> Vec<usize> {
    (0..momdp.num_states())
        .map(|s| {
            let q: Vec<f64> = (0..momdp.num_actions()).map(|a| q_value(momdp, rewards, v, s, a)).collect();
            let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tol = TIE_TOL * (1.0 + best.abs());
            q.iter().position(|&x| x >= best - tol).unwrap_or(0)
        })
        .collect()
}

fn scalar_policy_values(momdp: &TabularMomdp, rewards: &[f64], policy: &[usize]) -> Result<Vec<f64>> {
    let n = momdp.num_states();
    let na = momdp.num_actions();
    let system = DMatrix::from_fn(n, n, |s, t| {
        f64::from(u8::from(s == t)) - momdp.gamma() * momdp.transition(s, policy[s])[t]
    });
    let rhs = DVector::from_fn(n, |s, _| rewards[s * na + policy[s]]);
    let v = system.lu().solve(&rhs).ok_or_else(|| usage("singular policy-evaluation system"))?;
    Ok(v.iter().copied().collect())
}

/// Optimal deterministic policy for the scalar rewards, by value iteration
/// followed by exact policy-iteration refinement.
pub fn solve_scalar_rewards(momdp: &TabularMomdp, rewards: &[f64]) -> Result<Vec<usize>> {
    let (v, _) = value_iteration(momdp, rewards)?;
    let mut policy = greedy(momdp, rewards, &v);
    for _ in 0..100 {
        let exact = scalar_policy_values(momdp, rewards, &policy)?;
        let improved = greedy(momdp, rewards, &exact);
        if improved == policy {
            break;
        }
        policy = improved;
    }
    Ok(policy)
}

/// Scalarized optimum under preference `w` over the MOMDP's own objectives:
/// the greedy deterministic policy and its vector return.
pub fn tabular_scalarized_solve(momdp: &TabularMomdp, w: &[f64]) -> Result<(Vec<usize>, Vec<f64>)> {
    tabular_scalarized_solve_mapped(momdp, |r| r.to_vec(), w)
}

/// Scalarized optimum of `w^T f(r)` where `f` maps each reward vector to the
/// space `w` lives in. The returned vector return is in the ORIGINAL space.
pub fn tabular_scalarized_solve_mapped(
    momdp: &TabularMomdp,
    f: impl Fn(&[f64]) -> Vec<f64>,
    w: &[f64],
) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut rewards = Vec::with_capacity(momdp.num_states() * momdp.num_actions());
    for s in 0..momdp.num_states() {
        for a in 0..momdp.num_actions() {
            let mapped = f(momdp.reward(s, a));
            ensure_len("preference", w.len(), mapped.len())?;
            rewards.push(mapped.iter().zip(w).map(|(x, y)| x * y).sum());
        }
    }
    let policy = solve_scalar_rewards(momdp, &rewards)?;
    let ret = momdp.policy_return(&policy)?;
    Ok((policy, ret))
}
