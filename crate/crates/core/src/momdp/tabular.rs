use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, usage, Result};

use super::{Environment, Step};

const STOCHASTIC_TOL: f64 = 1e-9;

/// A finite MOMDP with explicit transition and vector-reward tables, both
/// indexed by `state * num_actions + action`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMomdp {
    num_states: usize,
    num_actions: usize,
    num_objectives: usize,
    transitions: Vec<Vec<f64>>,
    rewards: Vec<Vec<f64>>,
    initial: Vec<f64>,
    gamma: f64,
}

impl TabularMomdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<Vec<f64>>,
        rewards: Vec<Vec<f64>>,
        initial: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(usage("tabular MOMDP needs at least one state and one action"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(usage(format!("discount {gamma} outside [0, 1)")));
        }
        let pairs = num_states * num_actions;
        ensure_len("transition table", transitions.len(), pairs)?;
        ensure_len("reward table", rewards.len(), pairs)?;
        ensure_len("initial distribution", initial.len(), num_states)?;
        let num_objectives = rewards[0].len();
        if num_objectives < 2 {
            return Err(usage("a MOMDP needs at least two objectives"));
        }
        for row in &transitions {
            check_distribution("transition row", row, num_states)?;
        }
        check_distribution("initial distribution", &initial, num_states)?;
        for r in &rewards {
            ensure_len("reward vector", r.len(), num_objectives)?;
            if r.iter().any(|x| !x.is_finite()) {
                return Err(usage("non-finite reward entry"));
            }
        }
        Ok(Self { num_states, num_actions, num_objectives, transitions, rewards, initial, gamma })
    }

    /// Single-state bandit with one action per reward vector.
    pub fn bandit(arm_rewards: Vec<Vec<f64>>, gamma: f64) -> Result<Self> {
        let arms = arm_rewards.len();
        Self::new(1, arms, vec![vec![1.0]; arms], arm_rewards, vec![1.0], gamma)
    }

    /// Two-objective bandit whose deterministic-class Pareto front is the three
    /// supported points `(1, .1)`, `(.75, .75)`, `(.1, 1)` scaled by `1/(1-gamma)`,
    /// plus a dominated arm.
    pub fn three_point_front(gamma: f64) -> Result<Self> {
        Self::bandit(
            vec![vec![1.0, 0.1], vec![0.75, 0.75], vec![0.1, 1.0], vec![0.3, 0.3]],
            gamma,
        )
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_objectives(&self) -> usize {
        self.num_objectives
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition(&self, state: usize, action: usize) -> &[f64] {
        &self.transitions[state * self.num_actions + action]
    }

    pub fn reward(&self, state: usize, action: usize) -> &[f64] {
        &self.rewards[state * self.num_actions + action]
    }

    /// Same dynamics with every reward vector replaced by `f(r)`.
    pub fn map_rewards(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let rewards = self.rewards.iter().map(|r| f(r)).collect();
        Self::new(
            self.num_states,
            self.num_actions,
            self.transitions.clone(),
            rewards,
            self.initial.clone(),
            self.gamma,
        )
    }

    fn check_policy(&self, policy: &[usize]) -> Result<()> {
        ensure_len("policy table", policy.len(), self.num_states)?;
        if policy.iter().any(|&a| a >= self.num_actions) {
            return Err(usage("policy selects an out-of-range action"));
        }
        Ok(())
    }

    /// Per-state vector values of a deterministic stationary policy, one row
    /// per state, from the linear system `(I - gamma P_pi) V = R_pi` solved by
    /// LU with partial pivoting.
    pub fn policy_values(&self, policy: &[usize]) -> Result<DMatrix<f64>> {
        self.check_policy(policy)?;
        let n = self.num_states;
        let system = DMatrix::from_fn(n, n, |s, t| {
            let p = self.transition(s, policy[s])[t];
            f64::from(u8::from(s == t)) - self.gamma * p
        });
        let rhs = DMatrix::from_fn(n, self.num_objectives, |s, k| self.reward(s, policy[s])[k]);
        system
            .lu()
            .solve(&rhs)
            .ok_or_else(|| usage("singular policy-evaluation system"))
    }

    /// Expected discounted vector return of a deterministic policy from the
    /// initial distribution.
    pub fn policy_return(&self, policy: &[usize]) -> Result<Vec<f64>> {
        let values = self.policy_values(policy)?;
        Ok((0..self.num_objectives)
            .map(|k| (0..self.num_states).map(|s| self.initial[s] * values[(s, k)]).sum())
            .collect())
    }
}

fn check_distribution(what: &str, row: &[f64], len: usize) -> Result<()> {
    ensure_len(what, row.len(), len)?;
    if row.iter().any(|&p| p.is_nan() || p < 0.0) {
        return Err(usage(format!("{what} has a negative or NaN entry")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(usage(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

pub(crate) fn flat_dirichlet<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..len).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

/// Random MOMDP for oracle tests: rewards uniform in `[0,1]^K`, each transition
/// row a flat Dirichlet draw, uniform initial distribution.
pub fn make_random_tabular_momdp(
    seed: u64,
    num_states: usize,
    num_actions: usize,
    num_objectives: usize,
    gamma: f64,
) -> Result<TabularMomdp> {
    if num_objectives < 2 {
        return Err(usage("random MOMDP needs K >= 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = num_states * num_actions;
    let rewards = (0..pairs)
        .map(|_| (0..num_objectives).map(|_| rng.random::<f64>()).collect())
        .collect();
    let transitions = (0..pairs).map(|_| flat_dirichlet(&mut rng, num_states)).collect();
    let initial = vec![1.0 / num_states as f64; num_states];
    TabularMomdp::new(num_states, num_actions, transitions, rewards, initial, gamma)
}

/// Episodic simulator over a [`TabularMomdp`] with a fixed step limit; states
/// are observed as one-hot vectors.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    momdp: TabularMomdp,
    horizon: usize,
    rng: ChaCha8Rng,
    state: usize,
    t: usize,
    done: bool,
}

impl TabularEnv {
    pub fn new(momdp: TabularMomdp, horizon: usize, seed: u64) -> Self {
        Self { momdp, horizon, rng: ChaCha8Rng::seed_from_u64(seed), state: 0, t: 0, done: true }
    }

    pub fn momdp(&self) -> &TabularMomdp {
        &self.momdp
    }

    fn sample(rng: &mut ChaCha8Rng, dist: &[f64]) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in dist.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        dist.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    fn observe(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.momdp.num_states];
        obs[self.state] = 1.0;
        obs
    }
}

impl Environment for TabularEnv {
    fn num_objectives(&self) -> usize {
        self.momdp.num_objectives
    }

    fn num_actions(&self) -> usize {
        self.momdp.num_actions
    }

    fn observation_dim(&self) -> usize {
        self.momdp.num_states
    }

    fn state_id(&self) -> usize {
        self.state
    }

    fn reset(&mut self) -> Vec<f64> {
        self.state = Self::sample(&mut self.rng, &self.momdp.initial);
        self.t = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if self.done {
            return Err(usage("step on a finished episode; call reset first"));
        }
        if action >= self.momdp.num_actions {
            return Err(usage(format!("action {action} out of range")));
        }
        let reward = self.momdp.reward(self.state, action).to_vec();
        let next = Self::sample(&mut self.rng, self.momdp.transition(self.state, action));
        self.state = next;
        self.t += 1;
        self.done = self.t >= self.horizon;
        Ok(Step { observation: self.observe(), reward, terminal: false, done: self.done })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::momdp::{discounted_return, truncation_horizon};

    #[test]
    fn random_momdp_is_reproducible_and_stochastic() {
        let a = make_random_tabular_momdp(1, 2, 2, 3, 0.9).unwrap();
        let b = make_random_tabular_momdp(1, 2, 2, 3, 0.9).unwrap();
        assert_eq!(a, b);
        let c = make_random_tabular_momdp(2, 4, 3, 5, 0.95).unwrap();
        assert_eq!(c.rewards.len(), 12);
        for s in 0..4 {
            for act in 0..3 {
                assert!((c.transition(s, act).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert_eq!(c.reward(s, act).len(), 5);
                assert!(c.reward(s, act).iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
        }
        assert!(make_random_tabular_momdp(1, 2, 2, 1, 0.9).is_err());
    }

    #[test]
    fn validation_rejects_bad_tables() {
        assert!(TabularMomdp::new(1, 1, vec![vec![0.5]], vec![vec![0.0, 0.0]], vec![1.0], 0.9).is_err());
        assert!(TabularMomdp::new(1, 1, vec![vec![1.0]], vec![vec![0.0, 0.0]], vec![1.0], 1.0).is_err());
        assert!(TabularMomdp::new(1, 1, vec![vec![1.0]], vec![vec![0.0, 0.0]], vec![0.9], 0.9).is_err());
    }

    #[test]
    fn deterministic_initial_state_and_table_lookup() {
        let m = TabularMomdp::new(
            2,
            1,
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            vec![1.0, 0.0],
            0.9,
        )
        .unwrap();
        let mut env = TabularEnv::new(m, 10, 3);
        assert_eq!(env.reset(), vec![1.0, 0.0]);
        assert_eq!(env.state_id(), 0);
        let step = env.step(0).unwrap();
        assert_eq!(step.reward, vec![1.0, 0.0]);
        assert!(env.step(1).is_err());
    }

    #[test]
    fn finished_episode_rejects_steps() {
        let m = TabularMomdp::bandit(vec![vec![1.0, 0.0]], 0.5).unwrap();
        let mut env = TabularEnv::new(m, 2, 0);
        assert!(env.step(0).is_err());
        env.reset();
        env.step(0).unwrap();
        assert!(env.step(0).unwrap().done);
        assert!(env.step(0).is_err());
    }

    #[test]
    fn single_action_value_is_geometric() {
        let m = TabularMomdp::bandit(vec![vec![2.0, -1.0]], 0.75).unwrap();
        let ret = m.policy_return(&[0]).unwrap();
        assert!((ret[0] - 8.0).abs() < 1e-12 && (ret[1] + 4.0).abs() < 1e-12);
    }

    #[test]
    fn rollouts_converge_to_policy_evaluation() {
        let m = make_random_tabular_momdp(9, 3, 2, 3, 0.9).unwrap();
        let policy = [1, 0, 1];
        let exact = m.policy_return(&policy).unwrap();
        let horizon = truncation_horizon(m.gamma(), 1e-6);
        let mut env = TabularEnv::new(m.clone(), horizon, 17);
        let episodes = 4000;
        let mut mean = [0.0; 3];
        for _ in 0..episodes {
            env.reset();
            let mut rewards = Vec::with_capacity(horizon);
            loop {
                let s = env.state_id();
                let step = env.step(policy[s]).unwrap();
                rewards.push(step.reward);
                if step.done {
                    break;
                }
            }
            let g = discounted_return(rewards.iter().map(Vec::as_slice), m.gamma(), 3).unwrap();
            for (acc, x) in mean.iter_mut().zip(g) {
                *acc += x / episodes as f64;
            }
        }
        // Monte-Carlo mean of returns; sampling noise dominates the truncation error here.
        for (a, b) in mean.iter().zip(&exact) {
            assert!((a - b).abs() < 0.05, "{a} vs {b}");
        }
    }
}
