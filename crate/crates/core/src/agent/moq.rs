use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, usage, Error, Result};
use crate::nn::{Adam, Mlp};

use super::Experience;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentParams {
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub buffer_size: usize,
    /// Steps collected before the first gradient update.
    pub learning_starts: usize,
    /// Steps between target-network syncs.
    pub target_sync: usize,
    /// Steps between gradient updates.
    pub train_freq: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the run over which epsilon decays linearly.
    pub epsilon_fraction: f64,
    /// Fraction of the run over which the auxiliary-loss weight grows 0 -> 1.
    pub lambda_fraction: f64,
    /// Positive factor applied to replayed rewards before bootstrapping. It
    /// rescales Q without changing any greedy choice.
    pub reward_scale: f64,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr: 3e-4,
            batch_size: 32,
            hidden: vec![256, 256],
            buffer_size: 52_000,
            learning_starts: 200,
            target_sync: 500,
            train_freq: 1,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_fraction: 0.1,
            lambda_fraction: 0.75,
            reward_scale: 1.0,
        }
    }
}

fn linear_schedule(start: f64, end: f64, fraction: f64, step: usize, total: usize) -> f64 {
    let horizon = fraction * total as f64;
    if horizon <= 0.0 {
        return end;
    }
    let progress = (step as f64 / horizon).min(1.0);
    start + (end - start) * progress
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// A minibatch ready for the envelope update: observations, actions, reduced
/// rewards, next observations, terminal flags and one preference per row.
#[derive(Debug, Clone)]
pub struct EnvelopeBatch {
    pub observations: DMatrix<f64>,
    pub actions: Vec<usize>,
    pub rewards: DMatrix<f64>,
    pub next_observations: DMatrix<f64>,
    pub terminal: Vec<bool>,
    pub preferences: DMatrix<f64>,
}

impl EnvelopeBatch {
    /// Assembles a batch from replayed experiences whose rewards have already
    /// been reduced (`rewards` has one row per experience).
    pub fn from_experiences(items: &[&Experience], rewards: DMatrix<f64>, preferences: DMatrix<f64>) -> Self {
        let rows = |f: &dyn Fn(&Experience) -> &[f64]| {
            let cols = f(items[0]).len();
            DMatrix::from_fn(items.len(), cols, |i, j| f(items[i])[j])
        };
        Self {
            observations: rows(&|e| &e.observation),
            actions: items.iter().map(|e| e.action).collect(),
            rewards,
            next_observations: rows(&|e| &e.next_observation),
            terminal: items.iter().map(|e| e.terminal).collect(),
            preferences,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Per-batch diagnostics of an envelope update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeLoss {
    pub total: f64,
    pub main: f64,
    pub aux: f64,
}

/// Preference-conditioned multi-objective Q-network with a target copy.
/// Input is `observation ++ omega`; output holds one `d`-vector per action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoqAgent {
    online: Mlp,
    target: Mlp,
    adam: Adam,
    params: AgentParams,
    observation_dim: usize,
    num_actions: usize,
    reward_dim: usize,
    updates: u64,
}

impl MoqAgent {
    pub fn new<R: Rng + ?Sized>(
        observation_dim: usize,
        num_actions: usize,
        reward_dim: usize,
        params: AgentParams,
        rng: &mut R,
    ) -> Result<Self> {
        if reward_dim == 0 || num_actions == 0 {
            return Err(usage("agent needs at least one action and one reward dimension"));
        }
        if !(params.reward_scale > 0.0 && params.reward_scale.is_finite()) {
            return Err(usage(format!("reward scale {} must be positive and finite", params.reward_scale)));
        }
        let mut widths = vec![observation_dim + reward_dim];
        widths.extend(&params.hidden);
        widths.push(num_actions * reward_dim);
        let online = Mlp::new(&widths, 0.0, rng)?;
        Ok(Self {
            target: online.clone(),
            online,
            adam: Adam::new(params.lr),
            params,
            observation_dim,
            num_actions,
            reward_dim,
            updates: 0,
        })
    }

    pub fn params(&self) -> &AgentParams {
        &self.params
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn reward_dim(&self) -> usize {
        self.reward_dim
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn online(&self) -> &Mlp {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut Mlp {
        &mut self.online
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    pub fn epsilon(&self, step: usize, total: usize) -> f64 {
        let p = &self.params;
        linear_schedule(p.epsilon_start, p.epsilon_end, p.epsilon_fraction, step, total)
    }

    pub fn lambda(&self, step: usize, total: usize) -> f64 {
        linear_schedule(0.0, 1.0, self.params.lambda_fraction, step, total)
    }

    fn input(&self, observation: &[f64], omega: &[f64]) -> Result<Vec<f64>> {
        ensure_len("observation", observation.len(), self.observation_dim)?;
        ensure_len("preference", omega.len(), self.reward_dim)?;
        Ok(observation.iter().chain(omega).copied().collect())
    }

    /// Q-vectors of every action, `[a][k]`.
    pub fn q_values(&self, observation: &[f64], omega: &[f64]) -> Result<Vec<Vec<f64>>> {
        let out = self.online.forward_one(&self.input(observation, omega)?)?;
        Ok(out.chunks(self.reward_dim).map(<[f64]>::to_vec).collect())
    }

    /// Action maximizing `omega^T Q(s, a, omega)`, lowest index on ties.
    pub fn greedy_action(&self, observation: &[f64], omega: &[f64]) -> Result<usize> {
        let scores: Vec<f64> = self
            .q_values(observation, omega)?
            .iter()
            .map(|q| q.iter().zip(omega).map(|(x, w)| x * w).sum())
            .collect();
        Ok(argmax(&scores))
    }

    /// Epsilon-greedy action. One uniform draw decides exploration; a second
    /// picks the random action when exploring.
    pub fn act<R: Rng + ?Sized>(&self, observation: &[f64], omega: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
        if rng.random::<f64>() < epsilon {
            return Ok(rng.random_range(0..self.num_actions));
        }
        self.greedy_action(observation, omega)
    }

    fn check_batch(&self, batch: &EnvelopeBatch) -> Result<()> {
        let n = batch.len();
        if n == 0 {
            return Err(usage("empty envelope batch"));
        }
        ensure_len("batch observation width", batch.observations.ncols(), self.observation_dim)?;
        ensure_len("batch next-observation width", batch.next_observations.ncols(), self.observation_dim)?;
        ensure_len("batch reward width", batch.rewards.ncols(), self.reward_dim)?;
        ensure_len("batch preference width", batch.preferences.ncols(), self.reward_dim)?;
        for rows in [batch.observations.nrows(), batch.rewards.nrows(), batch.next_observations.nrows()] {
            ensure_len("batch rows", rows, n)?;
        }
        ensure_len("batch preferences", batch.preferences.nrows(), n)?;
        ensure_len("batch terminal flags", batch.terminal.len(), n)?;
        if batch.actions.iter().any(|&a| a >= self.num_actions) {
            return Err(usage("batch action out of range"));
        }
        Ok(())
    }

    /// Envelope targets `y_i = r_i + gamma Q_target(s'_i, a*, w'*)` with
    /// `(a*, w'*) = argmax_{a, j} w_i^T Q_target(s'_i, a, w_j)` over the batch's
    /// preferences (ties to the lowest action, then lowest preference index).
    /// Terminal rows keep only `r_i`.
    pub fn envelope_targets(&self, batch: &EnvelopeBatch) -> Result<DMatrix<f64>> {
        self.check_batch(batch)?;
        let (n, d) = (batch.len(), self.reward_dim);
        let q_next = self.target.forward_pairs(&batch.next_observations, &batch.preferences)?;
        let mut targets = &batch.rewards * self.params.reward_scale;
        for i in 0..n {
            if batch.terminal[i] {
                continue;
            }
            let w = batch.preferences.row(i);
            let mut best = (f64::NEG_INFINITY, 0, 0);
            for a in 0..self.num_actions {
                for j in 0..n {
                    let row = i * n + j;
                    let score: f64 = (0..d).map(|k| w[k] * q_next[(row, a * d + k)]).sum();
                    if score > best.0 {
                        best = (score, a, j);
                    }
                }
            }
            let (_, a, j) = best;
            for k in 0..d {
                targets[(i, k)] += self.params.gamma * q_next[(i * n + j, a * d + k)];
            }
        }
        Ok(targets)
    }

    fn inputs(&self, batch: &EnvelopeBatch) -> DMatrix<f64> {
        let (n, o, d) = (batch.len(), self.observation_dim, self.reward_dim);
        DMatrix::from_fn(n, o + d, |i, j| {
            if j < o {
                batch.observations[(i, j)]
            } else {
                batch.preferences[(i, j - o)]
            }
        })
    }

    /// Loss `(1 - lambda) mean ||y - q||^2 + lambda mean |w^T y - w^T q|` for
    /// fixed targets, with its gradient with respect to the network output.
    fn loss_and_upstream(
        &self,
        batch: &EnvelopeBatch,
        out: &DMatrix<f64>,
        targets: &DMatrix<f64>,
        lambda: f64,
    ) -> (EnvelopeLoss, DMatrix<f64>) {
        let (n, d) = (batch.len(), self.reward_dim);
        let nf = n as f64;
        let mut upstream = DMatrix::zeros(n, out.ncols());
        let (mut main, mut aux) = (0.0, 0.0);
        for i in 0..n {
            let a = batch.actions[i];
            let mut gap = 0.0;
            for k in 0..d {
                let diff = out[(i, a * d + k)] - targets[(i, k)];
                main += diff * diff;
                gap += batch.preferences[(i, k)] * diff;
            }
            aux += gap.abs();
            let sign = if gap > 0.0 {
                1.0
            } else if gap < 0.0 {
                -1.0
            } else {
                0.0
            };
            for k in 0..d {
                let diff = out[(i, a * d + k)] - targets[(i, k)];
                upstream[(i, a * d + k)] =
                    (1.0 - lambda) * 2.0 * diff / nf + lambda * sign * batch.preferences[(i, k)] / nf;
            }
        }
        let (main, aux) = (main / nf, aux / nf);
        (EnvelopeLoss { total: (1.0 - lambda) * main + lambda * aux, main, aux }, upstream)
    }

    /// Loss and parameter gradients for fixed targets, without stepping.
    pub fn envelope_loss_and_gradients(
        &self,
        batch: &EnvelopeBatch,
        targets: &DMatrix<f64>,
        lambda: f64,
    ) -> Result<(EnvelopeLoss, crate::nn::MlpGrads)> {
        self.check_batch(batch)?;
        let (out, cache) = self.online.forward_train::<rand_chacha::ChaCha8Rng>(&self.inputs(batch), None)?;
        let (loss, upstream) = self.loss_and_upstream(batch, &out, targets, lambda);
        Ok((loss, self.online.backward(&cache, &upstream)?))
    }

    /// One envelope Q-learning step. Non-finite targets or losses skip the
    /// step and are reported as numeric errors.
    pub fn envelope_update(&mut self, batch: &EnvelopeBatch, lambda: f64) -> Result<EnvelopeLoss> {
        let targets = self.envelope_targets(batch)?;
        if targets.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite envelope target".into()));
        }
        let (loss, grads) = self.envelope_loss_and_gradients(batch, &targets, lambda)?;
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!("envelope loss is {}", loss.total)));
        }
        self.online.apply_gradients(&grads, &mut self.adam)?;
        self.updates += 1;
        Ok(loss)
    }
}
