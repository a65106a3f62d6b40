use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::agent::{sample_preference, EnvelopeBatch, Experience, MoqAgent, ReplayBuffer};
use crate::error::{Error, Result};
use crate::nn::batch_from_rows;
use crate::reduction::Reducer;

/// Independent random streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Environment = 2,
    Agent = 3,
    Reducer = 4,
    Evaluation = 5,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    /// Global step at which the episode ended.
    pub step: usize,
    pub epsilon: f64,
    pub lambda: f64,
    /// Mean envelope loss over the episode's updates (NaN-free: 0 when none ran).
    pub mean_loss: f64,
    pub updates: usize,
    /// Undiscounted scalarized return under the episode's reduced preference.
    pub scalarized_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducerLog {
    pub step: usize,
    pub loss: Option<f64>,
    /// Largest `|row sum - 1|` of the realized matrix, when it has one.
    pub max_row_sum_error: Option<f64>,
    pub min_entry: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub episodes: Vec<EpisodeLog>,
    pub reducer_updates: Vec<ReducerLog>,
    /// Updates skipped because a loss or target was non-finite.
    pub skipped_updates: usize,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub agent: MoqAgent,
    pub reducer: Reducer,
    pub log: TrainingLog,
}

fn reward_matrix(items: &[&Experience]) -> DMatrix<f64> {
    let rows: Vec<&[f64]> = items.iter().map(|e| e.reward.as_slice()).collect();
    batch_from_rows(&rows)
}

/// Interleaved loop: epsilon-greedy acting under one preference per episode,
/// replay of original rewards, reducer updates on their own cadence and
/// envelope updates on replayed, freshly reduced rewards.
pub fn run_training(config: &ExperimentConfig, seed: u64) -> Result<TrainingRun> {
    config.validate()?;
    let k = config.num_objectives()?;
    let m = config.reduced_dim()?;
    let total = config.train.total_steps;
    let params = &config.agent;

    let mut init_rng = stream_rng(seed, Stream::Init);
    let mut agent_rng = stream_rng(seed, Stream::Agent);
    let mut reducer_rng = stream_rng(seed, Stream::Reducer);
    let env_seed: u64 = stream_rng(seed, Stream::Environment).random();

    let mut env = config.env.build(env_seed)?;
    let mut agent = MoqAgent::new(env.observation_dim(), env.num_actions(), m, params.clone(), &mut init_rng)?;
    let mut reducer = Reducer::new(config.reducer.kind, k, m, &config.reducer.params(), config.ablation()?, &mut init_rng)?;
    let mut buffer = ReplayBuffer::new(params.buffer_size, k)?;
    let mut log = TrainingLog::default();

    let mut obs = env.reset();
    let mut omega = sample_preference(m, &mut agent_rng)?;
    let (mut ep_loss, mut ep_updates, mut ep_return) = (0.0, 0usize, 0.0);

    for step in 0..total {
        let t = step + 1;
        let epsilon = agent.epsilon(step, total);
        let action = agent.act(&obs, &omega, epsilon, &mut agent_rng)?;
        let outcome = env.step(action)?;
        reducer.observe(&outcome.reward)?;
        if reducer.ready() {
            let reduced = reducer.transform(&outcome.reward)?;
            ep_return += reduced.iter().zip(&omega).map(|(r, w)| r * w).sum::<f64>();
        }
        buffer.push(Experience {
            observation: obs,
            action,
            reward: outcome.reward,
            next_observation: outcome.observation.clone(),
            terminal: outcome.terminal,
        })?;

        if let Some(interval) = reducer.update_interval() {
            if t % interval == 0 {
                let batch = match reducer.batch_size() {
                    Some(n) => Some(reward_matrix(&buffer.sample(n, &mut reducer_rng)?)),
                    None => None,
                };
                let loss = match reducer.update(batch.as_ref(), &mut reducer_rng) {
                    Ok(loss) => loss,
                    Err(Error::Numeric(msg)) => {
                        log::warn!("step {t}: reducer update skipped: {msg}");
                        log.skipped_updates += 1;
                        None
                    }
                    Err(e) => return Err(e),
                };
                log.reducer_updates.push(reducer_telemetry(&reducer, t, loss));
            }
        }

        if t > params.learning_starts && t % params.train_freq == 0 && reducer.ready() {
            let items = buffer.sample(params.batch_size, &mut agent_rng)?;
            let rewards = reducer.transform_batch(&reward_matrix(&items))?;
            let prefs: Vec<Vec<f64>> =
                (0..items.len()).map(|_| sample_preference(m, &mut agent_rng)).collect::<Result<_>>()?;
            let batch = EnvelopeBatch::from_experiences(&items, rewards, batch_from_rows(&prefs));
            match agent.envelope_update(&batch, agent.lambda(step, total)) {
                Ok(loss) => {
                    ep_loss += loss.total;
                    ep_updates += 1;
                }
                Err(Error::Numeric(msg)) => {
                    log::warn!("step {t}: agent update skipped: {msg}");
                    log.skipped_updates += 1;
                }
                Err(e) => return Err(e),
            }
        }
        if t % params.target_sync == 0 {
            agent.sync_target();
        }

        if outcome.done {
            log.episodes.push(EpisodeLog {
                episode: log.episodes.len(),
                step: t,
                epsilon,
                lambda: agent.lambda(step, total),
                mean_loss: if ep_updates > 0 { ep_loss / ep_updates as f64 } else { 0.0 },
                updates: ep_updates,
                scalarized_return: ep_return,
            });
            (ep_loss, ep_updates, ep_return) = (0.0, 0, 0.0);
            obs = env.reset();
            omega = sample_preference(m, &mut agent_rng)?;
        } else {
            obs = outcome.observation;
        }
    }
    Ok(TrainingRun { agent, reducer, log })
}

fn reducer_telemetry(reducer: &Reducer, step: usize, loss: Option<f64>) -> ReducerLog {
    let (max_row_sum_error, min_entry) = match reducer {
        Reducer::Ours(x) => {
            let a = x.realized();
            let err = a.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max);
            (Some(err), Some(a.min()))
        }
        _ => (None, None),
    };
    ReducerLog { step, loss, max_row_sum_error, min_entry }
}
