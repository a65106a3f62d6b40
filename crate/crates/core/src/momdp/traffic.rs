use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, usage, Result};

use super::{Environment, Step};

pub const NUM_LANES: usize = 16;
pub const NUM_PHASES: usize = 4;
const LANES_PER_PHASE: usize = NUM_LANES / NUM_PHASES;
const QUEUE_OBS_SCALE: f64 = 0.1;

/// Parameters of the synthetic four-phase intersection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    /// Mean Poisson arrivals per step for each inbound lane.
    pub arrival_rates: Vec<f64>,
    /// Vehicles cleared per served lane per step.
    pub service_rate: f64,
    pub episode_length: usize,
    /// Share of the service capacity lost to the yellow interval on a phase change.
    pub yellow_fraction: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            // phase 0: north-south through, 1: north-south left,
            // 2: east-west through, 3: east-west left
            arrival_rates: vec![
                1.125, 0.875, 1.0, 0.75, //
                0.375, 0.25, 0.3125, 0.4375, //
                0.75, 0.625, 0.875, 0.5, //
                0.25, 0.375, 0.1875, 0.3125,
            ],
            service_rate: 3.0,
            episode_length: 200,
            yellow_fraction: 0.1,
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_len("arrival_rates", self.arrival_rates.len(), NUM_LANES)?;
        if self.arrival_rates.iter().any(|&r| !r.is_finite() || r < 0.0) {
            return Err(usage("arrival rates must be finite and nonnegative"));
        }
        if self.service_rate.is_nan() || self.service_rate <= 0.0 {
            return Err(usage("service rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.yellow_fraction) {
            return Err(usage("yellow fraction must lie in [0, 1)"));
        }
        if self.episode_length == 0 {
            return Err(usage("episode length must be positive"));
        }
        Ok(())
    }
}

/// Queueing abstraction of a signalised intersection with sixteen inbound
/// lanes. Each phase serves a disjoint group of four lanes. Every queued
/// vehicle waits one step per step, so the reward for lane `k` is minus its
/// queue length: the waiting time the lane accrued during the step.
///
/// Observation: phase one-hot, then scaled queue lengths (20 values).
#[derive(Debug, Clone)]
pub struct TrafficQueueEnv {
    config: TrafficConfig,
    arrivals: Vec<Option<Poisson<f64>>>,
    rng: ChaCha8Rng,
    phase: usize,
    queues: Vec<f64>,
    t: usize,
    done: bool,
}

impl TrafficQueueEnv {
    pub fn new(config: TrafficConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let arrivals = config
            .arrival_rates
            .iter()
            .map(|&rate| if rate > 0.0 { Poisson::new(rate).ok() } else { None })
            .collect();
        Ok(Self {
            config,
            arrivals,
            rng: ChaCha8Rng::seed_from_u64(seed),
            phase: 0,
            queues: vec![0.0; NUM_LANES],
            t: 0,
            done: true,
        })
    }

    pub fn config(&self) -> &TrafficConfig {
        &self.config
    }

    pub fn queues(&self) -> &[f64] {
        &self.queues
    }

    pub fn phase_of_lane(lane: usize) -> usize {
        lane / LANES_PER_PHASE
    }

    fn observe(&self) -> Vec<f64> {
        let mut obs = vec![0.0; NUM_PHASES];
        obs[self.phase] = 1.0;
        obs.extend(self.queues.iter().map(|q| q * QUEUE_OBS_SCALE));
        obs
    }
}

impl Environment for TrafficQueueEnv {
    fn num_objectives(&self) -> usize {
        NUM_LANES
    }

    fn num_actions(&self) -> usize {
        NUM_PHASES
    }

    fn observation_dim(&self) -> usize {
        NUM_PHASES + NUM_LANES
    }

    fn state_id(&self) -> usize {
        self.phase
    }

    fn reset(&mut self) -> Vec<f64> {
        self.phase = 0;
        self.queues.iter_mut().for_each(|q| *q = 0.0);
        self.t = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        if self.done {
            return Err(usage("step on a finished episode; call reset first"));
        }
        if action >= NUM_PHASES {
            return Err(usage(format!("phase {action} out of range")));
        }
        let capacity = if action == self.phase {
            self.config.service_rate
        } else {
            self.config.service_rate * (1.0 - self.config.yellow_fraction)
        };
        self.phase = action;
        for q in &mut self.queues[action * LANES_PER_PHASE..(action + 1) * LANES_PER_PHASE] {
            *q = (*q - capacity).max(0.0);
        }
        for (q, dist) in self.queues.iter_mut().zip(&self.arrivals) {
            if let Some(dist) = dist {
                *q += dist.sample(&mut self.rng);
            }
        }
        self.t += 1;
        self.done = self.t >= self.config.episode_length;
        Ok(Step {
            observation: self.observe(),
            reward: self.queues.iter().map(|q| -q).collect(),
            terminal: false,
            done: self.done,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rollout(seed: u64, actions: &[usize]) -> Vec<Vec<f64>> {
        let mut env = TrafficQueueEnv::new(TrafficConfig::default(), seed).unwrap();
        env.reset();
        actions.iter().map(|&a| env.step(a).unwrap().reward).collect()
    }

    #[test]
    fn reset_starts_from_empty_queues() {
        let mut env = TrafficQueueEnv::new(TrafficConfig::default(), 7).unwrap();
        let obs = env.reset();
        assert_eq!(obs.len(), 20);
        assert_eq!(&obs[..4], &[1.0, 0.0, 0.0, 0.0]);
        assert!(obs[4..].iter().all(|&x| x == 0.0));
        assert!(env.queues().iter().all(|&q| q == 0.0));
        let mut other = TrafficQueueEnv::new(TrafficConfig::default(), 7).unwrap();
        assert_eq!(other.reset(), obs);
    }

    #[test]
    fn no_arrivals_means_zero_reward() {
        let config = TrafficConfig { arrival_rates: vec![0.0; NUM_LANES], ..Default::default() };
        let mut env = TrafficQueueEnv::new(config, 1).unwrap();
        env.reset();
        for t in 0..200 {
            let step = env.step(t % 4).unwrap();
            assert!(step.reward.iter().all(|&r| r == 0.0));
        }
    }

    #[test]
    fn rewards_are_nonpositive_and_seeded() {
        let actions: Vec<usize> = (0..200).map(|t| (t * 7 + t / 3) % 4).collect();
        let a = rollout(42, &actions);
        let b = rollout(42, &actions);
        assert_eq!(a, b);
        assert!(a.iter().flatten().all(|&r| r <= 0.0));
        assert_ne!(a, rollout(43, &actions));
    }

    #[test]
    fn usage_errors() {
        let mut env = TrafficQueueEnv::new(TrafficConfig::default(), 0).unwrap();
        assert!(env.step(0).is_err());
        env.reset();
        assert!(env.step(4).is_err());
        let bad = TrafficConfig { arrival_rates: vec![1.0; 3], ..Default::default() };
        assert!(TrafficQueueEnv::new(bad, 0).is_err());
    }

    #[test]
    fn episode_ends_after_configured_length() {
        let config = TrafficConfig { episode_length: 5, ..Default::default() };
        let mut env = TrafficQueueEnv::new(config, 0).unwrap();
        env.reset();
        for t in 0..5 {
            assert_eq!(env.step(0).unwrap().done, t == 4);
        }
        assert!(env.step(0).is_err());
    }

    fn discounted(rewards: &[Vec<f64>]) -> Vec<f64> {
        crate::momdp::discounted_return(rewards.iter().map(Vec::as_slice), 0.99, NUM_LANES).unwrap()
    }

    #[test]
    fn starving_a_phase_costs_its_lanes() {
        let round_robin: Vec<usize> = (0..200).map(|t| t % 4).collect();
        let starved: Vec<usize> = (0..200).map(|t| t % 3).collect();
        let fair = discounted(&rollout(3, &round_robin));
        let unfair = discounted(&rollout(3, &starved));
        for lane in 12..16 {
            assert!(unfair[lane] < fair[lane] - 500.0, "{unfair:?} vs {fair:?}");
        }
        assert!(unfair[..4].iter().zip(&fair).all(|(u, f)| u >= f));
    }

    #[test]
    fn longest_queue_first_keeps_every_lane_above_the_reference() {
        let mut env = TrafficQueueEnv::new(TrafficConfig::default(), 3).unwrap();
        env.reset();
        let mut rewards = Vec::new();
        for _ in 0..200 {
            let q = env.queues();
            let phase = (0..NUM_PHASES)
                .max_by(|&a, &b| {
                    let load = |p: usize| q[4 * p..4 * p + 4].iter().sum::<f64>();
                    load(a).total_cmp(&load(b))
                })
                .unwrap();
            rewards.push(env.step(phase).unwrap().reward);
        }
        let ret = discounted(&rewards);
        assert!(ret.iter().all(|&g| g > -1e4), "{ret:?}");
    }

    #[test]
    fn served_lanes_drain_by_the_service_rate() {
        let config = TrafficConfig { arrival_rates: vec![0.0; NUM_LANES], ..Default::default() };
        let mut env = TrafficQueueEnv::new(config, 0).unwrap();
        env.reset();
        env.queues = vec![5.0; NUM_LANES];
        let step = env.step(0).unwrap();
        assert_eq!(&step.reward[..4], &[-2.0; 4]);
        assert!(step.reward[4..].iter().all(|&r| r == -5.0));
        // switching phase loses the yellow share of the capacity
        let step = env.step(1).unwrap();
        assert!(step.reward[4..8].iter().all(|&r| (r + 2.3).abs() < 1e-12));
    }
}
