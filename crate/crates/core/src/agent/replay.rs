use rand::Rng;

use crate::error::{ensure_len, usage, Result};

/// One stored transition. The reward is always the environment's original
/// K-dimensional vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub observation: Vec<f64>,
    pub action: usize,
    pub reward: Vec<f64>,
    pub next_observation: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer sampled uniformly with replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    reward_dim: usize,
    items: Vec<Experience>,
    next: usize,
}

impl ReplayBuffer {
    /// `reward_dim` is the environment's objective count; pushes with any
    /// other reward length are rejected.
    pub fn new(capacity: usize, reward_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(usage("replay capacity must be positive"));
        }
        Ok(Self { capacity, reward_dim, items: Vec::new(), next: 0 })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn reward_dim(&self) -> usize {
        self.reward_dim
    }

    pub fn push(&mut self, e: Experience) -> Result<()> {
        ensure_len("stored reward", e.reward.len(), self.reward_dim)?;
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<&Experience> {
        self.items.get(i)
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(usage("sampling from an empty replay buffer"));
        }
        Ok((0..n).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&Experience>> {
        Ok(self.sample_indices(n, rng)?.into_iter().map(|i| &self.items[i]).collect())
    }
}
