use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::agent::{sample_preference, AgentParams, EnvelopeBatch, MoqAgent};
use crate::error::Result;
use crate::metrics::hypervolume;
use crate::momdp::{NUM_LANES, NUM_PHASES};

use super::train::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchEntry {
    pub name: String,
    pub iterations: usize,
    pub mean_ms: f64,
}

fn time_it(name: String, iterations: usize, mut f: impl FnMut() -> Result<()>) -> Result<BenchEntry> {
    f()?;
    let start = Instant::now();
    for _ in 0..iterations {
        f()?;
    }
    let mean_ms = start.elapsed().as_secs_f64() * 1e3 / iterations as f64;
    Ok(BenchEntry { name, iterations, mean_ms })
}

/// Wall time of one envelope update on traffic-shaped data (20-dim
/// observations, 4 actions, 16 objectives, batch 32) for each hidden width.
pub fn bench_agent_update(widths: &[usize], iterations: usize, seed: u64) -> Result<Vec<BenchEntry>> {
    let mut rng = stream_rng(seed, Stream::Init);
    let (obs, n, d) = (NUM_PHASES + NUM_LANES, 32, NUM_LANES);
    let mut out = Vec::new();
    for &w in widths {
        let params = AgentParams { hidden: vec![w, w], ..AgentParams::default() };
        let mut agent = MoqAgent::new(obs, NUM_PHASES, d, params, &mut rng)?;
        let mut random = |r: usize, c: usize, lo: f64, hi: f64| DMatrix::from_fn(r, c, |_, _| rng.random_range(lo..hi));
        let observations = random(n, obs, 0.0, 1.0);
        let next_observations = random(n, obs, 0.0, 1.0);
        let rewards = random(n, d, -1.0, 0.0);
        let prefs: Vec<Vec<f64>> = (0..n).map(|_| sample_preference(d, &mut rng)).collect::<Result<_>>()?;
        let batch = EnvelopeBatch {
            observations,
            actions: (0..n).map(|i| i % NUM_PHASES).collect(),
            rewards,
            next_observations,
            terminal: vec![false; n],
            preferences: crate::nn::batch_from_rows(&prefs),
        };
        out.push(time_it(format!("envelope_update_hidden_{w}"), iterations, || {
            agent.envelope_update(&batch, 0.5).map(|_| ())
        })?);
    }
    Ok(out)
}

/// Wall time of an exact hypervolume over `points` random 16-objective
/// vectors on a hyperplane. No point dominates another, which is the slow
/// case for the exclusive-volume recursion.
pub fn bench_hypervolume(points: usize, iterations: usize, seed: u64) -> Result<BenchEntry> {
    let mut rng = stream_rng(seed, Stream::Evaluation);
    let set: Vec<Vec<f64>> = (0..points)
        .map(|_| {
            let w = sample_preference(NUM_LANES, &mut rng)?;
            Ok(w.iter().map(|x| -1e4 * (1.0 - x)).collect())
        })
        .collect::<Result<_>>()?;
    let reference = vec![-1e4; NUM_LANES];
    time_it(format!("hypervolume_{points}x{NUM_LANES}"), iterations, || hypervolume(&set, &reference).map(|_| ()))
}
