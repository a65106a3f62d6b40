//! Experiment pipeline: configuration, training, evaluation on the
//! equidistant preference lattice, scoring in the original reward space,
//! seed aggregation and report files.

mod bench;
mod config;
mod evaluate;
mod report;
mod train;

pub use bench::{bench_agent_update, bench_hypervolume, BenchEntry};
pub use config::{EnvConfig, EvalSection, ExperimentConfig, ReducerSection, TabularConfig, TrainSection};
pub use evaluate::{evaluate, score, EvalPoint, Score};
pub use report::{
    aggregate_seeds, append_plot_rows, emit_report, emit_run_meta, emit_seed_report, load_points, read_json,
    write_json_file, RunMeta, SeedMetrics, SeedReport, Stat, Summary, TrainingSummary, SCHEMA_VERSION,
};
pub use train::{run_training, stream_rng, EpisodeLog, ReducerLog, Stream, TrainingLog, TrainingRun};

use std::path::Path;
use std::time::Instant;

use crate::agent::MoqAgent;
use crate::error::Result;
use crate::reduction::{Reducer, ReducerKind};

/// Method label: the reducer name plus ablation flags in brackets, e.g.
/// `ours[-positivity]`.
pub fn method_name(config: &ExperimentConfig) -> Result<String> {
    let ablation = config.ablation()?;
    Ok(if ablation.is_none() || config.reducer.kind != ReducerKind::Ours {
        config.reducer.kind.to_string()
    } else {
        format!("{}[{}]", config.reducer.kind, ablation)
    })
}

/// Builds the seed report from evaluated points.
pub fn build_report(config: &ExperimentConfig, seed: u64, points: Vec<EvalPoint>, log: &TrainingLog) -> Result<SeedReport> {
    let reference = config.reference_point()?;
    let s = score(&points, &reference, config.eval.eum_divisions)?;
    Ok(SeedReport {
        schema_version: SCHEMA_VERSION,
        config_hash: config.hash()?,
        method: method_name(config)?,
        seed,
        reducer: config.reducer.kind.to_string(),
        ablation: config.ablation()?.to_string(),
        m: config.reduced_dim()?,
        reference_point: reference,
        hypervolume: s.hypervolume,
        sparsity: s.sparsity,
        eum: s.eum,
        points,
        front: s.front,
        training: TrainingSummary::from_log(log),
    })
}

/// Train, evaluate and score one seed.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<(SeedReport, TrainingRun)> {
    let run = run_training(config, seed)?;
    let points = evaluate(config, &run.agent, &run.reducer, seed)?;
    let report = build_report(config, seed, points, &run.log)?;
    Ok((report, run))
}

/// Writes the per-episode and per-reducer-update logs as CSV.
pub fn write_training_logs(log: &TrainingLog, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("train_log.csv"))?;
    for e in &log.episodes {
        w.serialize(e)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("reducer_log.csv"))?;
    w.write_record(["step", "loss", "max_row_sum_error", "min_entry"])?;
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:?}"));
    for r in &log.reducer_updates {
        w.write_record([r.step.to_string(), opt(r.loss), opt(r.max_row_sum_error), opt(r.min_entry)])?;
    }
    w.flush()?;
    Ok(())
}

/// Trains and scores one seed, writing every artifact into `dir`: the
/// resolved `config.toml`, `agent.json` and `reducer.json` checkpoints,
/// training logs, `metrics.json`, `points.csv`, `front.csv` and
/// `run_meta.json`.
pub fn train_to_dir(config: &ExperimentConfig, seed: u64, dir: &Path) -> Result<SeedReport> {
    let start = Instant::now();
    let (report, run) = run_seed(config, seed)?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), config.to_toml_string()?)?;
    write_json_file(&dir.join("agent.json"), &run.agent)?;
    write_json_file(&dir.join("reducer.json"), &run.reducer.checkpoint()?)?;
    write_training_logs(&run.log, dir)?;
    emit_seed_report(&report, dir)?;
    let meta = RunMeta {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: report.config_hash.clone(),
        seed,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    emit_run_meta(&meta, dir)?;
    Ok(report)
}

/// Loads the agent and reducer checkpoints written by [`train_to_dir`].
pub fn load_checkpoint(dir: &Path) -> Result<(MoqAgent, Reducer)> {
    let agent: MoqAgent = read_json(&dir.join("agent.json"))?;
    let reducer = Reducer::from_checkpoint(&read_json(&dir.join("reducer.json"))?)?;
    Ok((agent, reducer))
}
