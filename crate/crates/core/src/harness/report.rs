use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::evaluate::{EvalPoint, Score};
use super::train::TrainingLog;
use crate::error::{usage, Result};
use crate::metrics::io::{read_points_csv, write_front_csv, write_points_csv, TaggedPoint};
use crate::metrics::ParetoSet;

pub const SCHEMA_VERSION: u32 = 1;

/// Everything measured for one seed. Serialized as `metrics.json`; contains
/// no wall-clock data so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub method: String,
    pub seed: u64,
    pub reducer: String,
    pub ablation: String,
    pub m: usize,
    pub reference_point: Vec<f64>,
    pub hypervolume: f64,
    pub sparsity: f64,
    pub eum: f64,
    pub points: Vec<EvalPoint>,
    pub front: ParetoSet,
    pub training: TrainingSummary,
}

/// Compact digest of the training log carried in the report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub episodes: usize,
    pub skipped_updates: usize,
    pub reducer_updates: usize,
    /// Largest row-sum error of the realized matrix across all logged steps.
    pub max_row_sum_error: Option<f64>,
    /// Smallest realized matrix entry across all logged steps.
    pub min_matrix_entry: Option<f64>,
}

impl TrainingSummary {
    pub fn from_log(log: &TrainingLog) -> Self {
        let errors: Vec<f64> = log.reducer_updates.iter().filter_map(|r| r.max_row_sum_error).collect();
        let mins: Vec<f64> = log.reducer_updates.iter().filter_map(|r| r.min_entry).collect();
        Self {
            episodes: log.episodes.len(),
            skipped_updates: log.skipped_updates,
            reducer_updates: log.reducer_updates.len(),
            max_row_sum_error: (!errors.is_empty()).then(|| errors.iter().copied().fold(0.0, f64::max)),
            min_matrix_entry: (!mins.is_empty()).then(|| mins.iter().copied().fold(f64::INFINITY, f64::min)),
        }
    }
}

impl SeedReport {
    pub fn score(&self) -> Score {
        Score { front: self.front.clone(), hypervolume: self.hypervolume, sparsity: self.sparsity, eum: self.eum }
    }
}

/// Mean and sample standard deviation over the kept seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 { values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub hypervolume: f64,
    pub sparsity: f64,
    pub eum: f64,
}

/// Trimmed aggregate across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub method: String,
    pub config_hashes: Vec<String>,
    pub seeds: Vec<SeedMetrics>,
    pub dropped_max_seed: u64,
    pub dropped_min_seed: u64,
    pub hypervolume: Stat,
    pub sparsity: Stat,
    pub eum: Stat,
}

/// Drops the seed with the largest and the seed with the smallest hypervolume
/// (first in seed order on ties; always two distinct seeds), then reports the
/// mean and sample standard deviation of each metric over the rest.
pub fn aggregate_seeds(reports: &[SeedReport]) -> Result<Summary> {
    if reports.len() < 3 {
        return Err(usage(format!("aggregation needs at least 3 seed reports, got {}", reports.len())));
    }
    let hv: Vec<f64> = reports.iter().map(|r| r.hypervolume).collect();
    let mut imax = 0;
    for (i, v) in hv.iter().enumerate() {
        if *v > hv[imax] {
            imax = i;
        }
    }
    let mut imin = if imax == 0 { 1 } else { 0 };
    for (i, v) in hv.iter().enumerate() {
        if i != imax && *v < hv[imin] {
            imin = i;
        }
    }
    let kept: Vec<&SeedReport> = reports.iter().enumerate().filter(|(i, _)| *i != imax && *i != imin).map(|(_, r)| r).collect();
    let stat = |f: fn(&SeedReport) -> f64| Stat::of(&kept.iter().map(|r| f(r)).collect::<Vec<_>>());
    let mut hashes: Vec<String> = reports.iter().map(|r| r.config_hash.clone()).collect();
    hashes.dedup();
    Ok(Summary {
        schema_version: SCHEMA_VERSION,
        method: reports[0].method.clone(),
        config_hashes: hashes,
        seeds: reports
            .iter()
            .map(|r| SeedMetrics { seed: r.seed, hypervolume: r.hypervolume, sparsity: r.sparsity, eum: r.eum })
            .collect(),
        dropped_max_seed: reports[imax].seed,
        dropped_min_seed: reports[imin].seed,
        hypervolume: stat(|r| r.hypervolume),
        sparsity: stat(|r| r.sparsity),
        eum: stat(|r| r.eum),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn tagged(points: &[EvalPoint]) -> Vec<TaggedPoint> {
    points.iter().map(|p| (p.value.clone(), Some(p.preference.clone()))).collect()
}

/// Writes `metrics.json`, `points.csv` (every evaluated preference) and
/// `front.csv` (the non-dominated subset) into `dir`.
pub fn emit_seed_report(report: &SeedReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("metrics.json"), report)?;
    write_points_csv(&dir.join("points.csv"), &tagged(&report.points))?;
    write_front_csv(&dir.join("front.csv"), &report.front)?;
    Ok(())
}

/// Reads evaluated points back from a `points.csv`.
pub fn load_points(path: &Path) -> Result<Vec<EvalPoint>> {
    read_points_csv(path)?
        .into_iter()
        .map(|(value, tag)| {
            let preference = tag.ok_or_else(|| usage("points csv has no preference columns"))?;
            Ok(EvalPoint { preference, value })
        })
        .collect()
}

/// Writes `summary.json`, one `front_seed<N>.csv` per seed and a plot-ready
/// `plot.csv` with rows `method,metric,mean,std`.
pub fn emit_report(summary: &Summary, reports: &[SeedReport], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("summary.json"), summary)?;
    for r in reports {
        write_front_csv(&dir.join(format!("front_seed{}.csv", r.seed)), &r.front)?;
    }
    append_plot_rows(&dir.join("plot.csv"), std::slice::from_ref(summary), false)
}

/// Writes (or appends to) a `method,metric,mean,std` table.
pub fn append_plot_rows(path: &Path, summaries: &[Summary], append: bool) -> Result<()> {
    let exists = append && path.exists();
    let file = fs::OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if !exists {
        w.write_record(["method", "metric", "mean", "std"])?;
    }
    for s in summaries {
        for (metric, stat) in [("hypervolume", s.hypervolume), ("sparsity", s.sparsity), ("eum", s.eum)] {
            w.write_record([s.method.as_str(), metric, &format!("{:?}", stat.mean), &format!("{:?}", stat.std)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Non-deterministic run facts kept apart from `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub wall_time_seconds: f64,
}

pub fn emit_run_meta(meta: &RunMeta, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("run_meta.json"), meta)
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, value)
}
