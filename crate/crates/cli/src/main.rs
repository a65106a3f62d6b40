use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use morl_reduce::harness::{
    aggregate_seeds, bench_agent_update, bench_hypervolume, build_report, emit_report, emit_seed_report, evaluate,
    load_checkpoint, load_points, method_name, read_json, score, train_to_dir, write_json_file, ExperimentConfig,
    SeedReport, TrainingLog,
};
use morl_reduce::oracle::{run_theorem1_suite, MatrixFamily, OracleSuite};
use morl_reduce::reduction::{Ablation, ReducerKind};
use morl_reduce::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

/// Online reward dimension reduction for multi-objective reinforcement learning.
#[derive(Debug, Parser)]
#[command(name = "morl-reduce", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train, evaluate and score one or more seeds, writing checkpoints,
    /// logs and reports under `--out`.
    Train {
        #[command(flatten)]
        setup: Setup,
        #[command(flatten)]
        seeds: SeedArgs,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Re-evaluate a trained seed directory on the preference lattice.
    Evaluate {
        /// Seed directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        /// Overrides the config stored in the run directory.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for the evaluation rollouts; defaults to the trained seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to `<run>/eval`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a points CSV: Pareto filter, hypervolume, sparsity, EUM.
    Score {
        #[arg(long)]
        points: PathBuf,
        #[command(flatten)]
        setup: Setup,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trimmed-mean aggregate over seed reports.
    Aggregate {
        /// `metrics.json` files, seed directories, or method directories
        /// holding `seed_*` subdirectories.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Brute-force check of Pareto preservation under random reduction
    /// matrices on small tabular problems.
    OracleVerify {
        #[arg(long, value_enum, default_value_t = Family::Positive)]
        family: Family,
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time agent updates and a 16-objective hypervolume.
    Bench {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        iterations: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Family {
    Positive,
    SignMixed,
}

#[derive(Debug, Args)]
struct Setup {
    /// TOML experiment config. Without it the `--profile` preset is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset: traffic, traffic-desk or tabular.
    #[arg(long, default_value = "traffic-desk", conflicts_with = "config")]
    profile: String,
    /// none, ours, ipca, npca or ae.
    #[arg(long)]
    reducer: Option<ReducerKind>,
    /// Ablation flags for `ours`, e.g. `+bias,-dropout`.
    #[arg(long)]
    ablation: Option<Ablation>,
}

impl Setup {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::profile(&self.profile)?,
        };
        if self.reducer.is_some() || self.ablation.is_some() {
            let kind = self.reducer.unwrap_or(config.reducer.kind);
            if kind != ReducerKind::None && config.reducer.m.is_none() {
                config.reducer.m = Some(4);
            }
            let ablation = match self.ablation {
                Some(a) => a,
                None => config.ablation()?,
            };
            config = config.with_reducer(kind, ablation)?;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
struct SeedArgs {
    /// A single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Half-open seed range `A..B`.
    #[arg(long, value_parser = parse_range)]
    seeds: Option<(u64, u64)>,
}

impl SeedArgs {
    fn resolve(&self, config: &ExperimentConfig) -> Vec<u64> {
        match (self.seed, self.seeds) {
            (Some(s), _) => vec![s],
            (None, Some((a, b))) => (a..b).collect(),
            (None, None) => config.seeds.clone(),
        }
    }
}

fn parse_range(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected A..B, got `{s}`"))?;
    let a: u64 = a.trim().parse().map_err(|e| format!("bad range start: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("bad range end: {e}"))?;
    if b <= a {
        return Err(format!("empty seed range {a}..{b}"));
    }
    Ok((a, b))
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Usage(_) => "usage",
        Error::Numeric(_) => "numeric",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

fn print_json(value: &serde_json::Value) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Runs seeds as independent jobs on a small worker pool; results come back
/// in seed order.
fn train_seeds(config: &ExperimentConfig, seeds: &[u64], dir: &Path) -> Vec<(u64, Result<SeedReport, Error>)> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(seeds.len()).max(1);
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&seed) = seeds.get(i) else { break };
                log::info!("seed {seed}: training");
                let out = train_to_dir(config, seed, &dir.join(format!("seed_{seed}")));
                results.lock().expect("result lock").push((i, seed, out));
            });
        }
    });
    let mut results = results.into_inner().expect("result lock");
    results.sort_by_key(|r| r.0);
    results.into_iter().map(|(_, seed, r)| (seed, r)).collect()
}

fn train(setup: &Setup, seeds: &SeedArgs, out: &Path) -> Result<bool, Error> {
    let config = setup.load()?;
    let seeds = seeds.resolve(&config);
    if seeds.is_empty() {
        return Err(Error::Usage("no seeds to run".into()));
    }
    let dir = out.join(method_name(&config)?);
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (seed, result) in train_seeds(&config, &seeds, &dir) {
        match result {
            Ok(report) => reports.push(report),
            Err(e) => {
                let record = json!({"seed": seed, "kind": error_kind(&e), "message": e.to_string()});
                eprintln!("{}", serde_json::to_string(&json!({ "error": record }))?);
                failures.push(record);
            }
        }
    }
    let per_seed: Vec<_> = reports
        .iter()
        .map(|r| json!({"seed": r.seed, "hypervolume": r.hypervolume, "sparsity": r.sparsity, "eum": r.eum}))
        .collect();
    let summary = if reports.len() >= 3 {
        let summary = aggregate_seeds(&reports)?;
        emit_report(&summary, &reports, &dir)?;
        Some(summary)
    } else {
        None
    };
    print_json(&json!({"method": method_name(&config)?, "dir": dir, "seeds": per_seed, "summary": summary, "failures": failures}))?;
    Ok(failures.is_empty())
}

fn evaluate_run(run: &Path, config: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> Result<(), Error> {
    let config = ExperimentConfig::load(config.unwrap_or(&run.join("config.toml")))?;
    config.validate()?;
    let previous: Option<SeedReport> = read_json(&run.join("metrics.json")).ok();
    let seed = seed.or(previous.as_ref().map(|r| r.seed)).unwrap_or(0);
    let (agent, reducer) = load_checkpoint(run)?;
    let points = evaluate(&config, &agent, &reducer, seed)?;
    let mut report = build_report(&config, seed, points, &TrainingLog::default())?;
    if let Some(prev) = previous {
        report.training = prev.training;
    }
    let out = out.map_or_else(|| run.join("eval"), Path::to_path_buf);
    emit_seed_report(&report, &out)?;
    print_json(&json!({"dir": out, "hypervolume": report.hypervolume, "sparsity": report.sparsity, "eum": report.eum}))
}

fn score_points(points: &Path, setup: &Setup, out: Option<&Path>) -> Result<(), Error> {
    let config = setup.load()?;
    let points = load_points(points)?;
    let reference = config.reference_point()?;
    let s = score(&points, &reference, config.eval.eum_divisions)?;
    let record = json!({"metrics": s.records(&reference), "front": s.front});
    if let Some(path) = out {
        write_json_file(path, &record)?;
    }
    print_json(&record)
}

fn collect_reports(inputs: &[PathBuf]) -> Result<Vec<SeedReport>, Error> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_file() {
            files.push(input.clone());
        } else if input.join("metrics.json").is_file() {
            files.push(input.join("metrics.json"));
        } else {
            let mut seeds: Vec<(u64, PathBuf)> = std::fs::read_dir(input)?
                .filter_map(|e| e.ok())
                .filter_map(|e| {
                    let name = e.file_name().into_string().ok()?;
                    let n = name.strip_prefix("seed_")?.parse().ok()?;
                    let file = e.path().join("metrics.json");
                    file.is_file().then_some((n, file))
                })
                .collect();
            if seeds.is_empty() {
                return Err(Error::Usage(format!("no seed reports under {}", input.display())));
            }
            seeds.sort();
            files.extend(seeds.into_iter().map(|(_, f)| f));
        }
    }
    files.iter().map(|f| read_json(f)).collect()
}

fn aggregate(inputs: &[PathBuf], out: Option<&Path>) -> Result<(), Error> {
    let reports = collect_reports(inputs)?;
    let summary = aggregate_seeds(&reports)?;
    if let Some(dir) = out {
        emit_report(&summary, &reports, dir)?;
    }
    print_json(&serde_json::to_value(&summary)?)
}

fn oracle_verify(family: Family, instances: usize, seed: u64, out: Option<&Path>) -> Result<(), Error> {
    let suite = OracleSuite { instances, ..OracleSuite::default() };
    let family = match family {
        Family::Positive => MatrixFamily::PositiveRowStochastic,
        Family::SignMixed => MatrixFamily::SignMixedRowStochastic,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let verdict = run_theorem1_suite(&suite, family, &mut rng)?;
    if let Some(path) = out {
        write_json_file(path, &verdict)?;
    }
    println!("{}", verdict.to_json()?);
    Ok(())
}

fn bench(seed: u64, iterations: usize) -> Result<(), Error> {
    let mut entries = bench_agent_update(&[64, 128, 256], iterations, seed)?;
    entries.push(bench_hypervolume(35, 1, seed)?);
    print_json(&serde_json::to_value(&entries)?)
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Train { setup, seeds, out } => return train(&setup, &seeds, &out),
        Command::Evaluate { run, config, seed, out } => evaluate_run(&run, config.as_deref(), seed, out.as_deref())?,
        Command::Score { points, setup, out } => score_points(&points, &setup, out.as_deref())?,
        Command::Aggregate { inputs, out } => aggregate(&inputs, out.as_deref())?,
        Command::OracleVerify { family, instances, seed, out } => oracle_verify(family, instances, seed, out.as_deref())?,
        Command::Bench { seed, iterations } => bench(seed, iterations)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let record = json!({"error": {"kind": error_kind(&e), "message": e.to_string()}});
            eprintln!("{record}");
            ExitCode::from(if matches!(e, Error::Usage(_) | Error::Config(_)) { 2 } else { 1 })
        }
    }
}
