//! Command-line orchestration over `evops-core`: synthetic cohort generation,
//! baseline scoring and multi-seed optimization runs.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use evops_core::report::{export_aggregate, export_baseline};
use evops_core::synthgen::write_cohort;
use evops_core::{
    aggregate_runs, compute_baseline, export_report, generate, load_dataset, run_single,
    with_workers, EvolutionConfig, GenerationTrace, RunReport, SplitDataset, SynthConfig,
};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "evops",
    version,
    about = "Evolutionary patch selection for slide-level retrieval"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize patch selections for one or more seeds.
    Run(RunArgs),
    /// Write a synthetic planted-signal cohort.
    GenSynth(GenSynthArgs),
    /// Score the all-patches reference library.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Dataset directory or manifest.json.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with evolution settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fitness worker threads per run (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Seeds as `a..b` (inclusive) and/or comma lists, e.g. `1..5,9`.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub pop_size: Option<usize>,
    #[arg(long)]
    pub swap_p: Option<f64>,
    #[arg(long)]
    pub flip_p: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of seeds to run concurrently.
    #[arg(long, default_value_t = 1)]
    pub parallel_seeds: usize,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub validation_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub patches_min: Option<usize>,
    #[arg(long)]
    pub patches_max: Option<usize>,
    #[arg(long)]
    pub informative_fraction: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub class_separation: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with evolution settings; only `k_neighbors` is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[arg(long)]
    pub k: Option<usize>,
}

/// Failure classes, each mapped to its own process exit code.
#[derive(Debug)]
pub enum CliError {
    Config(anyhow::Error),
    Dataset(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Dataset(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, err) = match self {
            CliError::Config(e) => ("configuration error", e),
            CliError::Dataset(e) => ("dataset error", e),
            CliError::Runtime(e) => ("error", e),
        };
        write!(f, "{kind}: {err:#}")
    }
}

impl std::error::Error for CliError {}

type CliResult<T> = Result<T, CliError>;

fn runtime(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Runtime(e.into())
}

/// Parses `1..10`, `3,5,8` or mixes such as `1..3,7`. Ranges are inclusive.
pub fn parse_seeds(spec: &str) -> anyhow::Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in spec.split(',').map(str::trim) {
        if part.is_empty() {
            return Err(anyhow!("empty entry in seed list `{spec}`"));
        }
        match part.split_once("..") {
            Some((lo, hi)) => {
                let lo: u64 = lo
                    .trim()
                    .parse()
                    .with_context(|| format!("bad seed `{lo}`"))?;
                let hi: u64 = hi
                    .trim()
                    .parse()
                    .with_context(|| format!("bad seed `{hi}`"))?;
                if lo > hi {
                    return Err(anyhow!("seed range {lo}..{hi} is empty"));
                }
                seeds.extend(lo..=hi);
            }
            None => seeds.push(part.parse().with_context(|| format!("bad seed `{part}`"))?),
        }
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = seeds.iter().find(|s| !seen.insert(**s)) {
        return Err(anyhow!("seed {dup} listed more than once"));
    }
    Ok(seeds)
}

fn read_json_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .map_err(CliError::Config)?;
    serde_json::from_str(&text)
        .with_context(|| format!("invalid config {}", path.display()))
        .map_err(CliError::Config)
}

fn load(path: &Path) -> CliResult<SplitDataset> {
    let ds = load_dataset(path).map_err(|e| CliError::Dataset(e.into()))?;
    ds.ensure_runnable()
        .map_err(|e| CliError::Dataset(e.into()))?;
    Ok(ds)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(CliError::Runtime)
}

/// Resolved invocation of `evops run`, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: Option<PathBuf>,
    pub dataset_path: PathBuf,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub config: EvolutionConfig,
}

impl RunManifest {
    pub const FILE: &'static str = "run_manifest.json";

    pub fn from_args(args: &RunArgs) -> CliResult<Self> {
        let mut config: EvolutionConfig = read_json_config(args.config.as_deref())?;
        if let Some(v) = args.generations {
            config.generations = v;
        }
        if let Some(v) = args.pop_size {
            config.population_size = v;
        }
        if let Some(v) = args.swap_p {
            config.crossover_swap_p = v;
        }
        if let Some(v) = args.flip_p {
            config.mutation_flip_p = v;
        }
        if let Some(v) = args.k {
            config.k_neighbors = v;
        }
        let seeds = match &args.seeds {
            Some(spec) => parse_seeds(spec).map_err(CliError::Config)?,
            None => vec![config.seed],
        };
        config.validate().map_err(|e| CliError::Config(e.into()))?;
        if args.parallel_seeds == 0 {
            return Err(CliError::Config(anyhow!(
                "--parallel-seeds must be at least 1"
            )));
        }
        Ok(Self {
            config_path: args.config.clone(),
            dataset_path: args.dataset.clone(),
            out_dir: args.out.clone(),
            seeds,
            workers: args.workers,
            config,
        })
    }

    pub fn config_for(&self, seed: u64) -> EvolutionConfig {
        EvolutionConfig {
            seed,
            ..self.config.clone()
        }
    }
}

pub fn format_trace(seed: u64, t: &GenerationTrace) -> String {
    format!(
        "seed {seed} gen {:>3}  best_error {:.6}  mean_error {:.6}  min_fraction {:.6}  mean_fraction {:.6}  front {}",
        t.generation, t.best_error, t.mean_error, t.min_fraction, t.mean_fraction, t.front0_size
    )
}

fn run_seed(manifest: &RunManifest, dataset: &SplitDataset, seed: u64) -> CliResult<RunReport> {
    let config = manifest.config_for(seed);
    let report = with_workers(manifest.workers, || {
        run_single(dataset, &config, |t| eprintln!("{}", format_trace(seed, t)))
    })
    .map_err(runtime)?
    .map_err(runtime)?;
    let dir = manifest.out_dir.join(format!("seed_{seed}"));
    export_report(&report, dataset, &dir).map_err(runtime)?;
    eprintln!(
        "seed {seed}: front {} solutions, best-val test F1 {:.4} with {} patches ({:.1}% reduction)",
        report.front.len(),
        report.best_val_solution().test_f1,
        report.best_val_solution().patch_count,
        report.reduction_percent_best_val
    );
    Ok(report)
}

pub fn cmd_run(args: &RunArgs) -> CliResult<()> {
    let manifest = RunManifest::from_args(args)?;
    let dataset = load(&manifest.dataset_path)?;
    fs::create_dir_all(&manifest.out_dir)
        .with_context(|| format!("cannot create {}", manifest.out_dir.display()))
        .map_err(CliError::Runtime)?;
    write_json(&manifest.out_dir.join(RunManifest::FILE), &manifest)?;

    let mut reports = Vec::with_capacity(manifest.seeds.len());
    for chunk in manifest.seeds.chunks(args.parallel_seeds) {
        let results: Vec<CliResult<RunReport>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| {
                    let (m, d) = (&manifest, &dataset);
                    scope.spawn(move || run_seed(m, d, seed))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(runtime(anyhow!("run thread panicked"))))
                })
                .collect()
        });
        for r in results {
            reports.push(r?);
        }
    }

    let aggregate = aggregate_runs(&reports).map_err(runtime)?;
    export_aggregate(&aggregate, &reports, &manifest.out_dir).map_err(runtime)?;
    eprintln!(
        "{} runs: best-val test F1 {:.4} ± {:.4}, patches {:.1} ± {:.1} of {}",
        aggregate.runs,
        aggregate.best_val.test_f1.mean,
        aggregate.best_val.test_f1.std,
        aggregate.best_val.patch_count.mean,
        aggregate.best_val.patch_count.std,
        aggregate.total_patches
    );
    Ok(())
}

pub fn synth_config(args: &GenSynthArgs) -> CliResult<SynthConfig> {
    let mut cfg: SynthConfig = read_json_config(args.config.as_deref())?;
    macro_rules! apply {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field { cfg.$field = v; })*
        };
    }
    apply!(
        classes,
        train_per_class,
        validation_per_class,
        test_per_class,
        patches_min,
        patches_max,
        informative_fraction,
        dim,
        class_separation,
        noise_sigma,
        seed
    );
    cfg.validate().map_err(|e| CliError::Config(e.into()))?;
    Ok(cfg)
}

pub fn cmd_gen_synth(args: &GenSynthArgs) -> CliResult<()> {
    let cfg = synth_config(args)?;
    let cohort = generate(&cfg).map_err(runtime)?;
    write_cohort(&cohort, &args.out).map_err(runtime)?;
    let ds = &cohort.dataset;
    let patches: usize = ds.slides().map(|s| s.patch_count()).sum();
    println!(
        "wrote {} slides ({} train, {} validation, {} test), {} patches, dim {} to {}",
        ds.slides().count(),
        ds.train().len(),
        ds.validation().len(),
        ds.test().len(),
        patches,
        ds.dim(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_baseline(args: &BaselineArgs) -> CliResult<()> {
    let mut config: EvolutionConfig = read_json_config(args.config.as_deref())?;
    if let Some(k) = args.k {
        config.k_neighbors = k;
    }
    if config.k_neighbors == 0 {
        return Err(CliError::Config(anyhow!("k must be at least 1")));
    }
    let dataset = load(&args.dataset)?;
    let baseline = with_workers(args.workers, || {
        compute_baseline(&dataset, config.k_neighbors)
    })
    .map_err(runtime)?
    .map_err(runtime)?;
    export_baseline(&baseline, &args.out).map_err(runtime)?;
    println!(
        "baseline: {} patches, validation F1 {:.4}, test F1 {:.4}",
        baseline.patch_count, baseline.validation_f1, baseline.test_f1
    );
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::GenSynth(a) => cmd_gen_synth(a),
        Command::Baseline(a) => cmd_baseline(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1..10").unwrap(), (1..=10).collect::<Vec<_>>());
        assert_eq!(parse_seeds("3,5,8").unwrap(), vec![3, 5, 8]);
        assert_eq!(parse_seeds("1..3, 7").unwrap(), vec![1, 2, 3, 7]);
        assert_eq!(parse_seeds("4..4").unwrap(), vec![4]);
        assert!(parse_seeds("5..2").is_err());
        assert!(parse_seeds("1,1").is_err());
        assert!(parse_seeds("1..3,2").is_err());
        assert!(parse_seeds("").is_err());
        assert!(parse_seeds("a").is_err());
    }

    fn run_args(extra: &[&str]) -> RunArgs {
        let mut argv = vec!["evops", "run", "--dataset", "d", "--out", "o"];
        argv.extend_from_slice(extra);
        match Cli::parse_from(argv).command {
            Command::Run(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn defaults_without_config_file() {
        let m = RunManifest::from_args(&run_args(&[])).unwrap();
        assert_eq!(m.config, EvolutionConfig::default());
        assert_eq!(
            (
                m.config.population_size,
                m.config.generations,
                m.config.k_neighbors
            ),
            (100, 50, 5)
        );
        assert_eq!(
            (m.config.crossover_swap_p, m.config.mutation_flip_p),
            (0.9, 0.01)
        );
        assert_eq!(m.seeds, vec![0]);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(
            &path,
            r#"{"population_size": 40, "generations": 7, "k_neighbors": 3}"#,
        )
        .unwrap();
        let m = RunManifest::from_args(&run_args(&[
            "--config",
            path.to_str().unwrap(),
            "--generations",
            "9",
            "--seeds",
            "2..4",
        ]))
        .unwrap();
        assert_eq!(m.config.population_size, 40);
        assert_eq!(m.config.generations, 9);
        assert_eq!(m.config.k_neighbors, 3);
        assert_eq!(m.config.mutation_flip_p, 0.01);
        assert_eq!(m.seeds, vec![2, 3, 4]);
        assert_eq!(m.config_for(3).seed, 3);
    }

    #[test]
    fn config_errors_exit_two() {
        let bad = RunManifest::from_args(&run_args(&["--pop-size", "7"])).unwrap_err();
        assert_eq!(bad.exit_code(), 2);
        let bad = RunManifest::from_args(&run_args(&["--seeds", "3..1"])).unwrap_err();
        assert_eq!(bad.exit_code(), 2);
        let missing =
            RunManifest::from_args(&run_args(&["--config", "/nonexistent/cfg.json"])).unwrap_err();
        assert_eq!(missing.exit_code(), 2);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"population": 40}"#).unwrap();
        let unknown =
            RunManifest::from_args(&run_args(&["--config", path.to_str().unwrap()])).unwrap_err();
        assert_eq!(unknown.exit_code(), 2);
    }
}
