//! Command-line front end.
//!
//! Exit codes: 0 success, 1 some runs or trials failed, 2 usage or
//! configuration error.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{load_config, DEFAULT_TEMPLATE};
use crate::engine::tune::{apply_params, SamplerKind, TuneOutcome};
use crate::engine::{self, read_result, run_experiment, write_result, ExperimentConfig, RunResult};
use crate::eval::report::{render_plots, write_evaluation, write_robustness};
use crate::eval::{robustness_sweep, ScoreWeights};
use crate::forecast::ForecasterKind;
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "lnnchain", version, about = "Supply-chain ordering with learned demand forecasts")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    /// Only log errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Hybrid,
    Gbt,
    Sma,
    All,
}

impl ModelArg {
    fn kinds(self) -> Vec<ForecasterKind> {
        match self {
            ModelArg::Hybrid => vec![ForecasterKind::Hybrid],
            ModelArg::Gbt => vec![ForecasterKind::Gbt],
            ModelArg::Sma => vec![ForecasterKind::Sma],
            ModelArg::All => ForecasterKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightsArg {
    Default,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Random,
    Tpe,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration file (defaults apply when omitted).
    #[arg(short, long)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(short, long, env = "LNNCHAIN_OUT", default_value = "results")]
    pub output: PathBuf,

    /// Seeds as a list and/or ranges, e.g. `42-51` or `1,5,9`.
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<SeedList>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment for each seed and write one result file per run.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        model: ModelArg,
        /// Relative demand noise on the validation period.
        #[arg(long)]
        noise: Option<f64>,
        /// Hyperparameters written by `tune` (best_params.json).
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Search hyperparameters maximising the manufacturer's profit.
    Tune {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "hybrid")]
        model: ModelArg,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_enum)]
        sampler: Option<SamplerArg>,
        /// Tune for every seed instead of once.
        #[arg(long)]
        per_seed: bool,
    },
    /// Score the result files in the output directory and write reports.
    Evaluate {
        #[arg(short, long, env = "LNNCHAIN_OUT", default_value = "results")]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "default")]
        weights: WeightsArg,
    },
    /// Replay validation under several demand-noise levels.
    Robustness {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        model: ModelArg,
        /// Comma-separated noise levels.
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.5,1.0")]
        levels: Vec<f64>,
    },
    /// Render SVG plots from the CSV files of `evaluate` and `robustness`.
    Report {
        /// Directory containing profit_curves.csv and/or robustness.csv.
        #[arg(short, long, env = "LNNCHAIN_OUT", default_value = "results")]
        output: PathBuf,
    },
    /// Small end-to-end run (120 days, three seeds, all models).
    Demo {
        #[arg(short, long, env = "LNNCHAIN_OUT", default_value = "demo-output")]
        output: PathBuf,
    },
    /// Print the commented default configuration.
    Config,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

/// Parses `42-51,60` into seeds.
pub fn parse_seeds(s: &str) -> std::result::Result<SeedList, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|_| format!("bad seed '{a}'"))?;
                let b: u64 = b.trim().parse().map_err(|_| format!("bad seed '{b}'"))?;
                if a > b {
                    return Err(format!("empty seed range {part}"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| format!("bad seed '{part}'"))?),
        }
    }
    if out.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(SeedList(out))
}

fn base_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seeds) = &common.seeds {
        cfg.seeds = seeds.0.clone();
    }
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

fn load_params(path: &Path) -> Result<std::collections::BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let outcome: TuneOutcome =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(outcome.best_params)
}

/// Runs every model over the configured seeds, writing result files.
/// Returns the results and the number of failed runs.
fn simulate_models(cfg: &ExperimentConfig, kinds: &[ForecasterKind], out: &Path) -> Result<(Vec<RunResult>, usize)> {
    let mut results = Vec::new();
    let mut failures = 0;
    for &kind in kinds {
        let start = Instant::now();
        let mcfg = cfg.clone().with_model(kind);
        let outcome = run_experiment(&mcfg)?;
        for r in &outcome.results {
            write_result(out, r)?;
        }
        for (seed, e) in &outcome.failures {
            eprintln!("{kind} seed {seed} failed: {e}");
        }
        failures += outcome.failures.len();
        log::info!(
            "{kind}: {} runs in {:.1}s",
            outcome.results.len(),
            start.elapsed().as_secs_f64()
        );
        results.extend(outcome.results);
    }
    Ok((results, failures))
}

fn cmd_simulate(common: &Common, model: ModelArg, noise: Option<f64>, params: Option<&Path>) -> Result<i32> {
    let mut cfg = base_config(common)?;
    if let Some(n) = noise {
        cfg.noise_level = n;
    }
    if let Some(p) = params {
        cfg = apply_params(&cfg, &load_params(p)?)?;
    }
    cfg.validate()?;
    let (results, failures) = simulate_models(&cfg, &model.kinds(), &common.output)?;
    for r in &results {
        println!(
            "{} seed {}: total profit {:.2}",
            r.model,
            r.seed,
            r.total_profit()?
        );
    }
    Ok(if failures > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

fn cmd_tune(
    common: &Common,
    model: ModelArg,
    trials: Option<usize>,
    sampler: Option<SamplerArg>,
    per_seed: bool,
) -> Result<i32> {
    let mut cfg = base_config(common)?;
    if let Some(t) = trials {
        cfg.tuning.n_trials = t;
    }
    if let Some(s) = sampler {
        cfg.tuning.sampler = match s {
            SamplerArg::Random => SamplerKind::Random,
            SamplerArg::Tpe => SamplerKind::Tpe,
        };
    }
    cfg.tuning.per_seed |= per_seed;
    cfg.validate()?;
    let seeds = if cfg.tuning.per_seed {
        cfg.seeds.clone()
    } else {
        vec![cfg.tuning.run_seed]
    };
    let mut partial = false;
    for kind in model.kinds() {
        let mcfg = cfg.clone().with_model(kind);
        for &seed in &seeds {
            let outcome = engine::tune(&mcfg, &cfg.tuning, seed)?;
            partial |= outcome.trials.iter().any(|t| t.objective.is_none());
            let dir = common.output.join("tune").join(kind.name());
            let name = if cfg.tuning.per_seed {
                format!("best_params_{seed}.json")
            } else {
                "best_params.json".to_string()
            };
            write_json(&dir.join(&name), &outcome)?;
            println!(
                "{kind} seed {seed}: best trial {} objective {:.2} ({} trials) -> {}",
                outcome.best_index,
                outcome.best_objective,
                outcome.trials.len(),
                dir.join(&name).display()
            );
        }
    }
    Ok(if partial { EXIT_PARTIAL } else { EXIT_OK })
}

/// Loads every `<dir>/<model>/<seed>.json`.
pub fn load_results(dir: &Path) -> Result<Vec<RunResult>> {
    let mut results = Vec::new();
    for kind in ForecasterKind::ALL {
        let sub = dir.join(kind.name());
        if !sub.is_dir() {
            continue;
        }
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&sub)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            results.push(read_result(&p)?);
        }
    }
    if results.is_empty() {
        return Err(Error::config(format!("no result files under {}", dir.display())));
    }
    Ok(results)
}

fn cmd_evaluate(output: &Path, weights: WeightsArg) -> Result<i32> {
    let runs = load_results(output)?;
    let w = match weights {
        WeightsArg::Default => ScoreWeights::DEFAULT,
        WeightsArg::Custom => ScoreWeights::CUSTOM,
    };
    let eval = write_evaluation(output, &runs, &w)?;
    println!("ranking by mean total score:");
    for (model, score) in &eval.score_stats.ranking {
        println!("  {model:<8} {score:.4}");
    }
    for p in &eval.profit_stats.pairwise {
        println!(
            "profit {} vs {}: t = {:.3}, p = {:.4} (Holm {:.4})",
            p.a, p.b, p.t, p.p, p.p_holm
        );
    }
    if let Some(a) = &eval.profit_stats.anova {
        println!("profit ANOVA: F = {:.3}, p = {:.4}", a.f, a.p_value);
    }
    Ok(EXIT_OK)
}

fn cmd_robustness(common: &Common, model: ModelArg, levels: &[f64]) -> Result<i32> {
    let cfg = base_config(common)?;
    let mut tables = Vec::new();
    for kind in model.kinds() {
        let mcfg = cfg.clone().with_model(kind);
        let table = robustness_sweep(&mcfg, levels, &mcfg.seeds)?;
        for (level, mean) in table.mean_by_level() {
            println!("{kind} noise {level}: mean total profit {mean:.2}");
        }
        tables.push(table);
    }
    write_robustness(&common.output, &tables)?;
    write_json(&common.output.join("robustness.json"), &tables)?;
    Ok(EXIT_OK)
}

/// Configuration of the miniature demo run.
pub fn demo_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.demand.horizon = 120;
    cfg.train_days = 40;
    cfg.seeds = vec![42, 43, 44];
    cfg.forecaster.lnn.n_neurons = 16;
    cfg.forecaster.lnn.train.epochs = 10;
    cfg.forecaster.gbt.n_trees = 30;
    cfg
}

fn cmd_demo(output: &Path) -> Result<i32> {
    let start = Instant::now();
    let cfg = demo_config();
    let (runs, failures) = simulate_models(&cfg, &ForecasterKind::ALL, output)?;
    write_evaluation(output, &runs, &ScoreWeights::DEFAULT)?;
    let table = robustness_sweep(&cfg.clone().with_model(ForecasterKind::Hybrid), &[0.0, 0.5, 1.0], &cfg.seeds)?;
    write_robustness(output, &[table])?;
    let plots = render_plots(output)?;
    for r in &runs {
        println!("{:<7} seed {:<4} total profit {:>12.2}", r.model.name(), r.seed, r.total_profit()?);
    }
    println!(
        "wrote {} result files and {} plots to {} in {:.1}s",
        runs.len(),
        plots.len(),
        output.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(if failures > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = if quiet {
        log::LevelFilter::Error
    } else {
        match verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
}

/// Dispatches parsed arguments. Errors map to exit code 2 for bad
/// configuration and 1 otherwise.
pub fn execute(cli: Cli) -> i32 {
    init_logging(cli.verbose, cli.quiet);
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be positive");
            return EXIT_USAGE;
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let outcome = match &cli.command {
        Command::Simulate {
            common,
            model,
            noise,
            params,
        } => cmd_simulate(common, *model, *noise, params.as_deref()),
        Command::Tune {
            common,
            model,
            trials,
            sampler,
            per_seed,
        } => cmd_tune(common, *model, *trials, *sampler, *per_seed),
        Command::Evaluate { output, weights } => cmd_evaluate(output, *weights),
        Command::Robustness { common, model, levels } => cmd_robustness(common, *model, levels),
        Command::Report { output } => render_plots(output).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
            EXIT_OK
        }),
        Command::Demo { output } => cmd_demo(output),
        Command::Config => {
            print!("{DEFAULT_TEMPLATE}");
            Ok(EXIT_OK)
        }
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e.root() {
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_PARTIAL,
            }
        }
    }
}

pub fn run() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => execute(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}
