//! `surrogate`: runs experiment grids, the one-parameter toy demo, dataset
//! downloads, report rendering and threshold recalibration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use surrogate_core::data::{default_cache_dir, fetch_dataset, HttpTransport, Registry};
use surrogate_core::harness::{
    calibrate_and_eval, resolve_workers, run_experiment, run_toy_demo, ExperimentSpec, HarnessError, ReportTable,
    ResultsFile, RunOptions, ToyConfig,
};

const EXIT_PARTIAL: u8 = 1;
const EXIT_INVALID_SPEC: u8 = 2;

#[derive(Parser)]
#[command(name = "surrogate", version, about = "Learned surrogate losses for binary classification")]
struct Cli {
    /// Dataset cache directory [default: $SURROGATE_CACHE_DIR or ~/.cache/surrogate-loss]
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (dataset, metric, mode, seed) combination of a spec file.
    Run(RunArgs),
    /// Train the one-parameter threshold model and write snapshot curves.
    Toy(ToyArgs),
    /// Download registry datasets into the cache and verify their checksums.
    Fetch {
        /// Registry TOML file.
        registry: PathBuf,
        /// Dataset names; all registry entries when empty.
        names: Vec<String>,
    },
    /// Re-render the report table from a results file.
    Report {
        results: PathBuf,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-select the decision threshold of a finished run.
    Calibrate { run_dir: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    spec: PathBuf,
    #[arg(long)]
    iterations: Option<u64>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads [default: $SURROGATE_WORKERS, then the spec, then 1]
    #[arg(long)]
    workers: Option<usize>,
    /// Rerun combinations that already have a result.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long, default_value = "toy")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TOML file with toy settings; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cache_dir = cli.cache_dir.clone().unwrap_or_else(default_cache_dir);
    let result = match cli.command {
        Command::Run(args) => run(args, cache_dir),
        Command::Toy(args) => toy(args).map(|()| ExitCode::SUCCESS),
        Command::Fetch { registry, names } => fetch(&registry, &names, &cache_dir).map(|()| ExitCode::SUCCESS),
        Command::Report { results, out } => report(&results, out.as_deref()).map(|()| ExitCode::SUCCESS),
        Command::Calibrate { run_dir } => calibrate(&run_dir, &cache_dir).map(|()| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let invalid = e.downcast_ref::<HarnessError>().is_some_and(|h| matches!(h, HarnessError::Spec(_)));
            ExitCode::from(if invalid { EXIT_INVALID_SPEC } else { EXIT_PARTIAL })
        }
    }
}

fn load_spec(args: &RunArgs) -> Result<ExperimentSpec, HarnessError> {
    let mut spec = ExperimentSpec::load(&args.spec).map_err(|e| match e {
        HarnessError::Io { path, source } => HarnessError::Spec(format!("{}: {source}", path.display())),
        other => other,
    })?;
    if let Some(t) = args.iterations {
        spec.train.iterations = t;
    }
    if let Some(seeds) = &args.seeds {
        spec.seeds = seeds.clone();
    }
    if let Some(out) = &args.output {
        spec.output_dir = out.clone();
    }
    spec.validate()?;
    Ok(spec)
}

fn run(args: RunArgs, cache_dir: PathBuf) -> anyhow::Result<ExitCode> {
    let spec = load_spec(&args)?;
    let options = RunOptions {
        force: args.force,
        workers: resolve_workers(args.workers, &spec),
        cache_dir,
    };
    log::info!(
        "{}: {} runs on {} workers into {}",
        spec.name,
        spec.grid().len(),
        options.workers,
        spec.output_dir.display()
    );
    let outcome = run_experiment(&spec, &options)?;
    print!("{}", outcome.table.render());
    let failed = outcome.failed();
    if failed > 0 {
        eprintln!("{failed} of {} runs failed", outcome.results.len());
        return Ok(ExitCode::from(EXIT_PARTIAL));
    }
    Ok(ExitCode::SUCCESS)
}

fn toy(args: ToyArgs) -> anyhow::Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
            toml::from_str(&text).map_err(|e| HarnessError::Spec(e.to_string()))?
        }
        None => ToyConfig::default(),
    };
    if let Some(t) = args.iterations {
        config.train.iterations = t;
    }
    config.train.validate().map_err(|e| HarnessError::Spec(e.to_string()))?;
    let outcome = run_toy_demo(&config, args.seed, Some(&args.out))?;
    println!(
        "alpha {:.4} (true loss {:.4}); grid optimum alpha {:.4} (loss {:.4})",
        outcome.final_alpha, outcome.final_true_loss, outcome.optimum_alpha, outcome.optimum_loss
    );
    for s in &outcome.snapshots {
        println!("iteration {:>6}: alpha {:.4}, window gap {:.4}", s.iteration, s.alpha, s.window_gap);
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn fetch(registry: &Path, names: &[String], cache_dir: &Path) -> anyhow::Result<()> {
    let registry = Registry::load(registry)?;
    let names: Vec<String> = if names.is_empty() {
        registry.datasets.keys().cloned().collect()
    } else {
        names.to_vec()
    };
    for name in &names {
        let path = fetch_dataset(&registry, name, cache_dir, &HttpTransport)?;
        println!("{name}: {}", path.display());
    }
    Ok(())
}

fn report(results: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let file = ResultsFile::load(results)?;
    let text = ReportTable::from_results(&file.runs).render();
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| path.display().to_string())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn calibrate(run_dir: &Path, cache_dir: &Path) -> anyhow::Result<()> {
    let c = calibrate_and_eval(run_dir, cache_dir)?;
    match c.gamma {
        Some(g) => println!("gamma {g:?}{}", if c.degenerate { " (degenerate)" } else { "" }),
        None => println!("gamma n/a (ranking metric)"),
    }
    println!("validation loss {:.6}", c.validation_loss);
    println!("test loss {:.6}", c.test_loss);
    Ok(())
}
