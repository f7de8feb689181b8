//! `sidelink-sim`: run scheduler comparisons and summarize their results.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use sidelink::config::{ConfigError, SimConfig, ValidatedConfig};
use sidelink::engine::run_with_observer;
use sidelink::metrics::{
    aggregate_by_scheduler, read_run_csv, write_comparison_csv, write_run_csv, write_summary_csv, AggregateResult,
    SimResult, TraceWriter,
};
use sidelink::schedulers::SchedulerKind;

#[derive(Parser)]
#[command(name = "sidelink-sim", version, about = "C-V2X sidelink scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every (scheduler, seed) pair and write per-run and summary files.
    Run(RunArgs),
    /// Aggregate existing per-run files into summaries and a comparison table.
    Summarize(SummarizeArgs),
    /// Check a configuration file and report every invalid field.
    ValidateConfig {
        path: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; defaults are used for absent fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scheduler to run (repeatable). Defaults to all three.
    #[arg(long = "scheduler", value_name = "NAME")]
    schedulers: Vec<SchedulerKind>,
    /// Number of seeds, numbered from 1.
    #[arg(long, default_value_t = 5, conflicts_with = "seed_list")]
    seeds: u64,
    /// Explicit comma-separated seeds.
    #[arg(long, value_delimiter = ',', value_name = "SEEDS")]
    seed_list: Option<Vec<u64>>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Concurrent runs. Defaults to the number of available cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write every reception as `<scheduler>_<seed>_trace.csv`.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Per-run CSV files.
    files: Vec<PathBuf>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Configuration supplying the confidence z-score.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Summarize(args) => cmd_summarize(args),
        Command::ValidateConfig { path } => cmd_validate(&path),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ValidatedConfig> {
    let config = match path {
        Some(p) => SimConfig::from_path(p).with_context(|| format!("reading {}", p.display()))?,
        None => SimConfig::default(),
    };
    Ok(config.validate()?)
}

/// Deletes the files on drop unless disarmed.
struct Cleanup(Vec<PathBuf>);

impl Cleanup {
    fn track(&mut self, path: PathBuf) -> PathBuf {
        self.0.push(path.clone());
        path
    }

    fn disarm(mut self) {
        self.0.clear();
    }
}

impl Drop for Cleanup {
    fn drop(&mut self) {
        for p in &self.0 {
            let _ = fs::remove_file(p);
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    let schedulers = if args.schedulers.is_empty() {
        SchedulerKind::ALL.to_vec()
    } else {
        let mut s = args.schedulers.clone();
        s.sort();
        s.dedup();
        s
    };
    let seeds = match &args.seed_list {
        Some(list) => {
            let mut l = list.clone();
            l.sort_unstable();
            l.dedup();
            l
        }
        None => (1..=args.seeds).collect(),
    };
    if seeds.is_empty() {
        bail!("no seeds requested");
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let plan: Vec<(SchedulerKind, u64)> = schedulers
        .iter()
        .flat_map(|&k| seeds.iter().map(move |&s| (k, s)))
        .collect();
    let mut cleanup = Cleanup(Vec::new());
    for &(kind, seed) in &plan {
        cleanup.track(run_path(&args.out, kind, seed));
        if args.trace {
            cleanup.track(trace_path(&args.out, kind, seed));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .context("starting worker pool")?;
    let results: Vec<SimResult> = pool.install(|| {
        plan.par_iter()
            .map(|&(kind, seed)| execute(&config, kind, seed, &args.out, args.trace))
            .collect::<Result<_>>()
    })?;

    let aggregates = aggregate_by_scheduler(&results, config.ci_z_score)?;
    for a in &aggregates {
        let path = cleanup.track(args.out.join(format!("summary_{}.csv", a.scheduler)));
        write_file(&path, |w| Ok(write_summary_csv(w, std::slice::from_ref(a))?))?;
    }
    let comparison = cleanup.track(args.out.join("comparison.csv"));
    write_file(&comparison, |w| Ok(write_comparison_csv(w, &aggregates)?))?;
    cleanup.disarm();

    print_table(&aggregates)
}

fn run_path(dir: &Path, kind: SchedulerKind, seed: u64) -> PathBuf {
    dir.join(format!("{}_{seed}.csv", kind.name()))
}

fn trace_path(dir: &Path, kind: SchedulerKind, seed: u64) -> PathBuf {
    dir.join(format!("{}_{seed}_trace.csv", kind.name()))
}

fn execute(config: &ValidatedConfig, kind: SchedulerKind, seed: u64, dir: &Path, trace: bool) -> Result<SimResult> {
    let context = || format!("{kind} seed {seed}");
    let result = if trace {
        let path = trace_path(dir, kind, seed);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut tracer = TraceWriter::new(BufWriter::new(file))?;
        let result = run_with_observer(config, kind, seed, &mut tracer).with_context(context)?;
        tracer.finish().with_context(|| format!("writing {}", path.display()))?;
        result
    } else {
        run_with_observer(config, kind, seed, &mut ()).with_context(context)?
    };
    write_file(&run_path(dir, kind, seed), |w| Ok(write_run_csv(w, std::slice::from_ref(&result))?))?;
    Ok(result)
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    body(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn print_table(aggregates: &[AggregateResult]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    write_comparison_csv(&mut out, aggregates)?;
    Ok(())
}

fn cmd_summarize(args: SummarizeArgs) -> Result<()> {
    if args.files.is_empty() {
        bail!("no input files given");
    }
    let config = load_config(args.config.as_deref())?;
    let mut results = Vec::new();
    for path in &args.files {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let parsed = read_run_csv(file).with_context(|| format!("parsing {}", path.display()))?;
        results.extend(parsed);
    }
    if results.is_empty() {
        bail!("input files contain no results");
    }
    let aggregates = aggregate_by_scheduler(&results, config.ci_z_score)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut cleanup = Cleanup(Vec::new());
    for a in &aggregates {
        let path = cleanup.track(args.out.join(format!("summary_{}.csv", a.scheduler)));
        write_file(&path, |w| Ok(write_summary_csv(w, std::slice::from_ref(a))?))?;
    }
    let comparison = cleanup.track(args.out.join("comparison.csv"));
    write_file(&comparison, |w| Ok(write_comparison_csv(w, &aggregates)?))?;
    cleanup.disarm();
    print_table(&aggregates)
}

fn cmd_validate(path: &Path) -> Result<()> {
    let config = SimConfig::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    match config.validate() {
        Ok(_) => {
            println!("{}: ok", path.display());
            Ok(())
        }
        Err(ConfigError::Invalid(violations)) => {
            for v in &violations {
                eprintln!("{}: {}: {}", path.display(), v.field, v.message);
            }
            bail!("{} invalid field(s)", violations.len())
        }
        Err(e) => Err(e.into()),
    }
}
