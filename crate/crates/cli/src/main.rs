//! `ember`: generate smoke, run a single closed-loop simulation, or benchmark
//! planners and information maps over seeded random maps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ember_core::baselines::PlannerMethod;
use ember_core::eid::EidMethod;
use ember_core::sim::{self, CampaignSpec, RunConfig, TargetMode};
use ember_core::{efld, smoke};

#[derive(Parser)]
#[command(name = "ember", version, about = "Visibility-aware multi-agent ergodic exploration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a smoke density sequence and write it as an EFLD file.
    Smoke(SmokeArgs),
    /// Run one closed-loop simulation.
    Run(RunArgs),
    /// Run every method and EID pairing over seeded random maps.
    Bench(BenchArgs),
}

#[derive(Args)]
struct Shared {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SmokeArgs {
    #[command(flatten)]
    shared: Shared,
    /// Number of frames; defaults to the configured final time.
    #[arg(long)]
    steps: Option<usize>,
    /// Output EFLD file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    shared: Shared,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    method: Option<PlannerMethod>,
    #[arg(long)]
    eid: Option<EidMethod>,
    /// Precomputed smoke (EFLD); without it smoke is simulated inline.
    #[arg(long)]
    smoke: Option<PathBuf>,
    /// Also export uncertainty, EID and density at every replan as EFLD.
    #[arg(long)]
    snapshots: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    shared: Shared,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    maps: usize,
    /// Comma-separated planners.
    #[arg(long, value_delimiter = ',', default_value = "ergodic")]
    methods: Vec<String>,
    /// Comma-separated information maps.
    #[arg(long, value_delimiter = ',', default_value = "shannon")]
    eids: Vec<String>,
    #[arg(long, default_value = "config")]
    targets: TargetMode,
    #[arg(long)]
    smoke: Option<PathBuf>,
}

fn load_config(shared: &Shared) -> Result<RunConfig> {
    let mut cfg = match &shared.config {
        Some(path) => RunConfig::load(path)
            .with_context(|| format!("cannot load config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = shared.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_config(path: &Path, cfg: &RunConfig) -> Result<()> {
    sim::write_file(path, cfg.to_json()?.as_bytes())?;
    Ok(())
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("EMBER_THREADS") {
        Ok(s) if !s.trim().is_empty() => {
            let n: usize = s
                .trim()
                .parse()
                .with_context(|| format!("EMBER_THREADS must be a positive integer, got `{s}`"))?;
            if n == 0 {
                bail!("EMBER_THREADS must be a positive integer, got `{s}`");
            }
            Ok(Some(n))
        }
        _ => Ok(None),
    }
}

fn parse_list<T: std::str::FromStr>(items: &[String], what: &str) -> Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    let out: Vec<T> = items
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().with_context(|| format!("bad --{what} entry `{s}`")))
        .collect::<Result<_>>()?;
    if out.is_empty() {
        bail!("--{what} needs at least one entry\n\nusage: ember bench --out DIR --methods ergodic,greedy,lawnmower --eids baseline,mask,shannon");
    }
    Ok(out)
}

fn cmd_smoke(args: SmokeArgs) -> Result<()> {
    let mut cfg = load_config(&args.shared)?;
    if let Some(steps) = args.steps {
        if steps == 0 {
            bail!("--steps must be at least 1");
        }
        cfg.final_time = steps;
    }
    cfg.smoke.validate()?;
    let frames = smoke::generate_smoke_sequence(&cfg.smoke, cfg.domain, cfg.final_time, cfg.seed)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    efld::save(&args.out, &frames)?;
    write_config(&args.out.with_extension("config.json"), &cfg)?;
    let max = frames.iter().map(|f| f.max()).fold(0.0, f64::max);
    println!("frames {} max_density {max:.6}", frames.len());
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = load_config(&args.shared)?;
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if let Some(e) = args.eid {
        cfg.eid = e;
    }
    if let Some(s) = args.smoke {
        cfg.smoke_file = Some(s);
    }
    if args.snapshots {
        cfg.snapshots = true;
    }
    cfg.validate()?;
    let output = sim::run(&cfg).context("run failed")?;
    sim::write_run_outputs(&args.out, &cfg, &output)?;
    println!(
        "method {} eid {} pct_reduction {:.4} mean_iterations {:.2}",
        cfg.method,
        cfg.eid.as_str(),
        output.metrics.pct_reduction,
        output.metrics.mean_iterations()
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let methods: Vec<PlannerMethod> = parse_list(&args.methods, "methods")?;
    let eids: Vec<EidMethod> = parse_list(&args.eids, "eids")?;
    if args.maps == 0 {
        bail!("--maps must be at least 1");
    }
    let mut cfg = load_config(&args.shared)?;
    if let Some(s) = args.smoke {
        cfg.smoke_file = Some(s);
    }
    let spec = CampaignSpec {
        maps: args.maps,
        methods,
        eids,
        targets: args.targets,
        threads: threads_from_env()?,
    };
    let campaign = sim::run_campaign(&cfg, &spec)?;

    let out = &args.out;
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut buf = Vec::new();
    campaign.write_metrics_csv(&mut buf)?;
    sim::write_file(&out.join("metrics.csv"), &buf)?;
    buf.clear();
    campaign.write_runs_csv(&mut buf)?;
    sim::write_file(&out.join("runs.csv"), &buf)?;
    buf.clear();
    campaign.write_summary_csv(&mut buf)?;
    sim::write_file(&out.join("summary.csv"), &buf)?;
    write_config(&out.join("config.json"), &cfg)?;

    println!(
        "{:<10} {:<9} {:>5} {:>5} {:>14} {:>16}",
        "method", "eid", "runs", "fail", "pct_reduction", "iterations"
    );
    for row in campaign.summary() {
        println!(
            "{:<10} {:<9} {:>5} {:>5} {:>7.2} ± {:<5.2} {:>8.2} ± {:<6.2}",
            row.method.as_str(),
            row.eid.as_str(),
            row.runs,
            row.failures,
            row.mean_pct_reduction,
            row.std_pct_reduction,
            row.mean_iterations,
            row.std_iterations
        );
    }
    for run in &campaign.runs {
        if let Err(e) = &run.outcome {
            eprintln!("map {} {} {}: {e}", run.map_seed, run.method, run.eid.as_str());
        }
    }
    if campaign.successes().next().is_none() {
        bail!("all {} runs failed", campaign.runs.len());
    }
    Ok(())
}

/// The error chain on one line, skipping causes whose text the previous
/// message already ends with.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.ends_with(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Smoke(a) => cmd_smoke(a),
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::FAILURE
        }
    }
}
