use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gronav::harness::{emit_outputs, run_batch, summarize, BackendChoice, MethodVariant, OutputOptions, TrialOptions};
use gronav::{load_scenario, scenarios, ScenarioConfig};

#[derive(Parser)]
#[command(name = "gronav", version, about = "Seeded terrain-aware navigation trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of trials and write results.
    Run(RunArgs),
    /// List the bundled scenarios.
    Scenarios,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: String,
    /// full, no_gp, no_icl, dwa, a comma-separated list, or `all`.
    #[arg(long, default_value = "full")]
    variant: String,
    #[arg(long, default_value = "mock")]
    backend: BackendChoice,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Base seed; trial i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write trajectories.png and marked_aerial.png.
    #[arg(long)]
    plot: bool,
    /// Write the initial marked aerial view to this path.
    #[arg(long)]
    emit_marked_image: Option<PathBuf>,
    /// Write per-tick traces under OUT/traces/.
    #[arg(long)]
    trace: bool,
}

fn parse_variants(s: &str) -> Result<Vec<MethodVariant>> {
    if s == "all" {
        return Ok(MethodVariant::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let v: MethodVariant = part.parse().map_err(anyhow::Error::msg)?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    if out.is_empty() {
        bail!("no variant given");
    }
    Ok(out)
}

fn resolve_scenario(arg: &str) -> Result<ScenarioConfig> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some(s) = scenarios::by_name(arg) {
            return Ok(s);
        }
    }
    load_scenario(path).with_context(|| format!("loading scenario {arg}"))
}

fn run(args: RunArgs) -> Result<()> {
    if args.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let variants = parse_variants(&args.variant)?;
    let scenario = resolve_scenario(&args.scenario)?;
    let opts = TrialOptions {
        backend: args.backend,
        trace: args.trace,
    };
    log::info!(
        "{}: {} trial(s) x {} variant(s), seeds {}..",
        scenario.name,
        args.trials,
        variants.len(),
        args.seed
    );
    let outcomes = run_batch(&scenario, &variants, args.trials, args.seed, opts)?;
    let violations: usize = outcomes.iter().map(|o| o.result.command_violations).sum();
    if violations > 0 {
        log::warn!("{violations} command(s) outside the kinematic limits were replaced by braking");
    }
    let written = emit_outputs(
        &scenario,
        &outcomes,
        &args.out,
        &OutputOptions {
            plot: args.plot,
            trace: args.trace,
            marked_image: args.emit_marked_image,
        },
    )?;
    let results: Vec<_> = outcomes.into_iter().map(|o| o.result).collect();
    println!("{:<8} {:>8} {:>8} {:>12}", "variant", "success", "norm_len", "imu_energy");
    for s in summarize(&results) {
        println!(
            "{:<8} {:>8.2} {:>8.3} {:>12.1}",
            s.variant.name(),
            s.success_rate,
            s.norm_traj_length,
            s.imu_energy
        );
    }
    for p in written {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Scenarios => {
            for name in scenarios::NAMES {
                println!("{name}");
            }
            Ok(())
        }
    }
}
