//! `fedeq` — experiment runner for the federated simulator.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedeq_core::experiment::{run_experiment, run_sweep, ExperimentConfig, RunSummary};
use fedeq_core::federation::Algorithm;
use fedeq_core::theory::{theorem_eta, validate_theorem_conditions};

#[derive(Parser)]
#[command(name = "fedeq", version, about = "Deterministic federated-learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file.
    Run(RunArgs),
    /// Run several algorithms over several seeds with shared data shards.
    Sweep(SweepArgs),
    /// Check the convergence-analysis hyperparameter conditions.
    Theory(TheoryArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's algorithm (fedavg|fedprox|equitable|fedprox_powd).
    #[arg(long)]
    algo: Option<String>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the worker thread count.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated seeds, e.g. `1,2,3`.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Comma-separated algorithms; defaults to all four.
    #[arg(long, value_delimiter = ',')]
    algos: Vec<String>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TheoryArgs {
    /// Step size to check; omit to use the analysis' schedule.
    #[arg(long)]
    eta: Option<f64>,
    /// Proximal coefficient.
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    /// Local epochs E.
    #[arg(long)]
    epochs: usize,
    /// Communication rounds K.
    #[arg(long)]
    rounds: usize,
    /// Smoothness estimate L.
    #[arg(long)]
    lsmooth: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Theory(args) => cmd_theory(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(
    path: &std::path::Path,
    seed: Option<u64>,
    algo: Option<&str>,
    out: Option<PathBuf>,
    threads: Option<usize>,
) -> Result<ExperimentConfig, fedeq_core::Error> {
    let mut config = ExperimentConfig::from_file(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(algo) = algo {
        config.hp.algorithm = algo.parse()?;
    }
    if let Some(out) = out {
        config.out_dir = Some(out);
    }
    if let Some(threads) = threads {
        config.threads = threads;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_run(args: RunArgs) -> Result<(), fedeq_core::Error> {
    let config = load_config(
        &args.config,
        args.seed,
        args.algo.as_deref(),
        args.out,
        args.threads,
    )?;
    let summary = run_experiment(&config)?;
    print_summary(&summary);
    if let Some(dir) = &config.out_dir {
        println!(
            "wrote {}",
            dir.join(format!("run_{}_seed{}.csv", summary.algo, summary.seed))
                .display()
        );
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), fedeq_core::Error> {
    let mut config = load_config(&args.config, None, None, args.out, None)?;
    if config.out_dir.is_none() {
        config.out_dir = Some(PathBuf::from("results"));
    }
    let algorithms: Vec<Algorithm> = if args.algos.is_empty() {
        Algorithm::ALL.to_vec()
    } else {
        args.algos
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_, _>>()?
    };
    let seeds = if args.seeds.is_empty() {
        vec![config.seed]
    } else {
        args.seeds.clone()
    };
    let summaries = run_sweep(&config, &algorithms, &seeds)?;
    for summary in &summaries {
        print_summary(summary);
    }
    if let Some(dir) = &config.out_dir {
        println!("wrote {}", dir.join("sweep_summary.csv").display());
    }
    Ok(())
}

fn cmd_theory(args: TheoryArgs) -> Result<(), fedeq_core::Error> {
    let schedule = theorem_eta(args.epochs, args.rounds, args.lsmooth)?;
    let eta = args.eta.unwrap_or(schedule);
    let report = validate_theorem_conditions(eta, args.mu, args.epochs, args.rounds, args.lsmooth)?;

    println!("configuration: eta={eta} mu={} E={} K={} L={}", args.mu, args.epochs, args.rounds, args.lsmooth);
    println!("schedule eta 1/(4E*sqrt(3LK)) = {schedule:.9e}");
    println!("zeta = {:.9e}", report.zeta);
    println!("conditions:");
    for c in &report.conditions {
        let status = if c.satisfied { "ok " } else { "FAIL" };
        println!("  [{status}] {:<45} lhs={:.6e} rhs={:.6e}", c.name, c.lhs, c.rhs);
    }
    let k = report.pk.len();
    let shown = k.min(5);
    println!("round-sampling distribution P(k), K = {k}:");
    for (i, p) in report.pk.iter().take(shown).enumerate() {
        println!("  P({i}) = {p:.9e}");
    }
    if k > shown {
        println!("  ...");
        println!("  P({}) = {:.9e}", k - 1, report.pk[k - 1]);
    }
    let sum: f64 = report.pk.iter().sum();
    println!("sum P(k) = {sum:.12}");
    println!(
        "verdict: {}",
        if report.all_satisfied() {
            "all conditions satisfied"
        } else {
            "some conditions violated"
        }
    );
    Ok(())
}

fn print_summary(summary: &RunSummary) {
    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into());
    println!(
        "algo={} seed={} rounds={} final_acc={:.6} cd_final={} sigma_final={} nmi={} runtime={:.2}s",
        summary.algo,
        summary.seed,
        summary.records.len(),
        summary.final_global_acc,
        fmt_opt(summary.mean_cd_final),
        fmt_opt(summary.mean_sigma_final),
        fmt_opt(summary.mean_nmi),
        summary.total_runtime_s,
    );
}
