//! Command-line benchmark harness.
//!
//! Exit codes: 0 success, 1 config error, 2 check failure,
//! 3 partial-run aggregation (some seeds failed, aggregate still written).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use swfqi::experiment::config::ExperimentConfig;
use swfqi::experiment::io::{
    load_mdp, read_plot_csv, save_json_value, save_mdp, save_qtable,
};
use swfqi::experiment::plot::{write_line_plot_svg, PlotOptions, PlotSeries};
use swfqi::experiment::runner::{compare_arms, run_experiment_with_workers, save_comparison};
use swfqi::experiment::verify::{verify_suite, CheckKind, VerifyConfig};
use swfqi::mdp::{generate_garnet, GarnetSpec};
use swfqi::soft_bellman::{solve_soft_q_star, Temperature};

#[derive(Parser)]
#[command(name = "swfqi", version, about = "Stationary-reweighted soft FQI benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Garnet MDP and write it as JSON.
    Generate(GenerateArgs),
    /// Solve the soft optimum of an MDP at one temperature.
    Solve(SolveArgs),
    /// Run one experiment arm from a config file.
    Run(RunArgs),
    /// Run several arms and compare them (paired by seed).
    Compare(CompareArgs),
    /// Run the diagnostics verification suite.
    Verify(VerifyArgs),
    /// Render plot-data CSV files to a static SVG.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 50)]
    n_states: usize,
    #[arg(long, default_value_t = 4)]
    n_actions: usize,
    #[arg(long, default_value_t = 5)]
    branching: usize,
    #[arg(long, default_value_t = 0.1)]
    reward_std: f64,
    #[arg(long, default_value_t = 0.99)]
    discount: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    /// MDP JSON produced by `generate`; omit to generate on the fly.
    #[arg(long)]
    mdp: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    tau: f64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 5_000_000)]
    max_iter: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output_dir (SWFQI_OUTPUT_DIR also works).
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Two or more arm configs; the first is the baseline.
    #[arg(long = "config", required = true, num_args = 1..)]
    configs: Vec<PathBuf>,
    #[arg(long, default_value_t = true)]
    paired: bool,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Optional verify config (JSON); defaults to the reference block.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Comma-separated subset of checks to run.
    #[arg(long, value_delimiter = ',')]
    checks: Option<Vec<String>>,
}

#[derive(Args)]
struct PlotArgs {
    /// Plot-data CSV files, one series each.
    #[arg(long = "input", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Series labels matching the inputs (defaults to file stems).
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = true)]
    log_y: bool,
    #[arg(long, default_value = "squared stationary error")]
    title: String,
}

fn workers_from_env() -> Option<usize> {
    std::env::var("SWFQI_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
}

fn parse_check(name: &str) -> Option<CheckKind> {
    CheckKind::all()
        .into_iter()
        .find(|k| k.name() == name || k.name().replace('_', "-") == name)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                swfqi::Error::InvalidConfig(_)
                | swfqi::Error::InvalidSpec(_)
                | swfqi::Error::Toml(_) => 1,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> swfqi::Result<ExitCode> {
    match cli.command {
        Command::Generate(args) => {
            let mdp = generate_garnet(&GarnetSpec {
                n_states: args.n_states,
                n_actions: args.n_actions,
                branching: args.branching,
                reward_std: args.reward_std,
                discount: args.discount,
                seed: args.seed,
            })?;
            save_mdp(&args.output, &mdp)?;
            println!("wrote {}", args.output.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Solve(args) => {
            let mdp = match &args.mdp {
                Some(path) => load_mdp(path)?,
                None => generate_garnet(&GarnetSpec {
                    n_states: 50,
                    n_actions: 4,
                    branching: 5,
                    reward_std: 0.1,
                    discount: 0.99,
                    seed: args.seed,
                })?,
            };
            let report =
                solve_soft_q_star(&mdp, Temperature::new(args.tau)?, args.tol, args.max_iter)?;
            save_qtable(&args.output, &report.q_star)?;
            println!(
                "solved in {} iterations, residual {:e}; wrote {}",
                report.iterations,
                report.final_residual,
                args.output.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => {
            let mut config = ExperimentConfig::load(&args.config)?;
            if let Some(dir) = args
                .output_dir
                .or_else(|| std::env::var("SWFQI_OUTPUT_DIR").ok().map(PathBuf::from))
            {
                config.output_dir = dir;
            }
            let out = run_experiment_with_workers(&config, workers_from_env())?;
            println!(
                "arm {}: {} seeds completed, {} failed, {} diverged; artifacts in {}",
                config.name,
                out.summary.seeds_completed.len(),
                out.summary.seeds_failed.len(),
                out.summary.diverged_runs,
                config.output_dir.display()
            );
            if out.partial {
                Ok(ExitCode::from(3))
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
        Command::Compare(args) => {
            let mut configs = Vec::new();
            for path in &args.configs {
                configs.push(ExperimentConfig::load(path)?);
            }
            let (report, outputs) = compare_arms(&configs, args.paired, workers_from_env())?;
            save_comparison(&args.output, &report)?;
            for cmp in &report.comparisons {
                println!(
                    "{} vs {}: final-error win rate {:.3}, max-path win rate {:.3} over {} pairs",
                    cmp.other_arm,
                    cmp.base_arm,
                    cmp.frac_final_error_below_base,
                    cmp.frac_max_path_error_below_base,
                    cmp.n_pairs
                );
            }
            println!("wrote {}", args.output.display());
            if outputs.iter().any(|o| o.partial) {
                Ok(ExitCode::from(3))
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
        Command::Verify(args) => {
            let mut config = match &args.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path)?;
                    serde_json::from_str::<VerifyConfig>(&text)?
                }
                None => VerifyConfig::default(),
            };
            if let Some(names) = &args.checks {
                let mut kinds = Vec::new();
                for name in names {
                    match parse_check(name) {
                        Some(k) => kinds.push(k),
                        None => {
                            return Err(swfqi::Error::InvalidConfig(format!(
                                "unknown check {name:?}"
                            )))
                        }
                    }
                }
                config.checks = kinds;
            }
            let report = verify_suite(&config)?;
            if let Some(path) = &args.output {
                save_json_value(path, "verify_report", &report)?;
            }
            for check in &report.checks {
                println!(
                    "{} seed {}: {} (measured {:e}, threshold {:e})",
                    check.name,
                    check.seed,
                    if check.passed { "pass" } else { "FAIL" },
                    check.measured,
                    check.threshold
                );
            }
            if let Some(w) = &report.warning {
                println!("warning: {w}");
            }
            if report.passed {
                println!("verify: all checks passed");
                Ok(ExitCode::SUCCESS)
            } else {
                println!("verify: FAILED {:?}", report.failed_names());
                Ok(ExitCode::from(2))
            }
        }
        Command::Plot(args) => {
            let mut series = Vec::new();
            for (i, input) in args.inputs.iter().enumerate() {
                let rows = read_plot_csv(input)?;
                let label = args
                    .labels
                    .as_ref()
                    .and_then(|l| l.get(i).cloned())
                    .unwrap_or_else(|| {
                        input
                            .file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_else(|| format!("series{i}"))
                    });
                series.push(PlotSeries { label, rows });
            }
            let options = PlotOptions {
                title: args.title.clone(),
                log_y: args.log_y,
                ..PlotOptions::default()
            };
            write_line_plot_svg(&args.output, &series, &options)?;
            println!("wrote {}", args.output.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
