//! `mars-games`: generate game instances, run seeded learning experiments,
//! evaluate fixed policies, and fit regret-curve slopes.
//!
//! Verbosity is controlled by the `MARS_GAMES_LOG` environment variable
//! (error, warn, info, debug, trace). Exit codes: 0 success, 1 config error,
//! 2 runtime failure.

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use mars_games::eq_solvers::EquilibriumKind;
use mars_games::game_model::{validate_spec, JointPolicy, MgSpec};
use mars_games::harness::{self, ExperimentConfig};
use mars_games::instances::{InstanceParams, Regime};
use mars_games::regret_eval;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mars-games", version, about = "Risk-sensitive Markov-game experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance and write its MgSpec JSON plus a descriptor
    /// sidecar (and the canonical biased policy for bias instances).
    Gen(GenArgs),
    /// Run a batch experiment from a JSON config.
    Run(RunArgs),
    /// Evaluate a fixed policy's per-agent gaps and certified epsilon.
    Eval(EvalArgs),
    /// Fit a log-log slope to a CSV regret column.
    Slope(SlopeArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Instance kind: bias | lower_bound | random.
    #[arg(long)]
    kind: String,
    /// Output path for the MgSpec JSON.
    #[arg(long)]
    out: PathBuf,
    /// Number of agents (bias, lower_bound).
    #[arg(long, default_value_t = 2)]
    agents: usize,
    /// Comma-separated risk parameters, one per agent (bias, random).
    #[arg(long, value_delimiter = ',')]
    betas: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    horizon: usize,
    /// Episode budget K baked into the instance (bias, lower_bound).
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    /// Most risk-sensitive agent's parameter (lower_bound).
    #[arg(long)]
    beta_star: Option<f64>,
    /// Bandit machine, 1 or 2 (lower_bound).
    #[arg(long, default_value_t = 1)]
    machine: u8,
    /// Arm-probability regime: exp | inv_h (lower_bound).
    #[arg(long, default_value = "exp")]
    regime: String,
    /// Generator seed (random).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of states (random).
    #[arg(long, default_value_t = 3)]
    states: usize,
    /// Comma-separated per-agent action counts (random).
    #[arg(long, value_delimiter = ',')]
    actions: Vec<usize>,
    /// Fraction of transition entries zeroed before normalization (random).
    #[arg(long, default_value_t = 0.0)]
    sparsity: f64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's worker count.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    policy: PathBuf,
    /// Gap kind: ne | ce | cce.
    #[arg(long)]
    kind: String,
}

#[derive(Args)]
struct SlopeArgs {
    #[arg(long)]
    csv: PathBuf,
    /// Column to fit (e.g. balanced_cum).
    #[arg(long, default_value = "balanced_cum")]
    column: String,
    /// Trailing fraction of rows used by the fit.
    #[arg(long, default_value_t = 0.5)]
    window: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("MARS_GAMES_LOG", "warn"),
    )
    .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems are config errors (exit 1); --help/--version are
            // ordinary successes.
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };

    let result = match cli.command {
        Command::Gen(args) => gen(args),
        Command::Run(args) => run(args),
        Command::Eval(args) => eval(args),
        Command::Slope(args) => slope(args),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            log::error!("{e:#}");
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

fn config_err<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Config(e.into())
}

fn runtime_err<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Runtime(e.into())
}

fn gen(args: GenArgs) -> Result<(), Failure> {
    let params = match args.kind.as_str() {
        "bias" => InstanceParams::Bias {
            num_agents: args.agents,
            betas: args.betas.clone(),
            horizon: args.horizon,
            episodes: args.episodes,
        },
        "lower_bound" => InstanceParams::LowerBound {
            beta_star: args
                .beta_star
                .ok_or_else(|| config_err(anyhow!("--beta-star is required for lower_bound")))?,
            horizon: args.horizon,
            episodes: args.episodes,
            machine: args.machine,
            regime: args.regime.parse::<Regime>().map_err(|e| config_err(anyhow!(e)))?,
            num_agents: args.agents,
        },
        "random" => {
            let actions = if args.actions.is_empty() {
                vec![2; args.betas.len().max(1)]
            } else {
                args.actions.clone()
            };
            InstanceParams::Random {
                seed: args.seed,
                states: args.states,
                horizon: args.horizon,
                action_sizes: actions,
                betas: args.betas.clone(),
                sparsity: args.sparsity,
            }
        }
        other => {
            return Err(config_err(anyhow!(
                "unknown kind {other:?} (expected bias|lower_bound|random)"
            )))
        }
    };
    let (descriptor, biased) = harness::generate(&params).map_err(config_err)?;
    std::fs::write(&args.out, descriptor.spec.to_json())
        .with_context(|| format!("writing {}", args.out.display()))
        .map_err(runtime_err)?;
    let descriptor_path = args.out.with_extension("descriptor.json");
    std::fs::write(&descriptor_path, descriptor.params_json())
        .with_context(|| format!("writing {}", descriptor_path.display()))
        .map_err(runtime_err)?;
    log::info!("wrote {} and {}", args.out.display(), descriptor_path.display());
    if let Some(policy) = biased {
        let policy_path = args.out.with_extension("biased_policy.json");
        std::fs::write(&policy_path, policy.to_json())
            .with_context(|| format!("writing {}", policy_path.display()))
            .map_err(runtime_err)?;
        log::info!("wrote {}", policy_path.display());
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg: ExperimentConfig = harness::load_config(&args.config).map_err(config_err)?;
    if let Some(out) = args.out {
        cfg.out_dir = Some(out.display().to_string());
    }
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    let summary = harness::run_experiment(&cfg).map_err(|e| match e {
        harness::HarnessError::Parse(_)
        | harness::HarnessError::Validation(_)
        | harness::HarnessError::Instance(_) => config_err(e),
        other => runtime_err(other),
    })?;
    println!("{}", summary.to_json());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let kind: EquilibriumKind = args
        .kind
        .parse()
        .map_err(|e: String| config_err(anyhow!(e)))?;
    let spec_text = std::fs::read_to_string(&args.spec)
        .with_context(|| format!("reading {}", args.spec.display()))
        .map_err(runtime_err)?;
    let spec = MgSpec::from_json(&spec_text)
        .context("parsing spec")
        .map_err(runtime_err)?;
    let report = validate_spec(&spec);
    if !report.is_empty() {
        let lines: Vec<String> = report.iter().map(|v| v.to_string()).collect();
        return Err(runtime_err(anyhow!("spec fails validation: {}", lines.join("; "))));
    }
    let policy_text = std::fs::read_to_string(&args.policy)
        .with_context(|| format!("reading {}", args.policy.display()))
        .map_err(runtime_err)?;
    let policy = JointPolicy::from_json(&policy_text)
        .context("parsing policy")
        .map_err(runtime_err)?;
    let violations = policy.validate();
    if !violations.is_empty() {
        return Err(runtime_err(anyhow!(
            "policy fails validation: {}",
            violations.join("; ")
        )));
    }

    let gaps = regret_eval::episode_gaps(&spec, &policy, kind).map_err(runtime_err)?;
    let eps = regret_eval::certify_approx(&spec, &policy, kind).map_err(runtime_err)?;
    let h = spec.horizon as f64;
    let phis: Vec<f64> = spec
        .betas
        .iter()
        .map(|&b| regret_eval::phi(h, b))
        .collect::<Result<_, _>>()
        .map_err(runtime_err)?;
    let naive: f64 = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let balanced: f64 = gaps
        .iter()
        .zip(&phis)
        .map(|(g, p)| g / p)
        .fold(f64::NEG_INFINITY, f64::max);
    let doc = serde_json::json!({
        "kind": kind.to_string(),
        "gaps": gaps,
        "naive_inc": naive,
        "balanced_inc": balanced,
        "eps": eps,
    });
    println!("{doc}");
    Ok(())
}

fn slope(args: SlopeArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.csv)
        .with_context(|| format!("reading {}", args.csv.display()))
        .map_err(runtime_err)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| runtime_err(anyhow!("empty CSV")))?;
    let columns: Vec<&str> = header.split(',').collect();
    let episode_idx = columns
        .iter()
        .position(|&c| c == "episode")
        .ok_or_else(|| runtime_err(anyhow!("no 'episode' column")))?;
    let value_idx = columns
        .iter()
        .position(|&c| c == args.column)
        .ok_or_else(|| runtime_err(anyhow!("no {:?} column in {header:?}", args.column)))?;
    let mut points = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |idx: usize| -> Result<f64> {
            fields
                .get(idx)
                .ok_or_else(|| anyhow!("row {} too short", ln + 2))?
                .parse::<f64>()
                .map_err(|e| anyhow!("row {}: {e}", ln + 2))
        };
        points.push((
            parse(episode_idx).map_err(runtime_err)?,
            parse(value_idx).map_err(runtime_err)?,
        ));
    }
    let slope = harness::fit_slope_windowed(&points, args.window).map_err(runtime_err)?;
    println!("{slope}");
    Ok(())
}
