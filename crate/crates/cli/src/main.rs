use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cascade_core::experiments::{
    run_bayes_scaling, run_concentration, run_minimax_scaling, run_transition, simulate, CampaignOutput, Estimator,
    ExperimentConfig,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "cascade", version, about = "Cascade source estimation campaigns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bayes threshold rule, stopping time plus error against n.
    BayesScaling(Flags),
    /// MSPRT on worst-case sources, stopping time against n.
    MinimaxScaling(Flags),
    /// Mean conditional error over time with stopping disabled.
    Transition(Flags),
    /// Frequency of large deviations of the posterior normalizer.
    Concentration(Flags),
    /// Dump every signal of a single trace plus both estimates.
    Simulate(Flags),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Plan {
    Uniform,
    Klevel,
}

#[derive(Args)]
struct Flags {
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `tree:k` or `lattice:l`.
    #[arg(long)]
    graph: Option<String>,
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    alpha: Option<f64>,
    /// `bernoulli:q0,q1`, `gaussian:mu0,mu1,sigma` or `diagnostic:p,eps`.
    #[arg(long)]
    channel: Option<String>,
    #[arg(long, value_enum)]
    plan: Option<Plan>,
    /// Level of the K-level plan.
    #[arg(long)]
    k: Option<u32>,
    /// Conditional-error threshold of the Bayes rule.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon_factor: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    /// Source vertex for `simulate`.
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    graph: Option<String>,
    n: Option<Vec<usize>>,
    alpha: Option<f64>,
    channel: Option<String>,
    plan: Option<Plan>,
    k: Option<u32>,
    threshold: Option<f64>,
    trials: Option<u64>,
    seed: Option<u64>,
    horizon_factor: Option<f64>,
    epsilons: Option<Vec<f64>>,
    source: Option<String>,
    workers: Option<usize>,
    out: Option<PathBuf>,
    format: Option<Format>,
}

fn load_file(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

struct Resolved {
    config: ExperimentConfig,
    out: Option<PathBuf>,
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Campaign {
    BayesScaling,
    MinimaxScaling,
    Transition,
    Concentration,
    Simulate,
}

fn resolve(flags: Flags, campaign: Campaign) -> Result<Resolved> {
    let file = match &flags.config {
        Some(p) => load_file(p)?,
        None => FileConfig::default(),
    };
    let mut config = ExperimentConfig::default();
    if let Some(g) = flags.graph.or(file.graph) {
        config.graph = g.parse().with_context(|| format!("bad --graph {g:?}"))?;
    }
    if let Some(c) = flags.channel.or(file.channel) {
        config.channel = c.parse().with_context(|| format!("bad --channel {c:?}"))?;
    }
    if let Some(n) = flags.n.or(file.n) {
        config.n = n;
    }
    if let Some(a) = flags.alpha.or(file.alpha) {
        config.alpha = a;
    }
    if let Some(t) = flags.trials.or(file.trials) {
        config.trials = t;
    }
    if let Some(s) = flags.seed.or(file.seed) {
        config.seed = s;
    }
    if let Some(h) = flags.horizon_factor.or(file.horizon_factor) {
        config.horizon_factor = h;
    }
    if let Some(t) = flags.threshold.or(file.threshold) {
        config.threshold = t;
    }
    if let Some(e) = flags.epsilons.or(file.epsilons) {
        config.epsilons = e;
    }
    config.k_level = flags.k.or(file.k);
    config.workers = flags.workers.or(file.workers);
    if let Some(s) = flags.source.or(file.source) {
        config.source = Some(s.parse().with_context(|| format!("bad --source {s:?}"))?);
    }
    let plan = flags.plan.or(file.plan);
    let uses_plan = matches!(campaign, Campaign::MinimaxScaling | Campaign::Simulate);
    config.estimator = match (uses_plan, plan) {
        (false, Some(_)) => bail!("--plan only applies to minimax-scaling and simulate"),
        (false, None) => Estimator::Bayes,
        (_, Some(Plan::Uniform)) => Estimator::MsprtUniform,
        (_, Some(Plan::Klevel)) => Estimator::MsprtKlevel,
        (_, None) => Estimator::default_msprt(config.graph),
    };
    config.validate()?;
    Ok(Resolved { config, out: flags.out.or(file.out), format: flags.format.or(file.format).unwrap_or(Format::Csv) })
}

fn write_output(output: &CampaignOutput, out: Option<&Path>, format: Format) -> Result<()> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut sink = BufWriter::new(sink);
    match format {
        Format::Csv => output.write_csv(&mut sink)?,
        Format::Jsonl => output.write_jsonl(&mut sink)?,
    }
    sink.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let (campaign, flags) = match cli.command {
        Command::BayesScaling(f) => (Campaign::BayesScaling, f),
        Command::MinimaxScaling(f) => (Campaign::MinimaxScaling, f),
        Command::Transition(f) => (Campaign::Transition, f),
        Command::Concentration(f) => (Campaign::Concentration, f),
        Command::Simulate(f) => (Campaign::Simulate, f),
    };
    let resolved = resolve(flags, campaign)?;
    let config = &resolved.config;
    let output = match campaign {
        Campaign::BayesScaling => run_bayes_scaling(config),
        Campaign::MinimaxScaling => run_minimax_scaling(config),
        Campaign::Transition => run_transition(config),
        Campaign::Concentration => run_concentration(config),
        Campaign::Simulate => simulate(config),
    }?;
    write_output(&output, resolved.out.as_deref(), resolved.format)?;
    let mut stderr = io::stderr().lock();
    for check in &output.checks {
        writeln!(stderr, "{} {}: {}", if check.passed { "PASS" } else { "FAIL" }, check.name, check.detail)?;
    }
    Ok(output.all_passed())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
