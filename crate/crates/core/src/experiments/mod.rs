//! Seeded Monte Carlo campaigns over both estimators.
//!
//! Every trial is a pure function of `(config, n, source index, trial index)`:
//! its cascade seed is [`trial_seed`] of those values. Trials run on a rayon
//! pool and are collected in index order before any aggregation, so output
//! bytes never depend on the number of workers.
//!
//! Summaries are written as CSV whose first line names the table schema and
//! its version; per-run records are written as JSON lines.

mod campaigns;
mod config;

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::bayes::BayesError;
use crate::cascade::CascadeError;
use crate::channel::ChannelError;
use crate::graph::{inverse_f, inverse_f1, CandidateSet, GraphError, GraphKind};
use crate::msprt::MsprtError;
use crate::rng::derive_seed;

pub use campaigns::{run_bayes_scaling, run_concentration, run_minimax_scaling, run_transition, simulate};
pub use config::{Estimator, ExperimentConfig};

/// Version of every CSV schema below. Bump on any column change.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Bayes(#[from] BayesError),
    #[error(transparent)]
    Msprt(#[from] MsprtError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
    #[error("output failed: {0}")]
    Io(#[from] io::Error),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("json output failed: {0}")]
    Json(#[from] serde_json::Error),
}

/// Outcome of one acceptance-relevant property of a campaign.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

/// One row per `n` of a scaling campaign.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub n: usize,
    pub r_n: u32,
    pub estimator: String,
    pub k_level: Option<u32>,
    pub feasibility: Option<f64>,
    pub horizon: u32,
    pub sources: usize,
    /// Runs that stopped before the horizon; statistics use only these.
    pub trials: u64,
    pub exhausted: u64,
    pub mean_stop: f64,
    pub sd_stop: f64,
    pub se_stop: f64,
    pub mean_error: f64,
    pub se_error: f64,
    pub mean_objective: f64,
    pub se_objective: f64,
    /// Per-source mean error of the worst source of the panel.
    pub worst_source: Option<String>,
    pub worst_mean_error: Option<f64>,
    pub worst_se_error: Option<f64>,
    pub worst_mean_stop: Option<f64>,
    pub predicted: f64,
    /// Mean objective (Bayes) or mean stop time (MSPRT) over `predicted`.
    pub ratio: f64,
    pub master_seed: u64,
    pub first_trial: u64,
    pub last_trial: u64,
}

/// Mean conditional error at one time of a transition campaign. `t = -1` is
/// the exact error of the uniform prior, before any data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionRow {
    pub n: usize,
    pub t: i64,
    pub trials: u64,
    pub mean_error: f64,
    pub se_error: f64,
    pub mean_distance: f64,
    pub se_distance: f64,
}

/// Frequency of `|Y(t) - n| >= εn` for one source.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationRow {
    pub n: usize,
    pub t: u32,
    pub epsilon: f64,
    pub source: String,
    pub trials: u64,
    pub exceedances: u64,
    pub frequency: f64,
    pub bound: f64,
    pub sigma: f64,
    pub passed: bool,
}

/// One observed signal of a single trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: u32,
    pub vertex: String,
    pub affected: u8,
    pub observation: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Table {
    Scaling(Vec<ScalingRow>),
    Transition(Vec<TransitionRow>),
    Concentration(Vec<ConcentrationRow>),
    Trace(Vec<TraceRow>),
}

impl Table {
    pub fn schema(&self) -> &'static str {
        match self {
            Table::Scaling(_) => "scaling",
            Table::Transition(_) => "transition",
            Table::Concentration(_) => "concentration",
            Table::Trace(_) => "trace",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BayesRecord {
    pub seed: u64,
    pub kind: String,
    pub n: usize,
    pub channel: String,
    pub source: String,
    /// `None` when the horizon ran out first.
    pub stop_time: Option<u32>,
    pub estimate: Option<String>,
    pub distance_to_truth: Option<u64>,
    pub objective: Option<u64>,
    pub error_trajectory: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MsprtRecord {
    pub seed: u64,
    pub kind: String,
    pub n: usize,
    pub alpha: f64,
    pub plan_variant: String,
    #[serde(rename = "K")]
    pub k: Option<u32>,
    pub source: String,
    pub stop_time: Option<u32>,
    pub estimate: Option<String>,
    pub distance_to_truth: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub kind: String,
    pub n: usize,
    pub channel: String,
    pub source: String,
    pub error_trajectory: Vec<f64>,
    pub distance_trajectory: Vec<u64>,
    pub log_normalizer: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum RunRecord {
    Bayes(BayesRecord),
    Msprt(MsprtRecord),
    Trajectory(TrajectoryRecord),
}

/// Everything a campaign produces.
#[derive(Debug, Clone)]
pub struct CampaignOutput {
    pub config: ExperimentConfig,
    pub table: Table,
    pub records: Vec<RunRecord>,
    pub checks: Vec<Check>,
}

impl CampaignOutput {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Summary table as CSV, preceded by `#` lines naming the schema and
    /// recording the configuration.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), ExperimentError> {
        writeln!(out, "# cascade-campaign schema={} version={}", self.table.schema(), SCHEMA_VERSION)?;
        writeln!(out, "# config {}", serde_json::to_string(&self.config)?)?;
        let mut writer = csv::Writer::from_writer(&mut out);
        match &self.table {
            Table::Scaling(rows) => rows.iter().try_for_each(|r| writer.serialize(r))?,
            Table::Transition(rows) => rows.iter().try_for_each(|r| writer.serialize(r))?,
            Table::Concentration(rows) => rows.iter().try_for_each(|r| writer.serialize(r))?,
            Table::Trace(rows) => rows.iter().try_for_each(|r| writer.serialize(r))?,
        }
        writer.flush()?;
        Ok(())
    }

    /// One JSON object per run, or per table row for campaigns without
    /// per-run records.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), ExperimentError> {
        fn lines<T: Serialize, W: Write>(items: &[T], out: &mut W) -> Result<(), ExperimentError> {
            for item in items {
                serde_json::to_writer(&mut *out, item)?;
                out.write_all(b"\n")?;
            }
            Ok(())
        }
        if !self.records.is_empty() {
            return lines(&self.records, &mut out);
        }
        match &self.table {
            Table::Scaling(rows) => lines(rows, &mut out),
            Table::Transition(rows) => lines(rows, &mut out),
            Table::Concentration(rows) => lines(rows, &mut out),
            Table::Trace(rows) => lines(rows, &mut out),
        }
    }
}

/// Cascade seed of one trial.
pub fn trial_seed(master: u64, n: usize, source: usize, trial: u64) -> u64 {
    derive_seed(master, &[n as u64, source as u64, trial])
}

const SOURCE_DRAW: u64 = 0x736f_7572_6365;

/// Uniformly drawn source index of a Bayesian trial.
pub fn sampled_source(master: u64, n: usize, trial: u64) -> usize {
    (derive_seed(master, &[SOURCE_DRAW, n as u64, trial]) % n as u64) as usize
}

/// Deterministic worst-case panel: `v0`, the canonically first vertex of
/// the outermost shell, and one vertex halfway out.
pub fn source_panel(candidates: &CandidateSet) -> Vec<usize> {
    let v0 = candidates.index_of(candidates.v0()).expect("v0 is a candidate");
    let outer = candidates.outer_radius();
    let mid = (0..candidates.len()).find(|&i| candidates.depth(i) == outer / 2).unwrap_or(v0);
    let mut panel = vec![v0, candidates.extreme_vertex(), mid];
    let mut seen = Vec::new();
    panel.retain(|i| {
        let fresh = !seen.contains(i);
        seen.push(*i);
        fresh
    });
    panel
}

/// First-order prediction of the optimal objective: `log log n/log(k-1)` on
/// trees and `(log n)^{1/(ℓ+1)}` on lattices.
pub fn predicted_scaling(kind: GraphKind, n: usize) -> f64 {
    let ln_n = (n as f64).ln();
    match kind {
        GraphKind::RegularTree { k } => ln_n.ln() / f64::from(k - 1).ln(),
        GraphKind::Lattice { dim } => ln_n.powf(1.0 / f64::from(dim + 1)),
    }
}

/// `⌈factor · max(1, F(log n), F1(log(2n²/α)/θ))⌉`: a generous multiple of
/// the time either estimator needs.
pub fn campaign_horizon(config: &ExperimentConfig, n: usize) -> Result<u32, ExperimentError> {
    let kind = config.graph;
    let ln_n = (n as f64).ln();
    let bayes = inverse_f(kind, ln_n)?;
    let msprt = match config.channel.constants() {
        Ok(c) => inverse_f1(kind, (2.0 * (n as f64).powi(2) / config.alpha).ln().max(0.0) / c.theta)?,
        Err(_) => 0,
    };
    let base = bayes.max(msprt).max(1);
    Ok((config.horizon_factor * f64::from(base)).ceil() as u32)
}

/// Mean, sample standard deviation and standard error.
pub fn summarize(xs: &[f64]) -> (f64, f64, f64) {
    let (mean, sd) = crate::numeric::mean_sd(xs);
    (mean, sd, sd / (xs.len() as f64).sqrt())
}

fn in_pool<R: Send, F: FnOnce() -> R + Send>(workers: Option<usize>, f: F) -> Result<R, ExperimentError> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| ExperimentError::Pool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}
