use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::channel::Channel;
use crate::graph::{GraphKind, VertexId};
use crate::msprt::PlanVariant;

use super::ExperimentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Bayes,
    MsprtUniform,
    MsprtKlevel,
}

impl Estimator {
    pub fn plan(self) -> Option<PlanVariant> {
        match self {
            Estimator::Bayes => None,
            Estimator::MsprtUniform => Some(PlanVariant::Uniform),
            Estimator::MsprtKlevel => Some(PlanVariant::Klevel),
        }
    }

    /// The MSPRT design matching the graph: uniform on trees, K-level on
    /// lattices.
    pub fn default_msprt(kind: GraphKind) -> Self {
        if kind.is_tree() {
            Estimator::MsprtUniform
        } else {
            Estimator::MsprtKlevel
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Bayes => "bayes",
            Estimator::MsprtUniform => "msprt-uniform",
            Estimator::MsprtKlevel => "msprt-klevel",
        })
    }
}

impl FromStr for Estimator {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "bayes" => Ok(Estimator::Bayes),
            "msprt-uniform" => Ok(Estimator::MsprtUniform),
            "msprt-klevel" => Ok(Estimator::MsprtKlevel),
            other => Err(ExperimentError::Config(format!("unknown estimator {other:?}"))),
        }
    }
}

/// Everything that determines a campaign. Two runs with equal configs
/// produce identical output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    #[serde(serialize_with = "display")]
    pub graph: GraphKind,
    pub channel: Channel,
    pub estimator: Estimator,
    pub n: Vec<usize>,
    pub alpha: f64,
    pub trials: u64,
    pub seed: u64,
    /// Horizon as a multiple of the predicted stopping time.
    pub horizon_factor: f64,
    /// Conditional-error threshold of the Bayes stopping rule.
    pub threshold: f64,
    /// Level of the K-level plan; `None` for the default.
    pub k_level: Option<u32>,
    /// Deviation levels of the concentration campaign.
    pub epsilons: Vec<f64>,
    /// Source of the single-trace `simulate` run; `None` for `v0`.
    #[serde(serialize_with = "display_opt")]
    pub source: Option<VertexId>,
    /// Worker threads; `None` uses the global pool. Never affects output.
    #[serde(skip)]
    pub workers: Option<usize>,
}

fn display<T: fmt::Display, S: serde::Serializer>(value: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(value)
}

fn display_opt<T: fmt::Display, S: serde::Serializer>(value: &Option<T>, s: S) -> Result<S::Ok, S::Error> {
    match value {
        Some(v) => s.collect_str(v),
        None => s.serialize_none(),
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            graph: GraphKind::RegularTree { k: 3 },
            channel: Channel::Bernoulli { q0: 0.1, q1: 0.9 },
            estimator: Estimator::Bayes,
            n: vec![100, 1000],
            alpha: 1.0,
            trials: 200,
            seed: 0,
            horizon_factor: 4.0,
            threshold: 1.0,
            k_level: None,
            epsilons: vec![0.25, 0.5],
            source: None,
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        self.channel.validate()?;
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.n.is_empty() || self.n.contains(&0) {
            return bad("n list must be non-empty with every n >= 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.horizon_factor > 0.0 && self.horizon_factor.is_finite()) {
            return bad(format!("horizon factor must be positive, got {}", self.horizon_factor));
        }
        if !(self.threshold > 0.0) {
            return bad(format!("threshold must be positive, got {}", self.threshold));
        }
        if self.k_level == Some(0) {
            return bad("K must be at least 1".into());
        }
        if self.epsilons.iter().any(|&e| !(e > 0.0)) {
            return bad("epsilons must be positive".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if let Some(src) = &self.source {
            self.graph.validate(src)?;
        }
        Ok(())
    }
}
