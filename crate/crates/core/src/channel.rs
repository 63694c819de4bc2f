//! Observation channels: the pair `(Q0, Q1)` of signal laws for unaffected
//! and affected vertices.
//!
//! Estimators only see a channel through [`Channel::sample`],
//! [`Channel::log_lr`], [`Channel::constants`] and [`Channel::rate_function`].
//! Every information constant is an expectation of a function of the
//! log-likelihood ratio `L = log dQ1/dQ0`, evaluated exactly for the discrete
//! channels and by quadrature for the Gaussian one.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_core::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::numeric::{golden_section_max, integrate, normal_pdf};

const QUAD_PANELS: usize = 160;
const QUAD_RTOL: f64 = 1e-10;
const GOLDEN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("invalid channel: {0}")]
    Invalid(String),
    #[error("observation {observation} is outside the support of {channel}")]
    OutsideSupport { observation: String, channel: String },
    #[error("{0} is not finite for this channel")]
    NonFinite(&'static str),
    #[error("rate function needs x > 0, got {0}")]
    RateArgument(f64),
}

/// One public signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    Bit(bool),
    Real(f64),
    /// The `×` symbol of the diagnostic channel: the vertex was not tested.
    Untested,
}

impl fmt::Display for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observation::Bit(b) => write!(f, "{}", u8::from(*b)),
            Observation::Real(x) => write!(f, "{x}"),
            Observation::Untested => f.write_str("x"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Channel {
    Bernoulli { q0: f64, q1: f64 },
    Gaussian { mu0: f64, mu1: f64, sigma: f64 },
    /// Each vertex is tested with probability `p`; a test reports the true
    /// state except with probability `eps`. Untested vertices emit `×`.
    Diagnostic { p: f64, eps: f64 },
}

/// Moment and divergence constants of a channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelConstants {
    /// `E_{Q1}[dQ1/dQ0]`.
    pub beta: f64,
    /// `E_{Q0}[(dQ1/dQ0)²]`.
    pub lambda0: f64,
    /// `E_{Q1}[(dQ1/dQ0)²]`.
    pub lambda1: f64,
    /// `max(lambda0, lambda1)`.
    pub lambda: f64,
    /// Symmetrized Kullback-Leibler divergence.
    pub divergence: f64,
    /// `divergence / 2`.
    pub theta: f64,
}

impl Channel {
    pub fn bernoulli(q0: f64, q1: f64) -> Result<Self, ChannelError> {
        let c = Channel::Bernoulli { q0, q1 };
        c.validate()?;
        Ok(c)
    }

    pub fn gaussian(mu0: f64, mu1: f64, sigma: f64) -> Result<Self, ChannelError> {
        let c = Channel::Gaussian { mu0, mu1, sigma };
        c.validate()?;
        Ok(c)
    }

    pub fn diagnostic(p: f64, eps: f64) -> Result<Self, ChannelError> {
        let c = Channel::Diagnostic { p, eps };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |msg: String| Err(ChannelError::Invalid(msg));
        match *self {
            Channel::Bernoulli { q0, q1 } => {
                if !(q0 > 0.0 && q0 < 1.0 && q1 > 0.0 && q1 < 1.0) {
                    return bad(format!("bernoulli probabilities must lie in (0,1), got {q0}, {q1}"));
                }
                if q0 == q1 {
                    return bad("bernoulli q0 and q1 must differ".into());
                }
            }
            Channel::Gaussian { mu0, mu1, sigma } => {
                if !(sigma > 0.0 && sigma.is_finite() && mu0.is_finite() && mu1.is_finite()) {
                    return bad(format!("gaussian needs finite means and sigma > 0, got {mu0}, {mu1}, {sigma}"));
                }
                if mu0 == mu1 {
                    return bad("gaussian means must differ".into());
                }
            }
            Channel::Diagnostic { p, eps } => {
                if !(p > 0.0 && p <= 1.0) {
                    return bad(format!("diagnostic test probability must lie in (0,1], got {p}"));
                }
                if !(0.0..=1.0).contains(&eps) || eps == 0.5 {
                    return bad(format!("diagnostic error probability must lie in [0,1] and differ from 0.5, got {eps}"));
                }
            }
        }
        Ok(())
    }

    /// True when some observation has probability zero under exactly one of
    /// `Q0`, `Q1`, so the log-likelihood ratio can be infinite.
    pub fn is_degenerate(&self) -> bool {
        matches!(*self, Channel::Diagnostic { eps, .. } if eps == 0.0 || eps == 1.0)
    }

    /// Draws from `Q1` if `affected`, else from `Q0`.
    pub fn sample<R: RngCore + ?Sized>(&self, affected: bool, rng: &mut R) -> Observation {
        match *self {
            Channel::Bernoulli { q0, q1 } => {
                let q = if affected { q1 } else { q0 };
                Observation::Bit(rng.random::<f64>() < q)
            }
            Channel::Gaussian { mu0, mu1, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                Observation::Real(if affected { mu1 } else { mu0 } + sigma * z)
            }
            Channel::Diagnostic { p, eps } => {
                if rng.random::<f64>() < p {
                    let flipped = rng.random::<f64>() < eps;
                    Observation::Bit(affected != flipped)
                } else {
                    Observation::Untested
                }
            }
        }
    }

    fn outside(&self, y: Observation) -> ChannelError {
        ChannelError::OutsideSupport { observation: y.to_string(), channel: self.to_string() }
    }

    /// Probability masses `(q0(y), q1(y))` of a discrete channel.
    fn masses(&self, y: Observation) -> Result<(f64, f64), ChannelError> {
        match (*self, y) {
            (Channel::Bernoulli { q0, q1 }, Observation::Bit(b)) => {
                Ok(if b { (q0, q1) } else { (1.0 - q0, 1.0 - q1) })
            }
            (Channel::Diagnostic { p, eps }, Observation::Bit(b)) => {
                let (right, wrong) = (p * (1.0 - eps), p * eps);
                Ok(if b { (wrong, right) } else { (right, wrong) })
            }
            (Channel::Diagnostic { p, .. }, Observation::Untested) if p < 1.0 => Ok((1.0 - p, 1.0 - p)),
            _ => Err(self.outside(y)),
        }
    }

    /// `(log q0(y), log q1(y))`, densities for the Gaussian channel and
    /// masses otherwise. Either entry may be `-inf` for a degenerate channel.
    pub fn log_densities(&self, y: Observation) -> Result<(f64, f64), ChannelError> {
        match (*self, y) {
            (Channel::Gaussian { mu0, mu1, sigma }, Observation::Real(x)) => {
                let log_norm = -sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
                let q = |mu: f64| log_norm - 0.5 * ((x - mu) / sigma).powi(2);
                Ok((q(mu0), q(mu1)))
            }
            (Channel::Gaussian { .. }, _) => Err(self.outside(y)),
            _ => {
                let (q0, q1) = self.masses(y)?;
                if q0 == 0.0 && q1 == 0.0 {
                    return Err(self.outside(y));
                }
                Ok((q0.ln(), q1.ln()))
            }
        }
    }

    /// `log dQ1/dQ0 (y)`. Infinite only for degenerate diagnostic channels.
    pub fn log_lr(&self, y: Observation) -> Result<f64, ChannelError> {
        match (*self, y) {
            (Channel::Gaussian { mu0, mu1, sigma }, Observation::Real(x)) => {
                Ok((mu1 - mu0) * (x - 0.5 * (mu0 + mu1)) / (sigma * sigma))
            }
            (_, Observation::Untested) => {
                self.masses(y)?;
                Ok(0.0)
            }
            _ => {
                let (l0, l1) = self.log_densities(y)?;
                Ok(l1 - l0)
            }
        }
    }

    /// Support points of a discrete channel with their masses `(y, q0, q1)`.
    fn atoms(&self) -> Vec<(Observation, f64, f64)> {
        let points: &[Observation] = match self {
            Channel::Bernoulli { .. } => &[Observation::Bit(false), Observation::Bit(true)],
            Channel::Diagnostic { .. } => &[Observation::Bit(false), Observation::Bit(true), Observation::Untested],
            Channel::Gaussian { .. } => &[],
        };
        points
            .iter()
            .filter_map(|&y| self.masses(y).ok().map(|(q0, q1)| (y, q0, q1)))
            .filter(|&(_, q0, q1)| q0 > 0.0 || q1 > 0.0)
            .collect()
    }

    /// `E[g(L)]` with `L = log dQ1/dQ0 (Y)` and `Y ~ Q1` if `affected`, else
    /// `Y ~ Q0`.
    pub fn expect_log_lr<G: Fn(f64) -> f64>(&self, affected: bool, g: G) -> f64 {
        match *self {
            Channel::Gaussian { mu0, mu1, sigma } => {
                // L is normal with mean ±a/2 and standard deviation |b|.
                let b = (mu1 - mu0) / sigma;
                let a = b * b;
                let mean = if affected { a / 2.0 } else { -a / 2.0 };
                let integrand = |z: f64| g(mean + b * z) * normal_pdf(z);
                let coarse = integrate(integrand, -40.0, 40.0, QUAD_PANELS, f64::INFINITY);
                let tol = QUAD_RTOL * coarse.abs().max(f64::MIN_POSITIVE);
                integrate(integrand, -40.0, 40.0, QUAD_PANELS, tol)
            }
            _ => self
                .atoms()
                .into_iter()
                .map(|(_, q0, q1)| {
                    let mass = if affected { q1 } else { q0 };
                    if mass == 0.0 {
                        0.0
                    } else {
                        mass * g(q1.ln() - q0.ln())
                    }
                })
                .sum(),
        }
    }

    pub fn constants(&self) -> Result<ChannelConstants, ChannelError> {
        self.validate()?;
        let beta = self.expect_log_lr(true, f64::exp);
        let lambda0 = self.expect_log_lr(false, |l| (2.0 * l).exp());
        let lambda1 = self.expect_log_lr(true, |l| (2.0 * l).exp());
        let divergence = self.expect_log_lr(true, |l| l) - self.expect_log_lr(false, |l| l);
        if !divergence.is_finite() {
            return Err(ChannelError::NonFinite("symmetrized divergence"));
        }
        if !(beta.is_finite() && lambda0.is_finite() && lambda1.is_finite()) {
            return Err(ChannelError::NonFinite("likelihood-ratio moment"));
        }
        Ok(ChannelConstants {
            beta,
            lambda0,
            lambda1,
            lambda: lambda0.max(lambda1),
            divergence,
            theta: divergence / 2.0,
        })
    }

    /// `log E[(dQ0/dQ1)(A)^λ] + log E[(dQ1/dQ0)(B)^λ]`, `A ~ Q1`, `B ~ Q0`.
    pub fn log_pair_moment(&self, lambda: f64) -> f64 {
        let a = self.expect_log_lr(true, |l| (-lambda * l).exp());
        let b = self.expect_log_lr(false, |l| (lambda * l).exp());
        a.ln() + b.ln()
    }

    /// `I(x) = sup_{λ∈[0,1]} -λ(D - x) - log M(λ)`, the Chernoff exponent of a
    /// lower deviation of pair sums of log-likelihood ratios.
    pub fn rate_function(&self, x: f64) -> Result<f64, ChannelError> {
        if !(x > 0.0) {
            return Err(ChannelError::RateArgument(x));
        }
        let d = self.constants()?.divergence;
        let objective = |lambda: f64| -lambda * (d - x) - self.log_pair_moment(lambda);
        let (_, best) = golden_section_max(objective, 0.0, 1.0, GOLDEN_TOL);
        Ok(best.max(0.0))
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Bernoulli { q0, q1 } => write!(f, "bernoulli:{q0},{q1}"),
            Channel::Gaussian { mu0, mu1, sigma } => write!(f, "gaussian:{mu0},{mu1},{sigma}"),
            Channel::Diagnostic { p, eps } => write!(f, "diagnostic:{p},{eps}"),
        }
    }
}

impl FromStr for Channel {
    type Err = ChannelError;

    /// Parses `bernoulli:q0,q1`, `gaussian:mu0,mu1,sigma` or `diagnostic:p,eps`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ChannelError::Invalid(format!("cannot parse channel {s:?}"));
        let (name, args) = s.trim().split_once(':').ok_or_else(bad)?;
        let args: Vec<f64> = args
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        match (name.trim(), args.as_slice()) {
            ("bernoulli", &[q0, q1]) => Channel::bernoulli(q0, q1),
            ("gaussian", &[mu0, mu1, sigma]) => Channel::gaussian(mu0, mu1, sigma),
            ("diagnostic", &[p, eps]) => Channel::diagnostic(p, eps),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Channel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Channel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}
