//! Multi-hypothesis sequential probability ratio test.
//!
//! `Z_vu(t)` is the log-likelihood ratio of "source is `v`" against "source
//! is `u`" after times `0..=t`. Candidate `v` crosses at the first `t` with
//! `Z_vu(t) >= log τ(v,u)` for every `u ≠ v`; the test stops at the first
//! crossing and returns the canonically smallest crosser.
//!
//! Two representations of `Z` are provided. [`Storage::Pairwise`] keeps the
//! full matrix and adds symmetric-difference sums over `N_v(t) \ N_u(t)` and
//! `N_u(t) \ N_v(t)`, which is quadratic in `n` and meant for small sets.
//! [`Storage::Potential`] keeps one cumulative ball sum `s_v = log X_v(t)` per
//! candidate and reads `Z_vu = s_v - s_u`; the shared part of the two balls
//! cancels in the difference, so both give the same statistic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayes::ball_increments;
use crate::cascade::{observe_values, CascadeError, CascadeTrace, ObservationRegion, RegionCache, SignalSource};
use crate::channel::{Channel, ChannelError, Observation};
use crate::graph::{ball_size, CandidateSet, GraphError, GraphKind, VertexId};

/// Slack on threshold comparisons, relative to `max(1, log τ)`, so sums of
/// identical increments that land exactly on a threshold count as crossing.
const CROSS_RTOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MsprtError {
    #[error("alpha must be a positive finite number, got {0}")]
    InvalidAlpha(f64),
    #[error("log threshold is not representable for alpha = {0}")]
    ThresholdOverflow(f64),
    #[error("K must be at least 1")]
    InvalidLevel,
    #[error("per-vertex |N_v(K)| list has {got} entries for {expected} candidates")]
    LevelSizes { expected: usize, got: usize },
    #[error("no candidate crossed its thresholds by the horizon {horizon}; best margin {best_margin}")]
    HorizonExhausted { horizon: u32, best_margin: f64 },
    #[error("the MSPRT needs finite log-likelihood ratios; observation at time {t} has none")]
    NonFiniteLlr { t: u32 },
    #[error("expected observations for time {expected}, got time {got}")]
    OutOfOrder { expected: u32, got: u32 },
    #[error("plan or region built for {got} candidates, state has {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Threshold designs selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanVariant {
    Uniform,
    Klevel,
}

impl std::fmt::Display for PlanVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PlanVariant::Uniform => "uniform",
            PlanVariant::Klevel => "klevel",
        })
    }
}

impl std::str::FromStr for PlanVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "uniform" => Ok(PlanVariant::Uniform),
            "klevel" => Ok(PlanVariant::Klevel),
            other => Err(format!("unknown plan {other:?}, expected uniform or klevel")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanKind {
    /// `τ = n²/α` for every pair.
    Uniform,
    /// `τ = 2K|N(K)|/α` for `0 < d ≤ K`, else `2n²/α`.
    KLevel { k: u32, n_k: u128 },
    /// As `KLevel` with a per-candidate `|N_v(K)|`.
    General { k: u32, n_k: Vec<u128> },
}

/// Thresholds `τ(v,u)` for one candidate set, in log space.
#[derive(Debug, Clone)]
pub struct ThresholdPlan {
    n: usize,
    alpha: f64,
    kind: PlanKind,
    /// `log τ` for pairs farther apart than K (all pairs for `Uniform`).
    log_far: f64,
    /// `log τ(v, ·)` for close pairs, per candidate.
    log_close: Vec<f64>,
    /// Candidates within distance K of each candidate, excluding itself.
    close: Vec<Vec<u32>>,
    feasibility: f64,
}

fn check_alpha(alpha: f64) -> Result<(), MsprtError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(MsprtError::InvalidAlpha(alpha));
    }
    Ok(())
}

fn finite_log(x: f64, alpha: f64) -> Result<f64, MsprtError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(MsprtError::ThresholdOverflow(alpha))
    }
}

/// `⌈(log n)^{1/ℓ}⌉` on lattices, at least 1; 1 on trees.
pub fn default_level(kind: GraphKind, n: usize) -> u32 {
    match kind {
        GraphKind::Lattice { dim } => ((n as f64).ln().powf(1.0 / f64::from(dim)).ceil() as u32).max(1),
        GraphKind::RegularTree { .. } => 1,
    }
}

impl ThresholdPlan {
    pub fn uniform(candidates: &CandidateSet, alpha: f64) -> Result<Self, MsprtError> {
        check_alpha(alpha)?;
        let n = candidates.len();
        let log_far = finite_log(2.0 * (n as f64).ln() - alpha.ln(), alpha)?;
        let mut plan = Self {
            n,
            alpha,
            kind: PlanKind::Uniform,
            log_far,
            log_close: Vec::new(),
            close: Vec::new(),
            feasibility: 0.0,
        };
        plan.feasibility = plan.compute_feasibility(candidates);
        Ok(plan)
    }

    /// K-level plan; `k = None` selects [`default_level`].
    pub fn klevel(candidates: &CandidateSet, alpha: f64, k: Option<u32>) -> Result<Self, MsprtError> {
        let k = k.unwrap_or_else(|| default_level(candidates.kind(), candidates.len()));
        if k == 0 {
            return Err(MsprtError::InvalidLevel);
        }
        let n_k = ball_size(candidates.kind(), k)?;
        Self::build(candidates, alpha, k, PlanKind::KLevel { k, n_k }, vec![n_k; candidates.len()])
    }

    /// K-level plan with `|N_v(K)|` supplied per candidate, for graphs whose
    /// balls are not all the same size.
    pub fn general(candidates: &CandidateSet, alpha: f64, k: u32, n_k: Vec<u128>) -> Result<Self, MsprtError> {
        if k == 0 {
            return Err(MsprtError::InvalidLevel);
        }
        if n_k.len() != candidates.len() {
            return Err(MsprtError::LevelSizes { expected: candidates.len(), got: n_k.len() });
        }
        let sizes = n_k.clone();
        Self::build(candidates, alpha, k, PlanKind::General { k, n_k }, sizes)
    }

    fn build(candidates: &CandidateSet, alpha: f64, k: u32, kind: PlanKind, n_k: Vec<u128>) -> Result<Self, MsprtError> {
        check_alpha(alpha)?;
        let n = candidates.len();
        let log_far = finite_log(2f64.ln() + 2.0 * (n as f64).ln() - alpha.ln(), alpha)?;
        let log_close = n_k
            .iter()
            .map(|&m| finite_log((2.0 * f64::from(k) * m as f64).ln() - alpha.ln(), alpha))
            .collect::<Result<Vec<_>, _>>()?;
        let graph = candidates.kind();
        let close = candidates
            .vertices()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let mut near = Vec::new();
                graph.for_each_in_ball(v, k, |w, d| {
                    if d > 0 {
                        if let Some(j) = candidates.index_of(w) {
                            near.push(j as u32);
                        }
                    }
                });
                near.sort_unstable();
                debug_assert!(!near.contains(&(i as u32)));
                near
            })
            .collect();
        let mut plan = Self { n, alpha, kind, log_far, log_close, close, feasibility: 0.0 };
        plan.feasibility = plan.compute_feasibility(candidates);
        Ok(plan)
    }

    pub fn make(candidates: &CandidateSet, alpha: f64, variant: PlanVariant, k: Option<u32>) -> Result<Self, MsprtError> {
        match variant {
            PlanVariant::Uniform => Self::uniform(candidates, alpha),
            PlanVariant::Klevel => Self::klevel(candidates, alpha, k),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn kind(&self) -> &PlanKind {
        &self.kind
    }

    pub fn variant(&self) -> PlanVariant {
        match self.kind {
            PlanKind::Uniform => PlanVariant::Uniform,
            _ => PlanVariant::Klevel,
        }
    }

    /// The level K, if any.
    pub fn level(&self) -> Option<u32> {
        match self.kind {
            PlanKind::Uniform => None,
            PlanKind::KLevel { k, .. } | PlanKind::General { k, .. } => Some(k),
        }
    }

    /// `max_v Σ_u d(v,u)/τ(v,u)`, which bounds the worst-case mean error.
    pub fn feasibility(&self) -> f64 {
        self.feasibility
    }

    /// `log τ(v,u)` for candidate index `v` and `d = d(v,u) > 0`.
    pub fn log_tau(&self, v: usize, d: u64) -> f64 {
        match self.level() {
            Some(k) if d <= u64::from(k) => self.log_close[v],
            _ => self.log_far,
        }
    }

    fn compute_feasibility(&self, candidates: &CandidateSet) -> f64 {
        let far = (-self.log_far).exp();
        let totals = candidates.weighted_distance_sums(&vec![1.0; self.n]);
        totals
            .iter()
            .enumerate()
            .map(|(v, &all)| {
                let mut sum = all * far;
                if let Some(list) = self.close.get(v) {
                    let close = (-self.log_close[v]).exp();
                    let vv = candidates.vertex(v);
                    for &u in list {
                        let d = vv.distance_to(candidates.vertex(u as usize)) as f64;
                        sum += d * (close - far);
                    }
                }
                sum
            })
            .fold(0.0, f64::max)
    }

    /// Per-candidate margins `min_u (s_v - s_u - log τ(v,u))` for potentials `s`.
    fn potential_margins(&self, candidates: &CandidateSet, s: &[f64]) -> Vec<f64> {
        let n = s.len();
        if n == 1 {
            return vec![f64::INFINITY];
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_unstable_by(|&a, &b| s[b].total_cmp(&s[a]));
        match self.level() {
            None => (0..n)
                .map(|v| {
                    let rival = if order[0] == v { order[1] } else { order[0] };
                    s[v] - s[rival] - self.log_far
                })
                .collect(),
            Some(k) => (0..n)
                .map(|v| {
                    let vv = candidates.vertex(v);
                    let far_rival = order
                        .iter()
                        .find(|&&u| u != v && vv.distance_to(candidates.vertex(u)) > u64::from(k));
                    let mut margin = far_rival.map_or(f64::INFINITY, |&u| s[v] - s[u] - self.log_far);
                    for &u in &self.close[v] {
                        margin = margin.min(s[v] - s[u as usize] - self.log_close[v]);
                    }
                    margin
                })
                .collect(),
        }
    }

    fn crossed(&self, margin: f64) -> bool {
        margin >= -CROSS_RTOL * self.log_far.abs().max(1.0)
    }
}

#[derive(Debug, Clone)]
pub enum Storage {
    /// Row-major `n × n` matrix of `Z_vu`.
    Pairwise(Vec<f64>),
    /// `s_v = log X_v(t)`; `Z_vu = s_v - s_u`.
    Potential(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct MsprtState<'a> {
    candidates: &'a CandidateSet,
    storage: Storage,
    next_t: u32,
    crossings: Vec<Option<u32>>,
}

impl<'a> MsprtState<'a> {
    pub fn pairwise(candidates: &'a CandidateSet) -> Self {
        let n = candidates.len();
        Self::with_storage(candidates, Storage::Pairwise(vec![0.0; n * n]))
    }

    pub fn potential(candidates: &'a CandidateSet) -> Self {
        Self::with_storage(candidates, Storage::Potential(vec![0.0; candidates.len()]))
    }

    fn with_storage(candidates: &'a CandidateSet, storage: Storage) -> Self {
        Self { candidates, storage, next_t: 0, crossings: vec![None; candidates.len()] }
    }

    /// Last time folded in, `None` before any data.
    pub fn time(&self) -> Option<u32> {
        self.next_t.checked_sub(1)
    }

    /// `Z_vu` for candidate indices `v`, `u`.
    pub fn z(&self, v: usize, u: usize) -> f64 {
        match &self.storage {
            Storage::Pairwise(m) => m[v * self.candidates.len() + u],
            Storage::Potential(s) => s[v] - s[u],
        }
    }

    /// First crossing time of each candidate, if it has crossed.
    pub fn crossings(&self) -> &[Option<u32>] {
        &self.crossings
    }

    pub fn update_llr(&mut self, channel: &Channel, region: &ObservationRegion, obs: &[Observation]) -> Result<(), MsprtError> {
        let t = region.t();
        if t != self.next_t {
            return Err(MsprtError::OutOfOrder { expected: self.next_t, got: t });
        }
        let n = self.candidates.len();
        if region.candidate_count() != n {
            return Err(MsprtError::SizeMismatch { expected: n, got: region.candidate_count() });
        }
        let lr: Vec<f64> = obs.iter().map(|&y| channel.log_lr(y)).collect::<Result<_, _>>()?;
        if lr.iter().any(|x| !x.is_finite()) {
            return Err(MsprtError::NonFiniteLlr { t });
        }
        match &mut self.storage {
            Storage::Potential(s) => {
                for (a, b) in s.iter_mut().zip(ball_increments(channel, region, obs)?) {
                    *a += b;
                }
            }
            Storage::Pairwise(m) => {
                let vertices = self.candidates.vertices();
                let radius = u64::from(t);
                for v in 0..n {
                    for &w in region.ball(v) {
                        let wv = &region.vertices()[w as usize];
                        let x = lr[w as usize];
                        for (u, uv) in vertices.iter().enumerate() {
                            if u != v && wv.distance_to(uv) > radius {
                                m[v * n + u] += x;
                                m[u * n + v] -= x;
                            }
                        }
                    }
                }
            }
        }
        self.next_t += 1;
        Ok(())
    }

    pub fn observe<S: SignalSource + ?Sized>(&mut self, channel: &Channel, source: &S, region: &ObservationRegion) -> Result<(), MsprtError> {
        let obs = observe_values(source, region)?;
        self.update_llr(channel, region, &obs)
    }

    /// `min_u (Z_vu - log τ(v,u))` per candidate; `+inf` when `n = 1`.
    pub fn margins(&self, plan: &ThresholdPlan) -> Vec<f64> {
        match &self.storage {
            Storage::Potential(s) => plan.potential_margins(self.candidates, s),
            Storage::Pairwise(_) => {
                let n = self.candidates.len();
                let vs = self.candidates.vertices();
                (0..n)
                    .map(|v| {
                        (0..n)
                            .filter(|&u| u != v)
                            .map(|u| self.z(v, u) - plan.log_tau(v, vs[v].distance_to(&vs[u])))
                            .fold(f64::INFINITY, f64::min)
                    })
                    .collect()
            }
        }
    }

    /// Records first crossings at the current time and returns the stopping
    /// decision `(T, v̂)` once any candidate has crossed.
    pub fn check_stop(&mut self, plan: &ThresholdPlan) -> Option<(u32, usize)> {
        let t = self.time()?;
        for (v, m) in self.margins(plan).into_iter().enumerate() {
            if self.crossings[v].is_none() && plan.crossed(m) {
                self.crossings[v] = Some(t);
            }
        }
        let first = self.crossings.iter().flatten().copied().min()?;
        let winner = self.crossings.iter().position(|&c| c == Some(first))?;
        Some((first, winner))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MsprtRunResult {
    pub stop_time: u32,
    pub estimate: VertexId,
    pub estimate_index: usize,
    pub distance_to_truth: u64,
    /// Candidates that crossed at `stop_time`, in canonical order.
    pub crossed: Vec<VertexId>,
}

fn finish(state: &MsprtState<'_>, trace: &CascadeTrace, stop_time: u32, winner: usize) -> MsprtRunResult {
    let candidates = state.candidates;
    let estimate = candidates.vertex(winner).clone();
    MsprtRunResult {
        stop_time,
        distance_to_truth: estimate.distance_to(trace.source()),
        estimate,
        estimate_index: winner,
        crossed: state
            .crossings
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == Some(stop_time))
            .map(|(i, _)| candidates.vertex(i).clone())
            .collect(),
    }
}

/// Observe, update and check until some candidate crosses.
pub fn run_msprt(trace: &CascadeTrace, cache: &RegionCache, plan: &ThresholdPlan) -> Result<MsprtRunResult, MsprtError> {
    run_msprt_plans(trace, cache, std::slice::from_ref(plan))?.pop().expect("one plan")
}

/// Runs several plans on the same trace, sharing the observations. The outer
/// error covers failures common to all plans.
pub fn run_msprt_plans(
    trace: &CascadeTrace,
    cache: &RegionCache,
    plans: &[ThresholdPlan],
) -> Result<Vec<Result<MsprtRunResult, MsprtError>>, MsprtError> {
    let candidates = cache.candidates();
    if let Some(plan) = plans.iter().find(|p| p.n() != candidates.len()) {
        return Err(MsprtError::SizeMismatch { expected: candidates.len(), got: plan.n() });
    }
    let mut out: Vec<Option<Result<MsprtRunResult, MsprtError>>> = plans.iter().map(|_| None).collect();
    let mut states: Vec<MsprtState<'_>> = plans.iter().map(|_| MsprtState::potential(candidates)).collect();
    let mut best = vec![f64::NEG_INFINITY; plans.len()];
    let horizon = trace.horizon().min(cache.horizon());
    for t in 0..=horizon {
        if out.iter().all(Option::is_some) {
            break;
        }
        let region = cache.region(t)?;
        let obs = observe_values(trace, region)?;
        for (i, plan) in plans.iter().enumerate() {
            if out[i].is_some() {
                continue;
            }
            let state = &mut states[i];
            if let Err(e) = state.update_llr(trace.channel(), region, &obs) {
                out[i] = Some(Err(e));
                continue;
            }
            best[i] = state.margins(plan).into_iter().fold(best[i], f64::max);
            if let Some((stop, winner)) = state.check_stop(plan) {
                out[i] = Some(Ok(finish(state, trace, stop, winner)));
            }
        }
    }
    Ok(out
        .into_iter()
        .zip(best)
        .map(|(r, best_margin)| r.unwrap_or(Err(MsprtError::HorizonExhausted { horizon, best_margin })))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::Posterior;
    use crate::graph::make_candidate_set;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn b19() -> Channel {
        Channel::bernoulli(0.1, 0.9).unwrap()
    }

    fn line() -> GraphKind {
        GraphKind::lattice(1).unwrap()
    }

    #[test]
    fn uniform_threshold() {
        let cs = make_candidate_set(GraphKind::tree(3).unwrap(), &VertexId::root(), 10).unwrap();
        let plan = ThresholdPlan::uniform(&cs, 0.1).unwrap();
        assert_relative_eq!(plan.log_tau(0, 1), 1000f64.ln(), epsilon = 1e-12);
        assert!(plan.feasibility() <= 0.1);
        assert!(ThresholdPlan::uniform(&cs, 0.0).is_err());
        assert!(ThresholdPlan::uniform(&cs, f64::MIN_POSITIVE / 1e10).is_ok());
    }

    #[test]
    fn klevel_thresholds() {
        let kind = GraphKind::lattice(2).unwrap();
        let cs = make_candidate_set(kind, &kind.origin(), 100).unwrap();
        let plan = ThresholdPlan::klevel(&cs, 0.5, None).unwrap();
        assert_eq!(plan.level(), Some(3));
        assert_eq!(plan.kind(), &PlanKind::KLevel { k: 3, n_k: 25 });
        assert_relative_eq!(plan.log_tau(0, 3), 300f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(plan.log_tau(0, 4), 40000f64.ln(), epsilon = 1e-12);
        assert!(plan.feasibility() <= 0.5);
    }

    #[test]
    fn klevel_covering_everything_is_still_feasible() {
        let kind = GraphKind::tree(3).unwrap();
        let cs = make_candidate_set(kind, &VertexId::root(), 22).unwrap();
        let plan = ThresholdPlan::klevel(&cs, 0.3, Some(10)).unwrap();
        assert!(plan.close.iter().all(|c| c.len() == 21));
        assert!(plan.feasibility() <= 0.3);
    }

    #[test]
    fn general_plan_matches_klevel_on_regular_graphs() {
        let kind = GraphKind::lattice(2).unwrap();
        let cs = make_candidate_set(kind, &kind.origin(), 40).unwrap();
        let a = ThresholdPlan::klevel(&cs, 0.5, Some(2)).unwrap();
        let b = ThresholdPlan::general(&cs, 0.5, 2, vec![13; 40]).unwrap();
        assert_eq!(a.feasibility(), b.feasibility());
        assert!(ThresholdPlan::general(&cs, 0.5, 2, vec![13; 3]).is_err());
    }

    #[test]
    fn single_candidate_stops_at_once() {
        let cs = make_candidate_set(line(), &line().origin(), 1).unwrap();
        let trace = CascadeTrace::new(line(), line().origin(), b19(), 0, 3).unwrap();
        let plan = ThresholdPlan::uniform(&cs, 0.01).unwrap();
        let run = run_msprt(&trace, &RegionCache::new(cs, 3), &plan).unwrap();
        assert_eq!(run.stop_time, 0);
        assert_eq!(run.estimate, line().origin());
    }

    #[test]
    fn two_singleton_balls() {
        let cs = make_candidate_set(line(), &line().origin(), 2).unwrap();
        let region = ObservationRegion::new(&cs, 0).unwrap();
        let trace = CascadeTrace::new(line(), line().origin(), b19(), 5, 0).unwrap();
        let mut state = MsprtState::pairwise(&cs);
        state.observe(&b19(), &trace, &region).unwrap();
        let lr = |v: usize| b19().log_lr(trace.signal(cs.vertex(v), 0).unwrap()).unwrap();
        assert_relative_eq!(state.z(0, 1), lr(0) - lr(1), epsilon = 1e-12);
    }

    #[test]
    fn untested_round_changes_nothing() {
        let kind = GraphKind::tree(3).unwrap();
        let cs = make_candidate_set(kind, &VertexId::root(), 10).unwrap();
        let chan = Channel::diagnostic(0.4, 0.1).unwrap();
        let region = ObservationRegion::new(&cs, 0).unwrap();
        let mut state = MsprtState::pairwise(&cs);
        state.update_llr(&chan, &region, &vec![Observation::Untested; region.len()]).unwrap();
        assert!((0..10).all(|v| (0..10).all(|u| state.z(v, u) == 0.0)));
    }

    #[test]
    fn degenerate_channel_is_rejected() {
        let cs = make_candidate_set(line(), &line().origin(), 3).unwrap();
        let chan = Channel::diagnostic(1.0, 0.0).unwrap();
        let trace = CascadeTrace::new(line(), line().origin(), chan, 0, 2).unwrap();
        let plan = ThresholdPlan::uniform(&cs, 1.0).unwrap();
        assert!(matches!(run_msprt(&trace, &RegionCache::new(cs, 2), &plan), Err(MsprtError::NonFiniteLlr { .. })));
    }

    #[test]
    fn nearly_noiseless_test_stops_at_source() {
        let kind = GraphKind::tree(3).unwrap();
        let cs = make_candidate_set(kind, &VertexId::root(), 10).unwrap();
        let chan = Channel::diagnostic(1.0, 0.01).unwrap();
        // τ = n²/α = 2.
        let plan = ThresholdPlan::uniform(&cs, 50.0).unwrap();
        let cache = RegionCache::new(cs.clone(), 2);
        for (seed, src) in cs.vertices().iter().enumerate() {
            let trace = CascadeTrace::new(kind, src.clone(), chan, seed as u64, 2).unwrap();
            let obs = trace.observe(cache.region(0).unwrap()).unwrap();
            if obs.iter().any(|(w, y)| *y != Observation::Bit(w == src)) {
                continue;
            }
            let run = run_msprt(&trace, &cache, &plan).unwrap();
            assert_eq!((run.stop_time, &run.estimate), (0, src));
        }
    }

    #[test]
    fn two_candidates_follow_the_random_walk() {
        let cs = make_candidate_set(line(), &line().origin(), 2).unwrap();
        // τ = 4/α = 9.
        let plan = ThresholdPlan::uniform(&cs, 4.0 / 9.0).unwrap();
        let cache = RegionCache::new(cs.clone(), 200);
        let (a, b) = (cs.vertex(0).clone(), cs.vertex(1).clone());
        for seed in 0..300 {
            let trace = CascadeTrace::new(line(), b.clone(), b19(), seed, 200).unwrap();
            let run = run_msprt(&trace, &cache, &plan).unwrap();
            // N_a(t) \ N_b(t) and N_b(t) \ N_a(t) are the two far ends.
            let (mut z, mut t) = (0.0, 0u32);
            loop {
                let ti = i64::from(t);
                let end_a = VertexId::lattice(&[-1 - ti]);
                let end_b = VertexId::lattice(&[ti]);
                let lr = |w: &VertexId| b19().log_lr(trace.signal(w, t).unwrap()).unwrap();
                z += lr(&end_a) - lr(&end_b);
                if z.abs() >= 9f64.ln() - 1e-9 {
                    break;
                }
                t += 1;
            }
            assert_eq!(run.stop_time, t);
            assert_eq!(run.estimate, if z > 0.0 { a.clone() } else { b.clone() });
        }
    }

    #[test]
    fn storages_agree_and_match_posterior_ratios() {
        let chan = Channel::bernoulli(0.2, 0.7).unwrap();
        for (kind, n) in [(GraphKind::tree(3).unwrap(), 15), (GraphKind::lattice(2).unwrap(), 12)] {
            let cs = make_candidate_set(kind, &kind.origin(), n).unwrap();
            let cache = RegionCache::new(cs.clone(), 3);
            let src = cs.vertex(n / 2).clone();
            let trace = CascadeTrace::new(kind, src, chan, 11, 3).unwrap();
            let mut pair = MsprtState::pairwise(&cs);
            let mut pot = MsprtState::potential(&cs);
            let mut post = Posterior::new(&cs);
            for t in 0..=3 {
                let region = cache.region(t).unwrap();
                pair.observe(&chan, &trace, region).unwrap();
                pot.observe(&chan, &trace, region).unwrap();
                post.observe(&chan, &trace, region).unwrap();
                let lp = post.log_probabilities();
                for v in 0..n {
                    for u in 0..n {
                        assert_relative_eq!(pair.z(v, u), pot.z(v, u), epsilon = 1e-9);
                        assert_relative_eq!(pair.z(v, u), lp[v] - lp[u], epsilon = 1e-9);
                        assert_relative_eq!(pair.z(v, u), -pair.z(u, v), epsilon = 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn margins_agree_between_storages() {
        let kind = GraphKind::lattice(2).unwrap();
        let cs = make_candidate_set(kind, &kind.origin(), 20).unwrap();
        let cache = RegionCache::new(cs.clone(), 2);
        let plans = [ThresholdPlan::uniform(&cs, 0.5).unwrap(), ThresholdPlan::klevel(&cs, 0.5, Some(2)).unwrap()];
        for seed in 0..5 {
            let trace = CascadeTrace::new(kind, cs.vertex(seed).clone(), b19(), seed as u64, 2).unwrap();
            let mut pair = MsprtState::pairwise(&cs);
            let mut pot = MsprtState::potential(&cs);
            for t in 0..=2 {
                pair.observe(&b19(), &trace, cache.region(t).unwrap()).unwrap();
                pot.observe(&b19(), &trace, cache.region(t).unwrap()).unwrap();
                for plan in &plans {
                    for (a, b) in pair.margins(plan).iter().zip(pot.margins(plan)) {
                        assert_relative_eq!(*a, b, epsilon = 1e-9);
                    }
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn z_is_additive_over_triples(seed in 0u64..1000, src in 0usize..10) {
            let kind = GraphKind::tree(3).unwrap();
            let cs = make_candidate_set(kind, &VertexId::root(), 10).unwrap();
            let trace = CascadeTrace::new(kind, cs.vertex(src).clone(), b19(), seed, 2).unwrap();
            let mut state = MsprtState::pairwise(&cs);
            for t in 0..=2 {
                state.observe(&b19(), &trace, &ObservationRegion::new(&cs, t).unwrap()).unwrap();
            }
            for v in 0..10 {
                for u in 0..10 {
                    for w in 0..10 {
                        prop_assert!((state.z(v, u) + state.z(u, w) - state.z(v, w)).abs() < 1e-9);
                    }
                }
            }
        }

        #[test]
        fn larger_thresholds_never_stop_earlier(seed in 0u64..1000) {
            let kind = GraphKind::tree(3).unwrap();
            let cs = make_candidate_set(kind, &VertexId::root(), 22).unwrap();
            let cache = RegionCache::new(cs.clone(), 30);
            let trace = CascadeTrace::new(kind, cs.vertex(seed as usize % 22).clone(), b19(), seed, 30).unwrap();
            let plans: Vec<ThresholdPlan> = [1.0, 0.1, 0.01, 0.001]
                .iter()
                .map(|&a| ThresholdPlan::uniform(&cs, a).unwrap())
                .collect();
            let stops: Vec<u32> = run_msprt_plans(&trace, &cache, &plans)
                .unwrap()
                .into_iter()
                .map(|r| r.unwrap().stop_time)
                .collect();
            prop_assert!(stops.windows(2).all(|w| w[0] <= w[1]), "{:?}", stops);
        }
    }
}
