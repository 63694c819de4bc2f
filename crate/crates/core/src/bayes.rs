//! Posterior over candidate sources and the Bayes threshold rule.
//!
//! With a uniform prior on `V_n`, the posterior weight of candidate `u` after
//! observing times `0..=t` is proportional to
//! `X_u(t) = Π_{s≤t} Π_{w∈N_u(s)} dQ1/dQ0(y_w(s))`, and `Y(t) = Σ_u X_u(t)`.
//! Both are kept as logarithms.

use thiserror::Error;

use crate::cascade::{observe_values, CascadeError, CascadeTrace, ObservationRegion, RegionCache, SignalSource};
use crate::channel::{Channel, ChannelError, Observation};
use crate::graph::{intersection_sum, CandidateSet, GraphError, GraphKind, VertexId};
use crate::numeric::logsumexp;
use crate::rng::derive_seed;

/// Relative slack under which two expected distances count as tied.
const TIE_RTOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum BayesError {
    #[error("conditional error still above the threshold at the horizon {horizon}")]
    HorizonExhausted { horizon: u32, trajectory: Vec<f64> },
    #[error("observations at time {t} have zero likelihood under every candidate")]
    ImpossibleObservations { t: u32 },
    #[error("expected observations for time {expected}, got time {got}")]
    OutOfOrder { expected: u32, got: u32 },
    #[error("region covers {got} candidates, posterior has {expected}")]
    RegionMismatch { expected: usize, got: usize },
    #[error("threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// `log X_u(t) - log X_u(t-1)` for every candidate `u`, given the signals of
/// every region vertex at time `region.t()`.
///
/// Degenerate channels can make a hypothesis impossible; its increment is
/// then `-inf`. Signals that are impossible when unaffected force every
/// surviving hypothesis to contain them, so their common factor is dropped.
pub fn ball_increments(channel: &Channel, region: &ObservationRegion, obs: &[Observation]) -> Result<Vec<f64>, ChannelError> {
    assert_eq!(obs.len(), region.len(), "one observation per region vertex");
    let n = region.candidate_count();
    if !channel.is_degenerate() {
        let lr: Vec<f64> = obs.iter().map(|&y| channel.log_lr(y)).collect::<Result<_, _>>()?;
        return Ok((0..n).map(|u| region.ball(u).iter().map(|&w| lr[w as usize]).sum()).collect());
    }
    let mut lr = vec![0.0; obs.len()];
    let mut forbidden = vec![false; obs.len()];
    let mut required = vec![false; obs.len()];
    for (i, &y) in obs.iter().enumerate() {
        let (l0, l1) = channel.log_densities(y)?;
        if l1 == f64::NEG_INFINITY {
            forbidden[i] = true;
        } else if l0 == f64::NEG_INFINITY {
            required[i] = true;
        } else {
            lr[i] = l1 - l0;
        }
    }
    let required_total = required.iter().filter(|&&r| r).count();
    Ok((0..n)
        .map(|u| {
            let ball = region.ball(u);
            let blocked = ball.iter().any(|&w| forbidden[w as usize]);
            let covered = ball.iter().filter(|&&w| required[w as usize]).count();
            if blocked || covered < required_total {
                f64::NEG_INFINITY
            } else {
                ball.iter().map(|&w| lr[w as usize]).sum()
            }
        })
        .collect())
}

/// Log-space posterior under the uniform prior on a candidate set.
#[derive(Debug, Clone)]
pub struct Posterior<'a> {
    candidates: &'a CandidateSet,
    log_x: Vec<f64>,
    next_t: u32,
}

impl<'a> Posterior<'a> {
    /// The prior: every `log X_u = 0`.
    pub fn new(candidates: &'a CandidateSet) -> Self {
        Self { candidates, log_x: vec![0.0; candidates.len()], next_t: 0 }
    }

    pub fn candidates(&self) -> &CandidateSet {
        self.candidates
    }

    /// Last time folded in, `None` before any data.
    pub fn time(&self) -> Option<u32> {
        self.next_t.checked_sub(1)
    }

    /// `log X_u(t)` per candidate.
    pub fn log_x(&self) -> &[f64] {
        &self.log_x
    }

    /// `log Y(t)`.
    pub fn log_normalizer(&self) -> f64 {
        logsumexp(&self.log_x)
    }

    pub fn log_probabilities(&self) -> Vec<f64> {
        let norm = self.log_normalizer();
        self.log_x.iter().map(|&l| l - norm).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let norm = self.log_normalizer();
        self.log_x.iter().map(|&l| (l - norm).exp()).collect()
    }

    /// Folds in the signals of time `region.t()`, which must be the next
    /// time step.
    pub fn update(&mut self, channel: &Channel, region: &ObservationRegion, obs: &[Observation]) -> Result<(), BayesError> {
        if region.t() != self.next_t {
            return Err(BayesError::OutOfOrder { expected: self.next_t, got: region.t() });
        }
        if region.candidate_count() != self.log_x.len() {
            return Err(BayesError::RegionMismatch { expected: self.log_x.len(), got: region.candidate_count() });
        }
        let inc = ball_increments(channel, region, obs)?;
        let mut next: Vec<f64> = self.log_x.iter().zip(&inc).map(|(a, b)| a + b).collect();
        if next.iter().all(|&l| l == f64::NEG_INFINITY) {
            return Err(BayesError::ImpossibleObservations { t: region.t() });
        }
        std::mem::swap(&mut self.log_x, &mut next);
        self.next_t += 1;
        Ok(())
    }

    /// Reads the signals of `region` from `source` and folds them in.
    pub fn observe<S: SignalSource + ?Sized>(&mut self, channel: &Channel, source: &S, region: &ObservationRegion) -> Result<(), BayesError> {
        let obs = observe_values(source, region)?;
        self.update(channel, region, &obs)
    }

    /// `v̂_B`: the candidate minimizing the posterior expected distance to
    /// the source, with that expected distance. Ties go to the canonically
    /// smallest candidate.
    pub fn bayes_estimate(&self) -> (usize, f64) {
        argmin_canonical(&self.candidates.weighted_distance_sums(&self.probabilities()))
    }

    /// [`bayes_estimate`](Self::bayes_estimate) by direct quadratic summation.
    pub fn bayes_estimate_brute(&self) -> (usize, f64) {
        argmin_canonical(&self.candidates.weighted_distance_sums_brute(&self.probabilities()))
    }
}

fn argmin_canonical(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < best.1 - TIE_RTOL * best.1.abs() {
            best = (i, v);
        }
    }
    best
}

/// `min_u (1/n) Σ_w d(u, w)`: the conditional error before any data.
pub fn prior_error(candidates: &CandidateSet) -> f64 {
    let uniform = vec![1.0 / candidates.len() as f64; candidates.len()];
    argmin_canonical(&candidates.weighted_distance_sums(&uniform)).1
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BayesRunResult {
    /// `T_th`.
    pub stop_time: u32,
    /// `v̂_B(T_th)`.
    pub estimate: VertexId,
    /// Conditional expected error at `t = 0..=stop_time`.
    pub error_trajectory: Vec<f64>,
    pub distance_to_truth: u64,
}

impl BayesRunResult {
    /// Bayesian objective of one run: estimation error plus stopping time.
    pub fn objective(&self) -> u64 {
        self.distance_to_truth + u64::from(self.stop_time)
    }
}

/// One time step of a run with stopping disabled.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub t: u32,
    pub estimate: usize,
    pub conditional_error: f64,
    pub distance_to_truth: u64,
    /// `log Y(t)`.
    pub log_normalizer: f64,
}

fn check_cache(trace: &CascadeTrace, cache: &RegionCache) -> Result<(), BayesError> {
    if trace.kind() != cache.candidates().kind() {
        return Err(GraphError::InvalidKind(format!(
            "trace on {} but candidates on {}",
            trace.kind(),
            cache.candidates().kind()
        ))
        .into());
    }
    Ok(())
}

/// Runs the threshold rule: observe, update, estimate, and stop at the first
/// `t` whose conditional error is at most `threshold`.
pub fn run_bayes(trace: &CascadeTrace, cache: &RegionCache, threshold: f64) -> Result<BayesRunResult, BayesError> {
    if !(threshold > 0.0) {
        return Err(BayesError::InvalidThreshold(threshold));
    }
    check_cache(trace, cache)?;
    let candidates = cache.candidates();
    let mut posterior = Posterior::new(candidates);
    let mut trajectory = Vec::new();
    let horizon = trace.horizon().min(cache.horizon());
    for t in 0..=horizon {
        posterior.observe(trace.channel(), trace, cache.region(t)?)?;
        let (idx, err) = posterior.bayes_estimate();
        trajectory.push(err);
        if err <= threshold {
            let estimate = candidates.vertex(idx).clone();
            let distance_to_truth = estimate.distance_to(trace.source());
            return Ok(BayesRunResult { stop_time: t, estimate, error_trajectory: trajectory, distance_to_truth });
        }
    }
    Err(BayesError::HorizonExhausted { horizon, trajectory })
}

/// The estimator's state at every `t` up to the horizon, never stopping.
pub fn bayes_trajectory(trace: &CascadeTrace, cache: &RegionCache, horizon: u32) -> Result<Vec<TrajectoryPoint>, BayesError> {
    check_cache(trace, cache)?;
    let candidates = cache.candidates();
    let mut posterior = Posterior::new(candidates);
    let mut out = Vec::with_capacity(horizon as usize + 1);
    for t in 0..=horizon {
        posterior.observe(trace.channel(), trace, cache.region(t)?)?;
        let (estimate, conditional_error) = posterior.bayes_estimate();
        out.push(TrajectoryPoint {
            t,
            estimate,
            conditional_error,
            distance_to_truth: candidates.vertex(estimate).distance_to(trace.source()),
            log_normalizer: posterior.log_normalizer(),
        });
    }
    Ok(out)
}

/// Monte Carlo estimate of `E_v[X_u(t)]` with its exact value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentCheck {
    pub empirical_mean: f64,
    /// `β^{Σ_{s≤t} |N_v(s) ∩ N_u(s)|}`.
    pub predicted: f64,
    /// Exact standard deviation of one draw of `X_u(t)`.
    pub predicted_sd: f64,
    pub trials: u64,
}

/// Draws `X_u(t)` under source `v` in `trials` independent cascades.
pub fn xu_moment_check(
    kind: GraphKind,
    channel: &Channel,
    v: &VertexId,
    u: &VertexId,
    t: u32,
    trials: u64,
    seed: u64,
) -> Result<MomentCheck, BayesError> {
    let constants = channel.constants()?;
    let shared = intersection_sum(kind, v, u, t)?;
    let total = crate::graph::f(kind, t)?;
    let balls: Vec<Vec<VertexId>> = (0..=t).map(|s| kind.enumerate_ball(u, s)).collect::<Result<_, _>>()?;
    let mut sum = 0.0;
    for trial in 0..trials {
        let trace = CascadeTrace::new(kind, v.clone(), *channel, derive_seed(seed, &[trial]), t)?;
        let mut log_x = 0.0;
        for (s, ball) in balls.iter().enumerate() {
            for w in ball {
                log_x += channel.log_lr(trace.signal(w, s as u32)?)?;
            }
        }
        sum += log_x.exp();
    }
    let m = shared as f64;
    let predicted = constants.beta.powf(m);
    let second = constants.lambda1.powf(m) * constants.lambda0.powf(total as f64 - m);
    Ok(MomentCheck {
        empirical_mean: sum / trials as f64,
        predicted,
        predicted_sd: (second - predicted * predicted).max(0.0).sqrt(),
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::make_candidate_set;
    use approx::assert_relative_eq;

    fn tree3() -> GraphKind {
        GraphKind::tree(3).unwrap()
    }

    fn line() -> GraphKind {
        GraphKind::lattice(1).unwrap()
    }

    #[test]
    fn prior_is_uniform() {
        let cs = make_candidate_set(tree3(), &VertexId::root(), 10).unwrap();
        let post = Posterior::new(&cs);
        assert_eq!(post.time(), None);
        for p in post.probabilities() {
            assert_relative_eq!(p, 0.1, epsilon = 1e-15);
        }
        assert_relative_eq!(post.log_normalizer(), 10f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn untested_round_leaves_posterior_unchanged() {
        let cs = make_candidate_set(tree3(), &VertexId::root(), 10).unwrap();
        let chan = Channel::diagnostic(0.5, 0.1).unwrap();
        let region = ObservationRegion::new(&cs, 0).unwrap();
        let mut post = Posterior::new(&cs);
        post.update(&chan, &region, &vec![Observation::Untested; region.len()]).unwrap();
        assert!(post.log_x().iter().all(|&l| l == 0.0));
        assert_eq!(post.time(), Some(0));
    }

    #[test]
    fn single_candidate_stays_certain() {
        let cs = make_candidate_set(tree3(), &VertexId::root(), 1).unwrap();
        let chan = Channel::bernoulli(0.1, 0.9).unwrap();
        let trace = CascadeTrace::new(tree3(), VertexId::root(), chan, 3, 5).unwrap();
        let cache = RegionCache::new(cs.clone(), 5);
        let mut post = Posterior::new(&cs);
        for t in 0..=5 {
            post.observe(&chan, &trace, cache.region(t).unwrap()).unwrap();
            assert_eq!(post.probabilities(), vec![1.0]);
            assert_eq!(post.bayes_estimate(), (0, 0.0));
        }
        let run = run_bayes(&trace, &cache, 1.0).unwrap();
        assert_eq!(run.stop_time, 0);
        assert_eq!(run.distance_to_truth, 0);
    }

    #[test]
    fn updates_must_arrive_in_order() {
        let cs = make_candidate_set(line(), &line().origin(), 3).unwrap();
        let chan = Channel::bernoulli(0.1, 0.9).unwrap();
        let region = ObservationRegion::new(&cs, 1).unwrap();
        let mut post = Posterior::new(&cs);
        let obs = vec![Observation::Bit(true); region.len()];
        assert!(matches!(post.update(&chan, &region, &obs), Err(BayesError::OutOfOrder { .. })));
    }

    #[test]
    fn estimate_examples() {
        let v0 = line().origin();
        let cs = make_candidate_set(line(), &v0, 5).unwrap();
        let post = Posterior::new(&cs);
        let (idx, err) = post.bayes_estimate();
        assert_eq!(cs.vertex(idx), &v0);
        assert_relative_eq!(err, 1.2, epsilon = 1e-12);
        assert_relative_eq!(prior_error(&cs), 1.2, epsilon = 1e-12);

        let cs = make_candidate_set(tree3(), &VertexId::root(), 22).unwrap();
        assert_eq!(cs.vertex(Posterior::new(&cs).bayes_estimate().0), &VertexId::root());
    }

    #[test]
    fn point_mass_posterior() {
        // Noiseless full testing pins the source after one round.
        let cs = make_candidate_set(tree3(), &VertexId::root(), 10).unwrap();
        let chan = Channel::diagnostic(1.0, 0.0).unwrap();
        let src = VertexId::tree(&[2, 1]);
        let trace = CascadeTrace::new(tree3(), src.clone(), chan, 8, 3).unwrap();
        let cache = RegionCache::new(cs.clone(), 3);
        let mut post = Posterior::new(&cs);
        post.observe(&chan, &trace, cache.region(0).unwrap()).unwrap();
        let (idx, err) = post.bayes_estimate();
        assert_eq!(cs.vertex(idx), &src);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn noiseless_run_stops_immediately() {
        let cs = make_candidate_set(tree3(), &VertexId::root(), 10).unwrap();
        let chan = Channel::diagnostic(1.0, 0.0).unwrap();
        let trace = CascadeTrace::new(tree3(), VertexId::root(), chan, 1, 4).unwrap();
        let run = run_bayes(&trace, &RegionCache::new(cs, 4), 1.0).unwrap();
        assert_eq!(run.stop_time, 0);
        assert_eq!(run.estimate, VertexId::root());
        assert_eq!(run.error_trajectory.len(), 1);
    }

    #[test]
    fn horizon_exhaustion_is_reported() {
        let cs = make_candidate_set(tree3(), &VertexId::root(), 100).unwrap();
        let chan = Channel::bernoulli(0.45, 0.55).unwrap();
        let trace = CascadeTrace::new(tree3(), VertexId::root(), chan, 1, 1).unwrap();
        match run_bayes(&trace, &RegionCache::new(cs, 1), 0.01) {
            Err(BayesError::HorizonExhausted { horizon, trajectory }) => {
                assert_eq!(horizon, 1);
                assert_eq!(trajectory.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fast_estimate_matches_brute() {
        let chan = Channel::bernoulli(0.2, 0.8).unwrap();
        for (kind, v0, n) in [
            (tree3(), VertexId::root(), 40),
            (GraphKind::lattice(2).unwrap(), VertexId::lattice(&[0, 0]), 30),
        ] {
            let cs = make_candidate_set(kind, &v0, n).unwrap();
            let cache = RegionCache::new(cs.clone(), 3);
            for seed in 0..10 {
                let src = cs.vertex(seed as usize % n).clone();
                let trace = CascadeTrace::new(kind, src, chan, seed, 3).unwrap();
                let mut post = Posterior::new(&cs);
                for t in 0..=3 {
                    post.observe(&chan, &trace, cache.region(t).unwrap()).unwrap();
                    let (a, ea) = post.bayes_estimate();
                    let (b, eb) = post.bayes_estimate_brute();
                    assert_relative_eq!(ea, eb, epsilon = 1e-12, max_relative = 1e-9);
                    if a != b {
                        let sums = cs.weighted_distance_sums_brute(&post.probabilities());
                        assert_relative_eq!(sums[a], sums[b], epsilon = 1e-12, max_relative = 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn moment_check_disjoint_pair_predicts_one() {
        let chan = Channel::bernoulli(0.3, 0.7).unwrap();
        let check = xu_moment_check(line(), &chan, &VertexId::lattice(&[0]), &VertexId::lattice(&[5]), 1, 2000, 4).unwrap();
        assert_eq!(check.predicted, 1.0);
        let se = check.predicted_sd / (check.trials as f64).sqrt();
        assert!((check.empirical_mean - 1.0).abs() <= 4.0 * se);
    }

    #[test]
    fn moment_prediction_uses_intersection_sum() {
        let chan = Channel::bernoulli(0.3, 0.7).unwrap();
        let beta = chan.constants().unwrap().beta;
        let check = xu_moment_check(tree3(), &chan, &VertexId::root(), &VertexId::root(), 1, 1, 0).unwrap();
        assert_relative_eq!(check.predicted, beta.powi(5), max_relative = 1e-12);
        let check = xu_moment_check(line(), &chan, &VertexId::lattice(&[0]), &VertexId::lattice(&[2]), 1, 1, 0).unwrap();
        assert_relative_eq!(check.predicted, beta, max_relative = 1e-12);
    }
}
