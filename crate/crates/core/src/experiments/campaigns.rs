use rayon::prelude::*;

use crate::bayes::{bayes_trajectory, prior_error, run_bayes, BayesError, Posterior};
use crate::cascade::{CascadeTrace, ObservationRegion, RegionCache};
use crate::graph::{inverse_f, make_candidate_set, CandidateSet, GraphKind, VertexId};
use crate::msprt::{run_msprt, MsprtError, ThresholdPlan};
use crate::numeric::spearman;

use super::{
    campaign_horizon, in_pool, predicted_scaling, sampled_source, source_panel, summarize, trial_seed, BayesRecord,
    CampaignOutput, Check, ConcentrationRow, Estimator, ExperimentConfig, ExperimentError, MsprtRecord, RunRecord,
    ScalingRow, Table, TraceRow, TrajectoryRecord, TransitionRow,
};

const RATIO_BAND: (f64, f64) = (0.5, 3.0);
const MIN_RHO: f64 = 0.9;
const MIN_POINTS_FOR_RHO: usize = 5;

fn candidates_for(config: &ExperimentConfig, n: usize) -> Result<CandidateSet, ExperimentError> {
    let kind = config.graph;
    Ok(make_candidate_set(kind, &kind.origin(), n)?)
}

fn trace_for(config: &ExperimentConfig, source: &VertexId, seed: u64, horizon: u32) -> Result<CascadeTrace, ExperimentError> {
    Ok(CascadeTrace::new(config.graph, source.clone(), config.channel, seed, horizon)?)
}

/// Trend checks shared by both scaling campaigns: trees get monotonicity in
/// `n` and a ratio band, lattices a rank correlation with the prediction.
fn trend_checks(kind: GraphKind, label: &str, ns: &[usize], observed: &[f64], predicted: &[f64]) -> Vec<Check> {
    let mut checks = Vec::new();
    let pairs = || ns.iter().zip(observed);
    if kind.is_tree() {
        if ns.len() >= 2 {
            let monotone = observed.windows(2).all(|w| w[1] >= w[0]);
            let detail = pairs().map(|(n, o)| format!("n={n}: {o:.4}")).collect::<Vec<_>>().join(", ");
            checks.push(Check::new(format!("{label} nondecreasing in n"), monotone, detail));
        }
        for ((n, o), p) in pairs().zip(predicted) {
            let ratio = o / p;
            let ok = (RATIO_BAND.0..=RATIO_BAND.1).contains(&ratio);
            checks.push(Check::new(
                format!("{label} ratio to prediction at n={n}"),
                ok,
                format!("observed {o:.4}, predicted {p:.4}, ratio {ratio:.4}, band [{}, {}]", RATIO_BAND.0, RATIO_BAND.1),
            ));
        }
    } else if ns.len() >= MIN_POINTS_FOR_RHO {
        let rho = spearman(observed, predicted);
        checks.push(Check::new(
            format!("{label} rank correlation with prediction"),
            rho >= MIN_RHO,
            format!("spearman {rho:.4} over {} values, need >= {MIN_RHO}", ns.len()),
        ));
    }
    checks
}

fn finite_or_nan(xs: &[f64]) -> (f64, f64, f64) {
    if xs.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        summarize(xs)
    }
}

/// Bayes threshold rule with sources drawn uniformly from `V_n`.
pub fn run_bayes_scaling(config: &ExperimentConfig) -> Result<CampaignOutput, ExperimentError> {
    config.validate()?;
    let kind = config.graph;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for &n in &config.n {
        let cs = candidates_for(config, n)?;
        let horizon = campaign_horizon(config, n)?;
        let cache = RegionCache::new(cs, horizon);
        let cs = cache.candidates();
        let outcomes = in_pool(config.workers, || {
            (0..config.trials)
                .into_par_iter()
                .map(|trial| {
                    let src = sampled_source(config.seed, n, trial);
                    let seed = trial_seed(config.seed, n, src, trial);
                    let trace = trace_for(config, cs.vertex(src), seed, horizon)?;
                    let run = match run_bayes(&trace, &cache, config.threshold) {
                        Ok(r) => Some(r),
                        Err(BayesError::HorizonExhausted { trajectory, .. }) => {
                            return Ok(BayesRecord {
                                seed,
                                kind: kind.to_string(),
                                n,
                                channel: config.channel.to_string(),
                                source: cs.vertex(src).to_string(),
                                stop_time: None,
                                estimate: None,
                                distance_to_truth: None,
                                objective: None,
                                error_trajectory: trajectory,
                            })
                        }
                        Err(e) => return Err(ExperimentError::from(e)),
                    };
                    let run = run.expect("stopped run");
                    Ok(BayesRecord {
                        seed,
                        kind: kind.to_string(),
                        n,
                        channel: config.channel.to_string(),
                        source: cs.vertex(src).to_string(),
                        stop_time: Some(run.stop_time),
                        estimate: Some(run.estimate.to_string()),
                        distance_to_truth: Some(run.distance_to_truth),
                        objective: Some(run.objective()),
                        error_trajectory: run.error_trajectory,
                    })
                })
                .collect::<Result<Vec<_>, ExperimentError>>()
        })??;
        let done: Vec<&BayesRecord> = outcomes.iter().filter(|r| r.stop_time.is_some()).collect();
        let stops: Vec<f64> = done.iter().map(|r| f64::from(r.stop_time.unwrap())).collect();
        let errors: Vec<f64> = done.iter().map(|r| r.distance_to_truth.unwrap() as f64).collect();
        let objectives: Vec<f64> = done.iter().map(|r| r.objective.unwrap() as f64).collect();
        let (mean_stop, sd_stop, se_stop) = finite_or_nan(&stops);
        let (mean_error, _, se_error) = finite_or_nan(&errors);
        let (mean_objective, _, se_objective) = finite_or_nan(&objectives);
        let predicted = predicted_scaling(kind, n);
        rows.push(ScalingRow {
            n,
            r_n: cs.r_n(),
            estimator: Estimator::Bayes.to_string(),
            k_level: None,
            feasibility: None,
            horizon,
            sources: n,
            trials: done.len() as u64,
            exhausted: (outcomes.len() - done.len()) as u64,
            mean_stop,
            sd_stop,
            se_stop,
            mean_error,
            se_error,
            mean_objective,
            se_objective,
            worst_source: None,
            worst_mean_error: None,
            worst_se_error: None,
            worst_mean_stop: None,
            predicted,
            ratio: mean_objective / predicted,
            master_seed: config.seed,
            first_trial: 0,
            last_trial: config.trials - 1,
        });
        records.extend(outcomes.into_iter().map(RunRecord::Bayes));
    }
    let ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    let observed: Vec<f64> = rows.iter().map(|r| r.mean_objective).collect();
    let predicted: Vec<f64> = rows.iter().map(|r| r.predicted).collect();
    let mut checks = trend_checks(kind, "bayes objective", &ns, &observed, &predicted);
    for row in &rows {
        checks.push(Check::new(
            format!("no horizon exhaustion at n={}", row.n),
            row.exhausted == 0,
            format!("{} of {} runs hit the horizon {}", row.exhausted, config.trials, row.horizon),
        ));
    }
    Ok(CampaignOutput { config: config.clone(), table: Table::Scaling(rows), records, checks })
}

/// MSPRT on the worst-case source panel.
pub fn run_minimax_scaling(config: &ExperimentConfig) -> Result<CampaignOutput, ExperimentError> {
    config.validate()?;
    let variant = config
        .estimator
        .plan()
        .ok_or_else(|| ExperimentError::Config("minimax scaling needs an msprt estimator".into()))?;
    let kind = config.graph;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut checks = Vec::new();
    for &n in &config.n {
        let cs = candidates_for(config, n)?;
        let plan = ThresholdPlan::make(&cs, config.alpha, variant, config.k_level)?;
        let horizon = campaign_horizon(config, n)?;
        let panel = source_panel(&cs);
        let cache = RegionCache::new(cs, horizon);
        let cs = cache.candidates();
        let jobs: Vec<(usize, u64)> = panel.iter().flat_map(|&s| (0..config.trials).map(move |t| (s, t))).collect();
        let outcomes = in_pool(config.workers, || {
            jobs.par_iter()
                .map(|&(src, trial)| {
                    let seed = trial_seed(config.seed, n, src, trial);
                    let trace = trace_for(config, cs.vertex(src), seed, horizon)?;
                    let run = match run_msprt(&trace, &cache, &plan) {
                        Ok(r) => Some(r),
                        Err(MsprtError::HorizonExhausted { .. }) => None,
                        Err(e) => return Err(ExperimentError::from(e)),
                    };
                    Ok((
                        src,
                        run.as_ref().map(|r| r.estimate_index),
                        MsprtRecord {
                            seed,
                            kind: kind.to_string(),
                            n,
                            alpha: config.alpha,
                            plan_variant: variant.to_string(),
                            k: plan.level(),
                            source: cs.vertex(src).to_string(),
                            stop_time: run.as_ref().map(|r| r.stop_time),
                            estimate: run.as_ref().map(|r| r.estimate.to_string()),
                            distance_to_truth: run.as_ref().map(|r| r.distance_to_truth),
                        },
                    ))
                })
                .collect::<Result<Vec<_>, ExperimentError>>()
        })??;

        let done: Vec<&MsprtRecord> = outcomes.iter().map(|o| &o.2).filter(|r| r.stop_time.is_some()).collect();
        let stops: Vec<f64> = done.iter().map(|r| f64::from(r.stop_time.unwrap())).collect();
        let errors: Vec<f64> = done.iter().map(|r| r.distance_to_truth.unwrap() as f64).collect();
        let objectives: Vec<f64> = stops.iter().zip(&errors).map(|(a, b)| a + b).collect();
        let (mean_stop, sd_stop, se_stop) = finite_or_nan(&stops);
        let (mean_error, _, se_error) = finite_or_nan(&errors);
        let (mean_objective, _, se_objective) = finite_or_nan(&objectives);

        let mut worst: Option<(usize, f64, f64, f64)> = None;
        let mut pair_failures = Vec::new();
        for &src in &panel {
            let mine: Vec<&(usize, Option<usize>, MsprtRecord)> =
                outcomes.iter().filter(|o| o.0 == src && o.2.stop_time.is_some()).collect();
            let errs: Vec<f64> = mine.iter().map(|o| o.2.distance_to_truth.unwrap() as f64).collect();
            let st: Vec<f64> = mine.iter().map(|o| f64::from(o.2.stop_time.unwrap())).collect();
            let (me, _, se) = finite_or_nan(&errs);
            let (ms, _, _) = finite_or_nan(&st);
            let limit = config.alpha + 3.0 * se;
            checks.push(Check::new(
                format!("mean error within alpha at n={n}, source {}", cs.vertex(src)),
                me <= limit,
                format!("mean error {me:.5} (se {se:.5}) over {} runs, limit {limit:.5}", errs.len()),
            ));
            if worst.is_none_or(|w| me > w.1) {
                worst = Some((src, me, se, ms));
            }
            // P_v(estimate = u) <= 1/τ(u, v) for every u ≠ v.
            let runs = config.trials as f64;
            let mut counts = std::collections::BTreeMap::new();
            for o in &mine {
                if let Some(est) = o.1 {
                    if est != src {
                        *counts.entry(est).or_insert(0u64) += 1;
                    }
                }
            }
            for (&u, &count) in &counts {
                let d = cs.vertex(u).distance_to(cs.vertex(src));
                let p = (-plan.log_tau(u, d)).exp();
                let sigma = (p * (1.0 - p) / runs).sqrt();
                let freq = count as f64 / runs;
                if freq > p + 3.0 * sigma {
                    pair_failures.push(format!("{}->{}: {freq:.5} > {:.5}", cs.vertex(src), cs.vertex(u), p + 3.0 * sigma));
                }
            }
        }
        checks.push(Check::new(
            format!("pairwise misidentification within 1/tau at n={n}"),
            pair_failures.is_empty(),
            if pair_failures.is_empty() { "all pairs within bound".to_string() } else { pair_failures.join("; ") },
        ));
        let exhausted = (outcomes.len() - done.len()) as u64;
        checks.push(Check::new(
            format!("no horizon exhaustion at n={n}"),
            exhausted == 0,
            format!("{exhausted} of {} runs hit the horizon {horizon}", outcomes.len()),
        ));
        let predicted = predicted_scaling(kind, n);
        let worst = worst.expect("panel is non-empty");
        rows.push(ScalingRow {
            n,
            r_n: cs.r_n(),
            estimator: config.estimator.to_string(),
            k_level: plan.level(),
            feasibility: Some(plan.feasibility()),
            horizon,
            sources: panel.len(),
            trials: done.len() as u64,
            exhausted,
            mean_stop,
            sd_stop,
            se_stop,
            mean_error,
            se_error,
            mean_objective,
            se_objective,
            worst_source: Some(cs.vertex(worst.0).to_string()),
            worst_mean_error: Some(worst.1),
            worst_se_error: Some(worst.2),
            worst_mean_stop: Some(worst.3),
            predicted,
            ratio: mean_stop / predicted,
            master_seed: config.seed,
            first_trial: 0,
            last_trial: config.trials - 1,
        });
        records.extend(outcomes.into_iter().map(|o| RunRecord::Msprt(o.2)));
    }
    let ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    let observed: Vec<f64> = rows.iter().map(|r| r.mean_stop).collect();
    let predicted: Vec<f64> = rows.iter().map(|r| r.predicted).collect();
    let mut trend = trend_checks(kind, "msprt stop time", &ns, &observed, &predicted);
    trend.append(&mut checks);
    Ok(CampaignOutput { config: config.clone(), table: Table::Scaling(rows), records, checks: trend })
}

/// Horizon of the transition campaign: far enough for the predicted
/// low-error regime `3·F(4 log n/θ)`.
pub(super) fn transition_check_time(config: &ExperimentConfig, n: usize) -> Result<Option<u32>, ExperimentError> {
    match config.channel.constants() {
        Ok(c) => Ok(Some(3 * inverse_f(config.graph, 4.0 * (n as f64).ln() / c.theta)?)),
        Err(_) => Ok(None),
    }
}

/// Mean conditional error per time with stopping disabled, at the first `n`
/// of the config.
pub fn run_transition(config: &ExperimentConfig) -> Result<CampaignOutput, ExperimentError> {
    config.validate()?;
    let kind = config.graph;
    let n = config.n[0];
    let f_log_n = inverse_f(kind, (n as f64).ln())?;
    let check_time = transition_check_time(config, n)?;
    let horizon = check_time
        .unwrap_or(0)
        .max((config.horizon_factor * f64::from(f_log_n.max(1))).ceil() as u32);
    let cache = RegionCache::new(candidates_for(config, n)?, horizon);
    let cs = cache.candidates();
    let runs = in_pool(config.workers, || {
        (0..config.trials)
            .into_par_iter()
            .map(|trial| {
                let src = sampled_source(config.seed, n, trial);
                let seed = trial_seed(config.seed, n, src, trial);
                let trace = trace_for(config, cs.vertex(src), seed, horizon)?;
                let points = bayes_trajectory(&trace, &cache, horizon)?;
                Ok(TrajectoryRecord {
                    seed,
                    kind: kind.to_string(),
                    n,
                    channel: config.channel.to_string(),
                    source: cs.vertex(src).to_string(),
                    error_trajectory: points.iter().map(|p| p.conditional_error).collect(),
                    distance_trajectory: points.iter().map(|p| p.distance_to_truth).collect(),
                    log_normalizer: points.iter().map(|p| p.log_normalizer).collect(),
                })
            })
            .collect::<Result<Vec<_>, ExperimentError>>()
    })??;

    let prior = prior_error(cs);
    let mut rows = vec![TransitionRow {
        n,
        t: -1,
        trials: config.trials,
        mean_error: prior,
        se_error: 0.0,
        mean_distance: f64::NAN,
        se_distance: f64::NAN,
    }];
    for t in 0..=horizon as usize {
        let errs: Vec<f64> = runs.iter().map(|r| r.error_trajectory[t]).collect();
        let dists: Vec<f64> = runs.iter().map(|r| r.distance_trajectory[t] as f64).collect();
        let (mean_error, _, se_error) = summarize(&errs);
        let (mean_distance, _, se_distance) = summarize(&dists);
        rows.push(TransitionRow { n, t: t as i64, trials: config.trials, mean_error, se_error, mean_distance, se_distance });
    }

    let curve: Vec<f64> = rows[1..].iter().map(|r| r.mean_error).collect();
    let mut checks = Vec::new();
    let start = curve[0];
    let rel = (start - prior).abs() / prior;
    checks.push(Check::new(
        "initial error near the uniform-prior error",
        prior > 0.0 && rel <= 0.2,
        format!("mean error at t=0 {start:.4}, prior error {prior:.4}, relative gap {rel:.4}, limit 0.2"),
    ));
    let t_half = curve.iter().position(|&e| e <= 0.5 * start);
    let (lo, hi) = (f64::from(f_log_n) / 2.0, 4.0 * f64::from(f_log_n));
    checks.push(Check::new(
        "half-error time near F(log n)",
        t_half.is_some_and(|t| (lo..=hi).contains(&(t as f64))),
        format!("t_half {t_half:?}, F(log n) = {f_log_n}, window [{lo}, {hi}]"),
    ));
    if let Some(tc) = check_time {
        let at = curve[tc as usize];
        checks.push(Check::new(
            "error below 0.5 at 3F(4 log n/theta)",
            at < 0.5,
            format!("mean error {at:.5} at t = {tc}"),
        ));
        checks.push(Check::new(
            "error below 0.1 at 3F(4 log n/theta)",
            at < 0.1,
            format!("mean error {at:.5} at t = {tc}"),
        ));
    }
    let records = runs.into_iter().map(RunRecord::Trajectory).collect();
    Ok(CampaignOutput { config: config.clone(), table: Table::Transition(rows), records, checks })
}

/// Largest `t` covered by the concentration bound:
/// `F(log n/(4 log max(β, λ)))`.
pub fn concentration_horizon(config: &ExperimentConfig, n: usize) -> Result<u32, ExperimentError> {
    let c = config.channel.constants()?;
    let z = (n as f64).ln() / (4.0 * c.beta.max(c.lambda).ln());
    Ok(inverse_f(config.graph, z)?)
}

/// Frequency of `|Y(t) - n| >= εn` for every eligible `t` and every `ε`,
/// per panel source.
pub fn run_concentration(config: &ExperimentConfig) -> Result<CampaignOutput, ExperimentError> {
    config.validate()?;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for &n in &config.n {
        let t_max = concentration_horizon(config, n)?;
        let cache = RegionCache::new(candidates_for(config, n)?, t_max);
        let cs = cache.candidates();
        for src in source_panel(cs) {
            let log_y: Vec<Vec<f64>> = in_pool(config.workers, || {
                (0..config.trials)
                    .into_par_iter()
                    .map(|trial| {
                        let seed = trial_seed(config.seed, n, src, trial);
                        let trace = trace_for(config, cs.vertex(src), seed, t_max)?;
                        let mut post = Posterior::new(cs);
                        (0..=t_max)
                            .map(|t| {
                                post.observe(&config.channel, &trace, cache.region(t)?)?;
                                Ok(post.log_normalizer())
                            })
                            .collect::<Result<Vec<f64>, ExperimentError>>()
                    })
                    .collect::<Result<Vec<_>, ExperimentError>>()
            })??;
            for t in 0..=t_max {
                for &eps in &config.epsilons {
                    let exceed = log_y
                        .iter()
                        .filter(|ly| (ly[t as usize].exp() - n as f64).abs() >= eps * n as f64)
                        .count() as u64;
                    let frequency = exceed as f64 / config.trials as f64;
                    let bound = 4.0 / (eps * eps * (n as f64).sqrt());
                    let p = bound.min(1.0);
                    let sigma = (p * (1.0 - p) / config.trials as f64).sqrt();
                    let passed = frequency <= bound + 3.0 * sigma;
                    rows.push(ConcentrationRow {
                        n,
                        t,
                        epsilon: eps,
                        source: cs.vertex(src).to_string(),
                        trials: config.trials,
                        exceedances: exceed,
                        frequency,
                        bound,
                        sigma,
                        passed,
                    });
                    checks.push(Check::new(
                        format!("concentration n={n} t={t} eps={eps} source {}", cs.vertex(src)),
                        passed,
                        format!("frequency {frequency:.5}, bound {bound:.5} + 3 sigma {:.5}", 3.0 * sigma),
                    ));
                }
            }
        }
    }
    Ok(CampaignOutput { config: config.clone(), table: Table::Concentration(rows), records: Vec::new(), checks })
}

/// One trace at the first `n` of the config: every signal the estimators
/// read, plus the outcome of both estimators on it.
pub fn simulate(config: &ExperimentConfig) -> Result<CampaignOutput, ExperimentError> {
    config.validate()?;
    let kind = config.graph;
    let n = config.n[0];
    let horizon = campaign_horizon(config, n)?;
    let cs = candidates_for(config, n)?;
    let source = config.source.clone().unwrap_or_else(|| cs.v0().clone());
    let src_index = cs.index_of(&source);
    let seed = trial_seed(config.seed, n, src_index.unwrap_or(usize::MAX), 0);
    let trace = trace_for(config, &source, seed, horizon)?;
    let cache = RegionCache::new(cs, horizon);
    let cs = cache.candidates();

    let bayes = match run_bayes(&trace, &cache, config.threshold) {
        Ok(r) => Some(r),
        Err(BayesError::HorizonExhausted { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let variant = config.estimator.plan().unwrap_or_else(|| Estimator::default_msprt(kind).plan().unwrap());
    let plan = ThresholdPlan::make(cs, config.alpha, variant, config.k_level)?;
    let msprt = if config.channel.is_degenerate() {
        None
    } else {
        match run_msprt(&trace, &cache, &plan) {
            Ok(r) => Some(r),
            Err(MsprtError::HorizonExhausted { .. }) => None,
            Err(e) => return Err(e.into()),
        }
    };
    let last = bayes
        .as_ref()
        .map(|r| r.stop_time)
        .into_iter()
        .chain(msprt.as_ref().map(|r| r.stop_time))
        .max()
        .unwrap_or(horizon);
    let mut rows = Vec::new();
    for t in 0..=last {
        let region: &ObservationRegion = cache.region(t)?;
        for (w, y) in trace.observe(region)? {
            rows.push(TraceRow {
                t,
                affected: u8::from(trace.is_affected(&w, t)),
                vertex: w.to_string(),
                observation: y.to_string(),
            });
        }
    }
    let mut records = vec![RunRecord::Bayes(BayesRecord {
        seed,
        kind: kind.to_string(),
        n,
        channel: config.channel.to_string(),
        source: source.to_string(),
        stop_time: bayes.as_ref().map(|r| r.stop_time),
        estimate: bayes.as_ref().map(|r| r.estimate.to_string()),
        distance_to_truth: bayes.as_ref().map(|r| r.distance_to_truth),
        objective: bayes.as_ref().map(|r| r.objective()),
        error_trajectory: bayes.as_ref().map(|r| r.error_trajectory.clone()).unwrap_or_default(),
    })];
    if !config.channel.is_degenerate() {
        records.push(RunRecord::Msprt(MsprtRecord {
            seed,
            kind: kind.to_string(),
            n,
            alpha: config.alpha,
            plan_variant: variant.to_string(),
            k: plan.level(),
            source: source.to_string(),
            stop_time: msprt.as_ref().map(|r| r.stop_time),
            estimate: msprt.as_ref().map(|r| r.estimate.to_string()),
            distance_to_truth: msprt.as_ref().map(|r| r.distance_to_truth),
        }));
    }
    Ok(CampaignOutput { config: config.clone(), table: Table::Trace(rows), records, checks: Vec::new() })
}
