//! Sequential estimation of the source of a deterministic network cascade
//! observed through noisy per-vertex signals.
//!
//! The cascade starts at a single vertex of an infinite `k`-regular tree or
//! `ℓ`-dimensional lattice and at time `t` has reached exactly the vertices
//! within distance `t` of the source. Every vertex emits one signal per step,
//! drawn from `Q0` before it is affected and from `Q1` afterwards. Two
//! sequential estimators are provided:
//!
//! * [`bayes`]: posterior tracking with the Bayes-optimal estimate and the
//!   threshold stopping rule `T_th`.
//! * [`msprt`]: the multi-hypothesis sequential probability ratio test with
//!   uniform or `K`-level thresholds.
//!
//! [`experiments`] drives seeded Monte Carlo campaigns over both.

// `!(x > 0.0)` is how NaN gets rejected alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod cascade;
pub mod channel;
pub mod experiments;
pub mod graph;
pub mod msprt;
pub mod numeric;
pub mod rng;

pub use bayes::{BayesRunResult, Posterior};
pub use cascade::{CascadeTrace, ObservationRegion, SignalSource};
pub use channel::{Channel, ChannelConstants, Observation};
pub use graph::{CandidateSet, GraphKind, VertexId};
pub use msprt::{MsprtRunResult, MsprtState, ThresholdPlan};
