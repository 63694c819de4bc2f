//! Deterministic cascades observed through a noisy channel.
//!
//! A vertex `w` is affected at time `t` iff `d(w, v*) <= t`. Every
//! `(w, t)` carries an independent signal drawn from `Q1` if affected and
//! `Q0` otherwise. Signals are never stored: each is recomputed from a
//! counter-based stream keyed by `(seed, w, t)`.
//!
//! Only the region `∪_{u∈V_n} N_u(t)` is ever observed. Every other vertex is
//! unaffected under every candidate hypothesis at time `t`, so its factor in
//! the likelihood is the same for all candidates and cancels from every
//! posterior ratio and every log-likelihood ratio `Z_vu`.

use std::collections::HashMap;
use std::io;
use std::sync::OnceLock;

use thiserror::Error;

use crate::channel::{Channel, ChannelError, Observation};
use crate::graph::{ball_size, CandidateSet, GraphError, GraphKind, VertexId};
use crate::rng::CounterRng;

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("time {t} is beyond the trace horizon {horizon}")]
    BeyondHorizon { t: u32, horizon: u32 },
    #[error("no observation recorded for vertex {vertex} at time {t}")]
    MissingObservation { vertex: String, t: u32 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("trace dump failed: {0}")]
    Dump(#[from] csv::Error),
}

/// Anything that can answer "what was observed at `w` at time `t`".
pub trait SignalSource {
    fn signal(&self, w: &VertexId, t: u32) -> Result<Observation, CascadeError>;
}

/// A seeded cascade from `source`, observed through `channel` up to
/// `horizon`. Immutable; clones and concurrent queries see identical signals.
#[derive(Debug, Clone)]
pub struct CascadeTrace {
    kind: GraphKind,
    source: VertexId,
    channel: Channel,
    seed: u64,
    horizon: u32,
}

impl CascadeTrace {
    pub fn new(kind: GraphKind, source: VertexId, channel: Channel, seed: u64, horizon: u32) -> Result<Self, CascadeError> {
        kind.validate(&source)?;
        channel.validate()?;
        Ok(Self { kind, source, channel, seed, horizon })
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn source(&self) -> &VertexId {
        &self.source
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn is_affected(&self, w: &VertexId, t: u32) -> bool {
        w.distance_to(&self.source) <= u64::from(t)
    }

    /// Number of affected vertices at time `t`.
    pub fn affected_count(&self, t: u32) -> Result<u128, CascadeError> {
        Ok(ball_size(self.kind, t)?)
    }

    fn check_time(&self, t: u32) -> Result<(), CascadeError> {
        if t > self.horizon {
            return Err(CascadeError::BeyondHorizon { t, horizon: self.horizon });
        }
        Ok(())
    }

    /// Signals of every region vertex at time `region.t()`, in region order.
    pub fn observe(&self, region: &ObservationRegion) -> Result<Vec<(VertexId, Observation)>, CascadeError> {
        let values = observe_values(self, region)?;
        Ok(region.vertices().iter().cloned().zip(values).collect())
    }

    /// Writes `t,vertex,affected,observation` rows for every region vertex.
    pub fn dump_csv<W: io::Write>(&self, regions: &[&ObservationRegion], out: W) -> Result<(), CascadeError> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["t", "vertex", "affected", "observation"])?;
        for region in regions {
            let t = region.t();
            for w in region.vertices() {
                let y = self.signal(w, t)?;
                let affected = u8::from(self.is_affected(w, t));
                writer.write_record([t.to_string(), w.to_string(), affected.to_string(), y.to_string()])?;
            }
        }
        writer.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

impl SignalSource for CascadeTrace {
    fn signal(&self, w: &VertexId, t: u32) -> Result<Observation, CascadeError> {
        self.check_time(t)?;
        self.kind.validate(w)?;
        let mut rng = CounterRng::for_site(self.seed, w.stream_key(), t);
        Ok(self.channel.sample(self.is_affected(w, t), &mut rng))
    }
}

/// Fixed signal assignments, for replaying recorded data or enumerating
/// every possible observation in tests.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    signals: HashMap<(VertexId, u32), Observation>,
}

impl Snapshot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, w: VertexId, t: u32, y: Observation) {
        self.signals.insert((w, t), y);
    }
}

impl SignalSource for Snapshot {
    fn signal(&self, w: &VertexId, t: u32) -> Result<Observation, CascadeError> {
        self.signals
            .get(&(w.clone(), t))
            .copied()
            .ok_or_else(|| CascadeError::MissingObservation { vertex: w.to_string(), t })
    }
}

/// Signals of every region vertex at `region.t()`, in region order.
pub fn observe_values<S: SignalSource + ?Sized>(source: &S, region: &ObservationRegion) -> Result<Vec<Observation>, CascadeError> {
    region.vertices().iter().map(|w| source.signal(w, region.t())).collect()
}

/// `∪_{u∈V_n} N_u(t)` in canonical order, together with each candidate's
/// ball `N_u(t)` as indices into that list.
#[derive(Debug, Clone)]
pub struct ObservationRegion {
    t: u32,
    vertices: Vec<VertexId>,
    offsets: Vec<usize>,
    members: Vec<u32>,
}

impl ObservationRegion {
    pub fn new(candidates: &CandidateSet, t: u32) -> Result<Self, CascadeError> {
        let kind = candidates.kind();
        let per_ball = ball_size(kind, t)?;
        let total = per_ball
            .checked_mul(candidates.len() as u128)
            .filter(|&x| x <= u128::from(u32::MAX))
            .ok_or(GraphError::Overflow("observation region"))?;
        let mut ids: HashMap<VertexId, u32> = HashMap::new();
        let mut found: Vec<VertexId> = Vec::new();
        let mut members = Vec::with_capacity(total as usize);
        let mut offsets = Vec::with_capacity(candidates.len() + 1);
        offsets.push(0);
        for u in candidates.vertices() {
            kind.for_each_in_ball(u, t, |w, _| {
                let id = match ids.get(w) {
                    Some(&id) => id,
                    None => {
                        let id = found.len() as u32;
                        ids.insert(w.clone(), id);
                        found.push(w.clone());
                        id
                    }
                };
                members.push(id);
            });
            offsets.push(members.len());
        }
        let mut order: Vec<u32> = (0..found.len() as u32).collect();
        order.sort_unstable_by(|&a, &b| found[a as usize].cmp(&found[b as usize]));
        let mut rank = vec![0u32; found.len()];
        for (r, &id) in order.iter().enumerate() {
            rank[id as usize] = r as u32;
        }
        for m in &mut members {
            *m = rank[*m as usize];
        }
        let mut slots: Vec<Option<VertexId>> = found.into_iter().map(Some).collect();
        let vertices = order.iter().map(|&id| slots[id as usize].take().unwrap()).collect();
        Ok(Self { t, vertices, offsets, members })
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Region indices of `N_u(t)` for candidate index `u`.
    pub fn ball(&self, u: usize) -> &[u32] {
        &self.members[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn candidate_count(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Observation regions for one candidate set, built on first use and shared
/// by every trial that uses the same candidates.
#[derive(Debug)]
pub struct RegionCache {
    candidates: CandidateSet,
    layers: Vec<OnceLock<ObservationRegion>>,
}

impl RegionCache {
    pub fn new(candidates: CandidateSet, horizon: u32) -> Self {
        let layers = (0..=horizon).map(|_| OnceLock::new()).collect();
        Self { candidates, layers }
    }

    pub fn candidates(&self) -> &CandidateSet {
        &self.candidates
    }

    pub fn horizon(&self) -> u32 {
        (self.layers.len() - 1) as u32
    }

    pub fn region(&self, t: u32) -> Result<&ObservationRegion, CascadeError> {
        let slot = self
            .layers
            .get(t as usize)
            .ok_or(CascadeError::BeyondHorizon { t, horizon: self.horizon() })?;
        if let Some(region) = slot.get() {
            return Ok(region);
        }
        let region = ObservationRegion::new(&self.candidates, t)?;
        Ok(slot.get_or_init(|| region))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::make_candidate_set;

    fn b19() -> Channel {
        Channel::bernoulli(0.1, 0.9).unwrap()
    }

    #[test]
    fn horizon_is_enforced() {
        let kind = GraphKind::tree(3).unwrap();
        let trace = CascadeTrace::new(kind, VertexId::root(), b19(), 1, 0).unwrap();
        assert!(trace.signal(&VertexId::root(), 0).is_ok());
        assert!(matches!(trace.signal(&VertexId::root(), 1), Err(CascadeError::BeyondHorizon { .. })));
    }

    #[test]
    fn identical_arguments_give_identical_signals() {
        let kind = GraphKind::lattice(2).unwrap();
        let src = VertexId::lattice(&[1, 0]);
        let a = CascadeTrace::new(kind, src.clone(), b19(), 99, 5).unwrap();
        let b = CascadeTrace::new(kind, src.clone(), b19(), 99, 5).unwrap();
        let c = CascadeTrace::new(kind, src, b19(), 100, 5).unwrap();
        let mut differ = 0;
        for t in 0..=5 {
            for w in kind.enumerate_ball(&kind.origin(), 6).unwrap() {
                let y = a.signal(&w, t).unwrap();
                assert_eq!(y, b.signal(&w, t).unwrap());
                if y != c.signal(&w, t).unwrap() {
                    differ += 1;
                }
            }
        }
        // 510 signals, each differing with probability 0.18.
        assert!(differ > 40);
    }

    #[test]
    fn noiseless_channel_reveals_affected_set() {
        let kind = GraphKind::tree(3).unwrap();
        let chan = Channel::diagnostic(1.0, 0.0).unwrap();
        let src = VertexId::tree(&[1, 0]);
        let trace = CascadeTrace::new(kind, src.clone(), chan, 5, 3).unwrap();
        for t in 0..=3 {
            for w in kind.enumerate_ball(&VertexId::root(), 5).unwrap() {
                let expect = w.distance_to(&src) <= u64::from(t);
                assert_eq!(trace.signal(&w, t).unwrap(), Observation::Bit(expect));
            }
        }
    }

    #[test]
    fn affected_counts() {
        let t3 = GraphKind::tree(3).unwrap();
        let trace = CascadeTrace::new(t3, VertexId::root(), b19(), 0, 3).unwrap();
        assert_eq!(trace.affected_count(2).unwrap(), 10);
        assert_eq!(trace.affected_count(0).unwrap(), 1);
        let l2 = GraphKind::lattice(2).unwrap();
        let trace = CascadeTrace::new(l2, l2.origin(), b19(), 0, 3).unwrap();
        assert_eq!(trace.affected_count(3).unwrap(), 25);
    }

    #[test]
    fn region_is_the_union_of_candidate_balls() {
        let kind = GraphKind::lattice(2).unwrap();
        let cs = make_candidate_set(kind, &kind.origin(), 13).unwrap();
        let region = ObservationRegion::new(&cs, 1).unwrap();
        // V_n = N(2), so the union of radius-1 balls is N(3).
        assert_eq!(region.len(), 25);
        assert_eq!(region.vertices(), kind.enumerate_ball(&kind.origin(), 3).unwrap().as_slice());
        for (u, center) in cs.vertices().iter().enumerate() {
            let ball: Vec<VertexId> = region.ball(u).iter().map(|&i| region.vertices()[i as usize].clone()).collect();
            let mut sorted = ball.clone();
            sorted.sort();
            assert_eq!(sorted, kind.enumerate_ball(center, 1).unwrap());
        }
    }

    #[test]
    fn region_stays_inside_the_outer_ball() {
        let kind = GraphKind::tree(3).unwrap();
        let cs = make_candidate_set(kind, &VertexId::tree(&[2]), 30).unwrap();
        for t in 0..4 {
            let region = ObservationRegion::new(&cs, t).unwrap();
            let limit = u64::from(cs.r_n() + 1 + t);
            assert!(region.vertices().iter().all(|w| w.distance_to(cs.v0()) <= limit));
            assert!(region.vertices().windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn observation_order_does_not_matter() {
        let kind = GraphKind::tree(3).unwrap();
        let cs = make_candidate_set(kind, &VertexId::root(), 22).unwrap();
        let region = ObservationRegion::new(&cs, 2).unwrap();
        let trace = CascadeTrace::new(kind, VertexId::tree(&[0, 1]), b19(), 17, 4).unwrap();
        let forward = trace.observe(&region).unwrap();
        let mut backward: Vec<_> = region
            .vertices()
            .iter()
            .rev()
            .map(|w| (w.clone(), trace.signal(w, 2).unwrap()))
            .collect();
        backward.reverse();
        assert_eq!(forward, backward);
    }

    #[test]
    fn snapshot_reports_missing_signals() {
        let mut snap = Snapshot::new();
        snap.insert(VertexId::root(), 0, Observation::Bit(true));
        assert_eq!(snap.signal(&VertexId::root(), 0).unwrap(), Observation::Bit(true));
        assert!(matches!(snap.signal(&VertexId::root(), 1), Err(CascadeError::MissingObservation { .. })));
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let kind = GraphKind::lattice(1).unwrap();
        let cs = make_candidate_set(kind, &kind.origin(), 3).unwrap();
        let region = ObservationRegion::new(&cs, 0).unwrap();
        let trace = CascadeTrace::new(kind, kind.origin(), Channel::diagnostic(1.0, 0.0).unwrap(), 1, 0).unwrap();
        let mut buf = Vec::new();
        trace.dump_csv(&[&region], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t,vertex,affected,observation\n0,(-1),0,0\n0,(0),1,1\n0,(1),0,0\n");
    }

    #[test]
    fn cache_builds_each_layer_once() {
        let kind = GraphKind::tree(3).unwrap();
        let cs = make_candidate_set(kind, &VertexId::root(), 10).unwrap();
        let cache = RegionCache::new(cs, 2);
        let a = cache.region(1).unwrap() as *const _;
        let b = cache.region(1).unwrap() as *const _;
        assert_eq!(a, b);
        assert!(cache.region(3).is_err());
    }
}
