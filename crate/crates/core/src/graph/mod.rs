//! Implicit infinite regular trees and integer lattices.
//!
//! Nothing here stores adjacency. Tree vertices are addressed by their edge
//! label path from a fixed root and lattice vertices by their coordinates, so
//! distances and neighborhoods are computed directly from the addresses.
//!
//! # Canonical vertex order
//!
//! [`VertexId`]'s `Ord` is the canonical order used everywhere a deterministic
//! choice is needed (candidate-set boundaries, argmin tie-breaks, output
//! ordering). Lattice points compare lexicographically by coordinates; tree
//! vertices compare lexicographically by label path, with a path ordered
//! before any of its extensions. This order is a stable contract.

mod candidate;
mod growth;
mod vertex;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

pub use candidate::{make_candidate_set, CandidateSet};
pub use growth::{
    ball_size, f, f1, f_vu, inverse_f, inverse_f1, inverse_f_vu, intersection_sum, sphere_size,
    GrowthTables,
};
pub use vertex::VertexId;

/// Upper bound on the number of vertices a single ball enumeration may
/// materialize.
pub const DEFAULT_BALL_CAP: u128 = 50_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("invalid graph: {0}")]
    InvalidKind(String),
    #[error("vertex {vertex} is not a valid address for {kind}")]
    InvalidVertex { vertex: String, kind: GraphKind },
    #[error("integer overflow computing {0}")]
    Overflow(&'static str),
    #[error("ball of radius {radius} has {size} vertices, above the cap of {cap}")]
    BallTooLarge { radius: u32, size: u128, cap: u128 },
    #[error("candidate set size must be at least 1")]
    EmptyCandidateSet,
    #[error("inverse of {what} did not reach {target} within {limit} steps")]
    InverseOutOfRange { what: &'static str, target: f64, limit: u32 },
    #[error("argument out of range: {0}")]
    OutOfRange(String),
}

/// The two graph families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GraphKind {
    /// Infinite `k`-regular tree, `k >= 3`.
    RegularTree { k: u32 },
    /// Infinite `dim`-dimensional integer lattice with unit L1 edges.
    Lattice { dim: u32 },
}

impl GraphKind {
    pub fn tree(k: u32) -> Result<Self, GraphError> {
        if !(3..=255).contains(&k) {
            return Err(GraphError::InvalidKind(format!(
                "tree degree must be in 3..=255, got {k}"
            )));
        }
        Ok(GraphKind::RegularTree { k })
    }

    pub fn lattice(dim: u32) -> Result<Self, GraphError> {
        if !(1..=64).contains(&dim) {
            return Err(GraphError::InvalidKind(format!(
                "lattice dimension must be in 1..=64, got {dim}"
            )));
        }
        Ok(GraphKind::Lattice { dim })
    }

    pub fn is_tree(&self) -> bool {
        matches!(self, GraphKind::RegularTree { .. })
    }

    /// The designated root of a tree, or the all-zero lattice point.
    pub fn origin(&self) -> VertexId {
        match *self {
            GraphKind::RegularTree { .. } => VertexId::root(),
            GraphKind::Lattice { dim } => VertexId::Lattice(SmallVec::from_elem(0, dim as usize)),
        }
    }

    pub fn validate(&self, v: &VertexId) -> Result<(), GraphError> {
        let ok = match (self, v) {
            (GraphKind::RegularTree { k }, VertexId::Tree(path)) => {
                path.iter().enumerate().all(|(i, &d)| {
                    let bound = if i == 0 { *k } else { *k - 1 };
                    u32::from(d) < bound
                })
            }
            (GraphKind::Lattice { dim }, VertexId::Lattice(c)) => c.len() == *dim as usize,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(GraphError::InvalidVertex { vertex: v.to_string(), kind: *self })
        }
    }

    /// Shortest-path distance, validating both addresses.
    pub fn distance(&self, u: &VertexId, v: &VertexId) -> Result<u64, GraphError> {
        self.validate(u)?;
        self.validate(v)?;
        Ok(u.distance_to(v))
    }

    /// All vertices at distance one, in canonical order.
    pub fn neighbors(&self, v: &VertexId) -> Vec<VertexId> {
        let mut out = Vec::new();
        self.for_each_in_ball(v, 1, |w, d| {
            if d == 1 {
                out.push(w.clone());
            }
        });
        out.sort();
        out
    }

    /// Calls `visit(w, d(center, w))` once for every `w` within distance
    /// `radius` of `center`. Visiting order is unspecified; no allocation
    /// happens per vertex.
    pub fn for_each_in_ball<F>(&self, center: &VertexId, radius: u32, mut visit: F)
    where
        F: FnMut(&VertexId, u32),
    {
        match (*self, center) {
            (GraphKind::RegularTree { k }, VertexId::Tree(path)) => {
                let mut cursor = VertexId::Tree(path.clone());
                tree_ball(k, &mut cursor, path, radius, &mut visit);
            }
            (GraphKind::Lattice { .. }, VertexId::Lattice(c)) => {
                let mut cursor = VertexId::Lattice(c.clone());
                lattice_ball(&mut cursor, c, 0, radius, radius, &mut visit);
            }
            _ => debug_assert!(false, "vertex encoding does not match graph kind"),
        }
    }

    /// Vertices within distance `radius` of `center`, in canonical order.
    pub fn enumerate_ball(&self, center: &VertexId, radius: u32) -> Result<Vec<VertexId>, GraphError> {
        self.enumerate_ball_capped(center, radius, DEFAULT_BALL_CAP)
    }

    pub fn enumerate_ball_capped(
        &self,
        center: &VertexId,
        radius: u32,
        cap: u128,
    ) -> Result<Vec<VertexId>, GraphError> {
        self.validate(center)?;
        let size = ball_size(*self, radius)?;
        if size > cap {
            return Err(GraphError::BallTooLarge { radius, size, cap });
        }
        let mut out = Vec::with_capacity(size as usize);
        self.for_each_in_ball(center, radius, |w, _| out.push(w.clone()));
        out.sort_unstable();
        Ok(out)
    }

    /// Vertices at distance exactly `radius` from `center`, in canonical order.
    pub fn enumerate_sphere(&self, center: &VertexId, radius: u32) -> Result<Vec<VertexId>, GraphError> {
        self.validate(center)?;
        let size = sphere_size(*self, radius)?;
        if size > DEFAULT_BALL_CAP {
            return Err(GraphError::BallTooLarge { radius, size, cap: DEFAULT_BALL_CAP });
        }
        let mut out = Vec::with_capacity(size as usize);
        self.for_each_in_ball(center, radius, |w, d| {
            if d == radius {
                out.push(w.clone());
            }
        });
        out.sort_unstable();
        Ok(out)
    }
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphKind::RegularTree { k } => write!(f, "tree:{k}"),
            GraphKind::Lattice { dim } => write!(f, "lattice:{dim}"),
        }
    }
}

impl FromStr for GraphKind {
    type Err = GraphError;

    /// Parses `tree:<k>` or `lattice:<dim>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, arg) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| GraphError::InvalidKind(format!("expected tree:<k> or lattice:<dim>, got {s:?}")))?;
        let value: u32 = arg
            .trim()
            .parse()
            .map_err(|_| GraphError::InvalidKind(format!("bad integer in {s:?}")))?;
        match name.trim() {
            "tree" => GraphKind::tree(value),
            "lattice" => GraphKind::lattice(value),
            other => Err(GraphError::InvalidKind(format!("unknown graph family {other:?}"))),
        }
    }
}

fn path_mut(v: &mut VertexId) -> &mut vertex::TreePath {
    match v {
        VertexId::Tree(p) => p,
        VertexId::Lattice(_) => unreachable!("tree traversal on a lattice vertex"),
    }
}

fn coords_mut(v: &mut VertexId) -> &mut vertex::Coords {
    match v {
        VertexId::Lattice(c) => c,
        VertexId::Tree(_) => unreachable!("lattice traversal on a tree vertex"),
    }
}

/// Walks up from `center`: at each ancestor `a` (distance `j`), visits `a` and
/// the subtrees hanging off `a` other than the one containing `center`.
fn tree_ball<F>(k: u32, cursor: &mut VertexId, center: &[u8], radius: u32, visit: &mut F)
where
    F: FnMut(&VertexId, u32),
{
    tree_descend(k, cursor, 0, radius, None, visit);
    let depth = center.len();
    for j in 1..=radius.min(depth as u32) {
        let anc_len = depth - j as usize;
        let skip = center[anc_len];
        {
            let p = path_mut(cursor);
            p.truncate(anc_len);
        }
        tree_descend(k, cursor, j, radius, Some(skip), visit);
    }
    let p = path_mut(cursor);
    p.clear();
    p.extend_from_slice(center);
}

/// Visits `cursor` at distance `dist` and all its descendants within
/// `radius`, skipping the child labelled `skip`.
fn tree_descend<F>(k: u32, cursor: &mut VertexId, dist: u32, radius: u32, skip: Option<u8>, visit: &mut F)
where
    F: FnMut(&VertexId, u32),
{
    visit(cursor, dist);
    if dist == radius {
        return;
    }
    let fanout = if path_mut(cursor).is_empty() { k } else { k - 1 };
    for label in 0..fanout as u8 {
        if Some(label) == skip {
            continue;
        }
        path_mut(cursor).push(label);
        tree_descend(k, cursor, dist + 1, radius, None, visit);
        path_mut(cursor).pop();
    }
}

/// Lexicographic enumeration of the L1 ball: coordinate `axis` ranges over
/// `center[axis] ± remaining`.
fn lattice_ball<F>(
    cursor: &mut VertexId,
    center: &[i64],
    axis: usize,
    remaining: u32,
    radius: u32,
    visit: &mut F,
) where
    F: FnMut(&VertexId, u32),
{
    if axis == center.len() {
        visit(cursor, radius - remaining);
        return;
    }
    let r = i64::from(remaining);
    for offset in -r..=r {
        coords_mut(cursor)[axis] = center[axis] + offset;
        lattice_ball(cursor, center, axis + 1, remaining - offset.unsigned_abs() as u32, radius, visit);
    }
    coords_mut(cursor)[axis] = center[axis];
}
