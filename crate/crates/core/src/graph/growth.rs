//! Neighborhood growth functions and their generalized inverses.
//!
//! * `|∂N(t)|`, `|N(t)|`: sphere and ball sizes.
//! * `f(t) = Σ_{s≤t} |N(s)|`: total affected signals up to time `t`.
//! * `f1(t) = Σ_{s≤t} |N_v(s) \ N_u(s)|` for adjacent `u, v`.
//! * `f_vu(t)`: the same sum for an arbitrary pair.
//!
//! The inverses `F`, `F1`, `F_vu` return the smallest integer `t` with
//! `g(t) >= z`, which is the exact inverse on the range of `g`.
//!
//! All counts are `u128` with checked arithmetic.

use super::{GraphError, GraphKind, VertexId};

const INVERSE_STEP_LIMIT: u32 = 10_000_000;

fn binomial(n: u64, k: u64) -> Result<u128, GraphError> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k {
        // acc = C(n - k + i - 1, i - 1) here, so the division is exact.
        acc = acc
            .checked_mul(u128::from(n - k + i))
            .ok_or(GraphError::Overflow("binomial coefficient"))?
            / u128::from(i);
    }
    Ok(acc)
}

/// `|∂N(t)|`, the number of vertices at distance exactly `t`.
pub fn sphere_size(kind: GraphKind, t: u32) -> Result<u128, GraphError> {
    if t == 0 {
        return Ok(1);
    }
    match kind {
        GraphKind::RegularTree { k } => u128::from(k - 1)
            .checked_pow(t - 1)
            .and_then(|p| p.checked_mul(u128::from(k)))
            .ok_or(GraphError::Overflow("tree sphere size")),
        GraphKind::Lattice { dim } => {
            let mut total: u128 = 0;
            for j in 1..=dim.min(t) {
                let term = binomial(u64::from(dim), u64::from(j))?
                    .checked_mul(binomial(u64::from(t - 1), u64::from(j - 1))?)
                    .and_then(|x| x.checked_mul(1u128.checked_shl(j)?))
                    .ok_or(GraphError::Overflow("lattice sphere size"))?;
                total = total.checked_add(term).ok_or(GraphError::Overflow("lattice sphere size"))?;
            }
            Ok(total)
        }
    }
}

/// `|N(t)|`, the number of vertices within distance `t`.
pub fn ball_size(kind: GraphKind, t: u32) -> Result<u128, GraphError> {
    match kind {
        GraphKind::RegularTree { k } => {
            // 1 + k((k-1)^t - 1)/(k-2)
            let k = u128::from(k);
            let grown = (k - 1)
                .checked_pow(t)
                .and_then(|p| (p - 1).checked_mul(k))
                .ok_or(GraphError::Overflow("tree ball size"))?;
            Ok(1 + grown / (k - 2))
        }
        GraphKind::Lattice { .. } => {
            let mut total: u128 = 0;
            for s in 0..=t {
                total = total
                    .checked_add(sphere_size(kind, s)?)
                    .ok_or(GraphError::Overflow("lattice ball size"))?;
            }
            Ok(total)
        }
    }
}

/// `f(t) = Σ_{s=0}^{t} |N(s)|`.
pub fn f(kind: GraphKind, t: u32) -> Result<u128, GraphError> {
    let mut total: u128 = 0;
    for s in 0..=t {
        total = total.checked_add(ball_size(kind, s)?).ok_or(GraphError::Overflow("f"))?;
    }
    Ok(total)
}

/// `|N_v(s) \ N_u(s)|` for the adjacent pair `v = 0`, `u = e_1` of a lattice.
/// These are the points of the radius-`s` sphere with `x_1 <= 0`: the whole
/// sphere minus those with `x_1 > 0`, which by symmetry are half of the
/// points with `x_1 ≠ 0`.
fn lattice_adjacent_difference(dim: u32, s: u32) -> Result<u128, GraphError> {
    let sphere = sphere_size(GraphKind::Lattice { dim }, s)?;
    let on_plane = if dim == 1 {
        u128::from(s == 0)
    } else {
        sphere_size(GraphKind::Lattice { dim: dim - 1 }, s)?
    };
    Ok((sphere + on_plane) / 2)
}

/// `f1(t)`: the pairwise difference sum for adjacent vertices. Closed form on
/// trees, enumeration on lattices.
pub fn f1(kind: GraphKind, t: u32) -> Result<u128, GraphError> {
    match kind {
        GraphKind::RegularTree { k } => {
            let k = u128::from(k);
            let p = (k - 1).checked_pow(t + 1).ok_or(GraphError::Overflow("f1"))?;
            Ok((p - 1) / (k - 2))
        }
        GraphKind::Lattice { dim } => {
            let mut total: u128 = 0;
            for s in 0..=t {
                total = total.checked_add(lattice_adjacent_difference(dim, s)?).ok_or(GraphError::Overflow("f1"))?;
            }
            Ok(total)
        }
    }
}

/// `|N_v(s) \ N_u(s)|` by enumeration of `N_v(s)`.
fn pair_difference(kind: GraphKind, v: &VertexId, u: &VertexId, s: u32) -> Result<u128, GraphError> {
    let d = v.distance_to(u);
    if d > 2 * u64::from(s) {
        return ball_size(kind, s);
    }
    let mut count = 0u128;
    kind.for_each_in_ball(v, s, |w, _| {
        if w.distance_to(u) > u64::from(s) {
            count += 1;
        }
    });
    Ok(count)
}

fn check_pair(kind: GraphKind, v: &VertexId, u: &VertexId) -> Result<(), GraphError> {
    kind.validate(v)?;
    kind.validate(u)?;
    if v == u {
        return Err(GraphError::OutOfRange("f_vu needs two distinct vertices".into()));
    }
    Ok(())
}

/// `f_vu(t) = Σ_{s=0}^{t} |N_v(s) \ N_u(s)|` for distinct `u`, `v`.
pub fn f_vu(kind: GraphKind, v: &VertexId, u: &VertexId, t: u32) -> Result<u128, GraphError> {
    check_pair(kind, v, u)?;
    let mut total: u128 = 0;
    for s in 0..=t {
        total = total
            .checked_add(pair_difference(kind, v, u, s)?)
            .ok_or(GraphError::Overflow("f_vu"))?;
    }
    Ok(total)
}

/// `Σ_{s=0}^{t} |N_v(s) ∩ N_u(s)|`, the exponent of `β` in `E_v[X_u(t)]`.
/// Equals `f(t)` when `u == v`.
pub fn intersection_sum(kind: GraphKind, v: &VertexId, u: &VertexId, t: u32) -> Result<u128, GraphError> {
    kind.validate(v)?;
    kind.validate(u)?;
    let total = f(kind, t)?;
    if v == u {
        return Ok(total);
    }
    Ok(total - f_vu(kind, u, v, t)?)
}

/// Smallest `t >= 0` with `cumulative(t) >= z`, where `increment(s)` is the
/// `s`-th summand.
fn generalized_inverse<I>(what: &'static str, z: f64, mut increment: I) -> Result<u32, GraphError>
where
    I: FnMut(u32) -> Result<u128, GraphError>,
{
    if z.is_nan() || z < 0.0 {
        return Err(GraphError::OutOfRange(format!("{what} inverse needs z >= 0, got {z}")));
    }
    let mut total: u128 = 0;
    for t in 0..INVERSE_STEP_LIMIT {
        total = total.checked_add(increment(t)?).ok_or(GraphError::Overflow(what))?;
        if total as f64 >= z {
            return Ok(t);
        }
    }
    Err(GraphError::InverseOutOfRange { what, target: z, limit: INVERSE_STEP_LIMIT })
}

/// `F(z)`: smallest `t` with `f(t) >= z`.
pub fn inverse_f(kind: GraphKind, z: f64) -> Result<u32, GraphError> {
    generalized_inverse("f", z, |s| ball_size(kind, s))
}

/// `F1(z)`: smallest `t` with `f1(t) >= z`.
pub fn inverse_f1(kind: GraphKind, z: f64) -> Result<u32, GraphError> {
    match kind {
        GraphKind::RegularTree { k } => {
            generalized_inverse("f1", z, |s| {
                u128::from(k - 1).checked_pow(s).ok_or(GraphError::Overflow("f1"))
            })
        }
        GraphKind::Lattice { dim } => generalized_inverse("f1", z, |s| lattice_adjacent_difference(dim, s)),
    }
}

/// `F_vu(z)`: smallest `t` with `f_vu(t) >= z`.
pub fn inverse_f_vu(kind: GraphKind, v: &VertexId, u: &VertexId, z: f64) -> Result<u32, GraphError> {
    check_pair(kind, v, u)?;
    generalized_inverse("f_vu", z, |s| pair_difference(kind, v, u, s))
}

/// Precomputed `|∂N|`, `|N|`, `f`, `f1` up to a horizon. Immutable once
/// built, so it can be shared freely between threads.
#[derive(Debug, Clone)]
pub struct GrowthTables {
    kind: GraphKind,
    sphere: Vec<u128>,
    ball: Vec<u128>,
    f: Vec<u128>,
    f1: Vec<u128>,
}

impl GrowthTables {
    pub fn new(kind: GraphKind, horizon: u32) -> Result<Self, GraphError> {
        let len = horizon as usize + 1;
        let mut sphere = Vec::with_capacity(len);
        let mut ball = Vec::with_capacity(len);
        let mut fv = Vec::with_capacity(len);
        let mut f1v = Vec::with_capacity(len);
        let (mut b, mut fs, mut f1s) = (0u128, 0u128, 0u128);
        for t in 0..=horizon {
            let sp = sphere_size(kind, t)?;
            b = b.checked_add(sp).ok_or(GraphError::Overflow("ball size"))?;
            fs = fs.checked_add(b).ok_or(GraphError::Overflow("f"))?;
            let d1 = match kind {
                GraphKind::RegularTree { k } => {
                    u128::from(k - 1).checked_pow(t).ok_or(GraphError::Overflow("f1"))?
                }
                GraphKind::Lattice { dim } => lattice_adjacent_difference(dim, t)?,
            };
            f1s = f1s.checked_add(d1).ok_or(GraphError::Overflow("f1"))?;
            sphere.push(sp);
            ball.push(b);
            fv.push(fs);
            f1v.push(f1s);
        }
        Ok(Self { kind, sphere, ball, f: fv, f1: f1v })
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn horizon(&self) -> u32 {
        (self.ball.len() - 1) as u32
    }

    pub fn sphere(&self, t: u32) -> Option<u128> {
        self.sphere.get(t as usize).copied()
    }

    pub fn ball(&self, t: u32) -> Option<u128> {
        self.ball.get(t as usize).copied()
    }

    pub fn f(&self, t: u32) -> Option<u128> {
        self.f.get(t as usize).copied()
    }

    pub fn f1(&self, t: u32) -> Option<u128> {
        self.f1.get(t as usize).copied()
    }

    /// `F(z)`, or `None` when the answer lies beyond the horizon.
    pub fn inverse_f(&self, z: f64) -> Option<u32> {
        Self::lookup(&self.f, z)
    }

    pub fn inverse_f1(&self, z: f64) -> Option<u32> {
        Self::lookup(&self.f1, z)
    }

    fn lookup(table: &[u128], z: f64) -> Option<u32> {
        let idx = table.partition_point(|&x| (x as f64) < z);
        (idx < table.len()).then_some(idx as u32)
    }
}
