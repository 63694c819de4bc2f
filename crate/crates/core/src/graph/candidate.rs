use std::collections::HashMap;

use super::{ball_size, GraphError, GraphKind, VertexId};

/// The `n` vertices known to contain the source: the full ball
/// `N_{v0}(r_n)` plus the first `n - |N(r_n)|` vertices of `∂N_{v0}(r_n + 1)`
/// in canonical order. `vertices` is sorted canonically; candidate indices
/// used throughout the crate refer to this order.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    kind: GraphKind,
    v0: VertexId,
    n: usize,
    r_n: u32,
    vertices: Vec<VertexId>,
    index: HashMap<VertexId, usize>,
    /// Distance of each candidate from `v0`.
    depth: Vec<u32>,
    /// Candidate indices sorted by distance from `v0`.
    bfs_order: Vec<usize>,
    /// Neighbor one step closer to `v0` (tree only; `usize::MAX` at `v0`).
    parent: Vec<usize>,
}

pub fn make_candidate_set(kind: GraphKind, v0: &VertexId, n: usize) -> Result<CandidateSet, GraphError> {
    kind.validate(v0)?;
    if n == 0 {
        return Err(GraphError::EmptyCandidateSet);
    }
    let n128 = n as u128;
    let mut r_n = 0u32;
    while ball_size(kind, r_n + 1)? <= n128 {
        r_n += 1;
    }
    let mut vertices = kind.enumerate_ball(v0, r_n)?;
    let missing = n - vertices.len();
    if missing > 0 {
        let sphere = kind.enumerate_sphere(v0, r_n + 1)?;
        vertices.extend(sphere.into_iter().take(missing));
        vertices.sort_unstable();
    }
    Ok(CandidateSet::from_sorted(kind, v0.clone(), r_n, vertices))
}

impl CandidateSet {
    fn from_sorted(kind: GraphKind, v0: VertexId, r_n: u32, vertices: Vec<VertexId>) -> Self {
        let n = vertices.len();
        let index: HashMap<VertexId, usize> = vertices.iter().cloned().enumerate().map(|(i, v)| (v, i)).collect();
        let depth: Vec<u32> = vertices.iter().map(|w| w.distance_to(&v0) as u32).collect();
        let mut bfs_order: Vec<usize> = (0..n).collect();
        bfs_order.sort_by_key(|&i| depth[i]);
        let parent = match (&v0, kind.is_tree()) {
            (VertexId::Tree(root_path), true) => vertices
                .iter()
                .map(|w| {
                    let VertexId::Tree(p) = w else { unreachable!() };
                    if w == &v0 {
                        return usize::MAX;
                    }
                    let common = p.iter().zip(root_path.iter()).take_while(|(a, b)| a == b).count();
                    let step = if p.len() > common {
                        VertexId::tree(&p[..p.len() - 1])
                    } else {
                        VertexId::tree(&root_path[..p.len() + 1])
                    };
                    index[&step]
                })
                .collect(),
            _ => Vec::new(),
        };
        Self { kind, v0, n, r_n, vertices, index, depth, bfs_order, parent }
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn v0(&self) -> &VertexId {
        &self.v0
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn r_n(&self) -> u32 {
        self.r_n
    }

    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> &VertexId {
        &self.vertices[i]
    }

    pub fn index_of(&self, v: &VertexId) -> Option<usize> {
        self.index.get(v).copied()
    }

    pub fn contains(&self, v: &VertexId) -> bool {
        self.index.contains_key(v)
    }

    /// Distance of candidate `i` from `v0`.
    pub fn depth(&self, i: usize) -> u32 {
        self.depth[i]
    }

    /// Largest distance from `v0` over the candidates.
    pub fn outer_radius(&self) -> u32 {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    /// The first candidate in canonical order among those farthest from `v0`.
    pub fn extreme_vertex(&self) -> usize {
        let outer = self.outer_radius();
        (0..self.n).find(|&i| self.depth[i] == outer).unwrap_or(0)
    }

    /// `Σ_{w∈V_n} d(u, w)` for any vertex `u`.
    pub fn geodesic_sum(&self, u: &VertexId) -> Result<u128, GraphError> {
        self.kind.validate(u)?;
        let mut total: u128 = 0;
        for w in &self.vertices {
            total = total
                .checked_add(u128::from(u.distance_to(w)))
                .ok_or(GraphError::Overflow("geodesic sum"))?;
        }
        Ok(total)
    }

    /// `Σ_{w∈V_n} d(u, w)²` for any vertex `u`.
    pub fn geodesic_sq_sum(&self, u: &VertexId) -> Result<u128, GraphError> {
        self.kind.validate(u)?;
        let mut total: u128 = 0;
        for w in &self.vertices {
            let d = u128::from(u.distance_to(w));
            total = total.checked_add(d * d).ok_or(GraphError::Overflow("geodesic square sum"))?;
        }
        Ok(total)
    }

    /// `E(u) = Σ_w weights[w]·d(u, w)` for every candidate `u`, by direct
    /// double summation. Quadratic in `n`.
    pub fn weighted_distance_sums_brute(&self, weights: &[f64]) -> Vec<f64> {
        assert_eq!(weights.len(), self.n);
        self.vertices
            .iter()
            .map(|u| {
                self.vertices
                    .iter()
                    .zip(weights)
                    .map(|(w, &p)| p * u.distance_to(w) as f64)
                    .sum()
            })
            .collect()
    }

    /// Same values as [`weighted_distance_sums_brute`](Self::weighted_distance_sums_brute)
    /// in linear time. On trees the candidate set is a subtree and the sums
    /// are rerooted along parent edges; on lattices the L1 distance separates
    /// into per-axis sums of `|x - c|`.
    pub fn weighted_distance_sums(&self, weights: &[f64]) -> Vec<f64> {
        assert_eq!(weights.len(), self.n);
        match self.kind {
            GraphKind::RegularTree { .. } => self.tree_sums(weights),
            GraphKind::Lattice { .. } => self.lattice_sums(weights),
        }
    }

    fn tree_sums(&self, weights: &[f64]) -> Vec<f64> {
        let mut subtree = weights.to_vec();
        for &i in self.bfs_order.iter().rev() {
            if self.parent[i] != usize::MAX {
                subtree[self.parent[i]] += subtree[i];
            }
        }
        let total: f64 = weights.iter().sum();
        let mut sums = vec![0.0; self.n];
        let root = self.bfs_order[0];
        sums[root] = weights.iter().zip(&self.depth).map(|(&p, &d)| p * f64::from(d)).sum();
        for &i in &self.bfs_order[1..] {
            sums[i] = sums[self.parent[i]] + total - 2.0 * subtree[i];
        }
        sums
    }

    fn lattice_sums(&self, weights: &[f64]) -> Vec<f64> {
        let VertexId::Lattice(center) = &self.v0 else { unreachable!() };
        let reach = i64::from(self.outer_radius());
        let width = (2 * reach + 1) as usize;
        let mut sums = vec![0.0; self.n];
        let mut mass = vec![0.0; width];
        let mut cost = vec![0.0; width];
        for (axis, &c0) in center.iter().enumerate() {
            let offset = |v: &VertexId| -> usize {
                let VertexId::Lattice(c) = v else { unreachable!() };
                (c[axis] - c0 + reach) as usize
            };
            mass.iter_mut().for_each(|m| *m = 0.0);
            for (v, &p) in self.vertices.iter().zip(weights) {
                mass[offset(v)] += p;
            }
            // cost[x] = Σ_j mass[j]·|x - j|, left and right sweeps.
            let (mut m, mut acc) = (0.0, 0.0);
            for x in 0..width {
                acc += m;
                cost[x] = acc;
                m += mass[x];
            }
            let (mut m, mut acc) = (0.0, 0.0);
            for x in (0..width).rev() {
                acc += m;
                cost[x] += acc;
                m += mass[x];
            }
            for (s, v) in sums.iter_mut().zip(&self.vertices) {
                *s += cost[offset(v)];
            }
        }
        sums
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tree(k: u32) -> GraphKind {
        GraphKind::tree(k).unwrap()
    }

    fn lattice(d: u32) -> GraphKind {
        GraphKind::lattice(d).unwrap()
    }

    #[test]
    fn tree_full_ball() {
        let cs = make_candidate_set(tree(3), &VertexId::root(), 10).unwrap();
        assert_eq!(cs.r_n(), 2);
        assert_eq!(cs.vertices(), tree(3).enumerate_ball(&VertexId::root(), 2).unwrap().as_slice());
    }

    #[test]
    fn line_ball() {
        let v0 = VertexId::lattice(&[0]);
        let cs = make_candidate_set(lattice(1), &v0, 5).unwrap();
        assert_eq!(cs.r_n(), 2);
        let expect: Vec<_> = (-2..=2).map(|x| VertexId::lattice(&[x])).collect();
        assert_eq!(cs.vertices(), expect.as_slice());
    }

    #[test]
    fn partial_boundary_takes_canonical_prefix() {
        let kind = lattice(2);
        let v0 = VertexId::lattice(&[0, 0]);
        let cs = make_candidate_set(kind, &v0, 20).unwrap();
        assert_eq!(cs.r_n(), 2);
        assert_eq!(cs.len(), 20);
        let sphere = kind.enumerate_sphere(&v0, 3).unwrap();
        let extra: Vec<_> = cs.vertices().iter().filter(|w| w.distance_to(&v0) == 3).cloned().collect();
        assert_eq!(extra, sphere[..7].to_vec());
        assert_eq!(cs.vertices().iter().filter(|w| w.distance_to(&v0) <= 2).count(), 13);
    }

    #[test]
    fn empty_set_is_rejected() {
        assert!(matches!(
            make_candidate_set(tree(3), &VertexId::root(), 0),
            Err(GraphError::EmptyCandidateSet)
        ));
    }

    #[test]
    fn geodesic_examples() {
        let cs = make_candidate_set(tree(3), &VertexId::root(), 10).unwrap();
        assert_eq!(cs.geodesic_sum(&VertexId::root()).unwrap(), 15);
        let v0 = VertexId::lattice(&[0]);
        let cs = make_candidate_set(lattice(1), &v0, 5).unwrap();
        assert_eq!(cs.geodesic_sum(&v0).unwrap(), 6);
        assert_eq!(cs.geodesic_sum(&VertexId::lattice(&[2])).unwrap(), 10);
        assert_eq!(cs.geodesic_sq_sum(&v0).unwrap(), 10);
    }

    #[test]
    fn extreme_vertex_is_on_the_outer_shell() {
        let cs = make_candidate_set(tree(3), &VertexId::root(), 100).unwrap();
        let i = cs.extreme_vertex();
        assert_eq!(cs.depth(i), cs.r_n() + 1);
        let cs = make_candidate_set(tree(3), &VertexId::root(), 94).unwrap();
        assert_eq!(cs.depth(cs.extreme_vertex()), cs.r_n());
    }

    fn check_fast_sums(kind: GraphKind, v0: VertexId, n: usize, weights: &[f64]) -> Result<(), TestCaseError> {
        let cs = make_candidate_set(kind, &v0, n).unwrap();
        let w: Vec<f64> = (0..n).map(|i| weights[i % weights.len()]).collect();
        let fast = cs.weighted_distance_sums(&w);
        let brute = cs.weighted_distance_sums_brute(&w);
        for (a, b) in fast.iter().zip(&brute) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
        Ok(())
    }

    proptest! {
        #[test]
        fn fast_sums_match_brute_on_trees(
            k in 3u32..6,
            n in 1usize..200,
            start in proptest::collection::vec(0u8..2, 0..4),
            weights in proptest::collection::vec(0.0f64..1.0, 1..20),
        ) {
            check_fast_sums(tree(k), VertexId::tree(&start), n, &weights)?;
        }

        #[test]
        fn fast_sums_match_brute_on_lattices(
            dim in 1u32..4,
            n in 1usize..200,
            shift in -5i64..5,
            weights in proptest::collection::vec(0.0f64..1.0, 1..20),
        ) {
            let coords: Vec<i64> = (0..dim as i64).map(|i| shift * (i + 1)).collect();
            check_fast_sums(lattice(dim), VertexId::lattice(&coords), n, &weights)?;
        }

        #[test]
        fn candidate_set_is_sandwiched(k in 3u32..6, n in 1usize..500) {
            let cs = make_candidate_set(tree(k), &VertexId::root(), n).unwrap();
            prop_assert_eq!(cs.len(), n);
            let inner = ball_size(tree(k), cs.r_n()).unwrap() as usize;
            prop_assert!(inner <= n);
            prop_assert!((ball_size(tree(k), cs.r_n() + 1).unwrap() as usize) > n);
            prop_assert_eq!(cs.vertices().iter().filter(|w| w.norm() <= u64::from(cs.r_n())).count(), inner);
            prop_assert!(cs.vertices().iter().all(|w| w.norm() <= u64::from(cs.r_n()) + 1));
            prop_assert!(cs.vertices().windows(2).all(|p| p[0] < p[1]));
        }
    }
}
