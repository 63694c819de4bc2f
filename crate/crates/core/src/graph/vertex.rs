use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use smallvec::SmallVec;

use super::GraphError;

pub(crate) type TreePath = SmallVec<[u8; 24]>;
pub(crate) type Coords = SmallVec<[i64; 4]>;

/// Address of a vertex in an implicit infinite graph.
///
/// A tree vertex is the label path from the root: the first label picks one
/// of the root's `k` children, every later label one of the `k - 1` children
/// of a non-root vertex. A lattice vertex is its coordinate vector.
///
/// Serialized form: `/` for the tree root, `/0/1/1` for paths, `(x,y,...)`
/// for lattice points.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VertexId {
    Tree(TreePath),
    Lattice(Coords),
}

impl VertexId {
    pub fn root() -> Self {
        VertexId::Tree(SmallVec::new())
    }

    pub fn tree(labels: &[u8]) -> Self {
        VertexId::Tree(SmallVec::from_slice(labels))
    }

    pub fn lattice(coords: &[i64]) -> Self {
        VertexId::Lattice(SmallVec::from_slice(coords))
    }

    /// Tree depth (distance to the root) or L1 norm.
    pub fn norm(&self) -> u64 {
        match self {
            VertexId::Tree(p) => p.len() as u64,
            VertexId::Lattice(c) => c.iter().map(|x| x.unsigned_abs()).sum(),
        }
    }

    /// Distance without validating the addresses against a graph kind.
    /// Both vertices must use the same encoding.
    pub fn distance_to(&self, other: &VertexId) -> u64 {
        match (self, other) {
            (VertexId::Tree(a), VertexId::Tree(b)) => {
                let common = a.iter().zip(b.iter()).take_while(|(x, y)| x == y).count();
                (a.len() + b.len() - 2 * common) as u64
            }
            (VertexId::Lattice(a), VertexId::Lattice(b)) => {
                debug_assert_eq!(a.len(), b.len());
                a.iter().zip(b.iter()).map(|(x, y)| x.abs_diff(*y)).sum()
            }
            _ => panic!("distance between vertices of different graph families"),
        }
    }

    /// Stable 64-bit key for keyed random streams. Independent of the
    /// standard library hasher, so it never changes between builds.
    pub fn stream_key(&self) -> u64 {
        use crate::rng::mix64;
        match self {
            VertexId::Tree(p) => {
                let mut h = mix64(0x7472_6565 ^ p.len() as u64);
                for chunk in p.chunks(8) {
                    let mut word = [0u8; 8];
                    word[..chunk.len()].copy_from_slice(chunk);
                    h = mix64(h ^ u64::from_le_bytes(word));
                }
                h
            }
            VertexId::Lattice(c) => {
                let mut h = mix64(0x6c61_7474 ^ c.len() as u64);
                for &x in c {
                    h = mix64(h ^ x as u64);
                }
                h
            }
        }
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VertexId::Tree(p) if p.is_empty() => f.write_str("/"),
            VertexId::Tree(p) => {
                for label in p {
                    write!(f, "/{label}")?;
                }
                Ok(())
            }
            VertexId::Lattice(c) => {
                f.write_str("(")?;
                for (i, x) in c.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{x}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl FromStr for VertexId {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GraphError::OutOfRange(format!("cannot parse vertex {s:?}"));
        let s = s.trim();
        if s == "/" {
            return Ok(VertexId::root());
        }
        if let Some(rest) = s.strip_prefix('/') {
            let labels = rest
                .split('/')
                .map(|x| x.parse::<u8>().map_err(|_| bad()))
                .collect::<Result<TreePath, _>>()?;
            return Ok(VertexId::Tree(labels));
        }
        if let Some(inner) = s.strip_prefix('(').and_then(|x| x.strip_suffix(')')) {
            let coords = inner
                .split(',')
                .map(|x| x.trim().parse::<i64>().map_err(|_| bad()))
                .collect::<Result<Coords, _>>()?;
            return Ok(VertexId::Lattice(coords));
        }
        Err(bad())
    }
}

impl Serialize for VertexId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VertexId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tree_order_is_lexicographic_on_paths() {
        let mut v = vec![
            VertexId::tree(&[1]),
            VertexId::tree(&[0, 1]),
            VertexId::root(),
            VertexId::tree(&[0]),
            VertexId::tree(&[0, 0]),
        ];
        v.sort();
        assert_eq!(
            v,
            vec![
                VertexId::root(),
                VertexId::tree(&[0]),
                VertexId::tree(&[0, 0]),
                VertexId::tree(&[0, 1]),
                VertexId::tree(&[1]),
            ]
        );
    }

    #[test]
    fn lattice_order_is_lexicographic() {
        assert!(VertexId::lattice(&[-1, 5]) < VertexId::lattice(&[0, -3]));
        assert!(VertexId::lattice(&[0, -3]) < VertexId::lattice(&[0, 2]));
    }

    #[test]
    fn display_forms() {
        assert_eq!(VertexId::root().to_string(), "/");
        assert_eq!(VertexId::tree(&[2, 0, 1]).to_string(), "/2/0/1");
        assert_eq!(VertexId::lattice(&[3, -1]).to_string(), "(3,-1)");
    }

    proptest! {
        #[test]
        fn text_form_roundtrips_tree(path in proptest::collection::vec(0u8..5, 0..30)) {
            let v = VertexId::tree(&path);
            prop_assert_eq!(v.to_string().parse::<VertexId>().unwrap(), v);
        }

        #[test]
        fn text_form_roundtrips_lattice(c in proptest::collection::vec(-1000i64..1000, 1..5)) {
            let v = VertexId::lattice(&c);
            prop_assert_eq!(v.to_string().parse::<VertexId>().unwrap(), v);
        }

        #[test]
        fn tree_distance_is_a_metric(
            a in proptest::collection::vec(0u8..2, 0..12),
            b in proptest::collection::vec(0u8..2, 0..12),
            c in proptest::collection::vec(0u8..2, 0..12),
        ) {
            let (a, b, c) = (VertexId::tree(&a), VertexId::tree(&b), VertexId::tree(&c));
            prop_assert_eq!(a.distance_to(&b), b.distance_to(&a));
            prop_assert_eq!(a.distance_to(&b) == 0, a == b);
            prop_assert!(a.distance_to(&c) <= a.distance_to(&b) + b.distance_to(&c));
        }
    }
}
