//! Typed adjacency for the speaker graph (N utterance nodes) and the
//! co-interactive graph (2N task nodes: act nodes `0..N`, sentiment nodes `N..2N`).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeType {
    SameSpeaker,
    /// Cross-utterance edges within one task.
    SameTask,
    /// Edges between act and sentiment nodes.
    CrossTask,
}

impl EdgeType {
    pub const ALL: [EdgeType; 3] = [
        EdgeType::SameSpeaker,
        EdgeType::SameTask,
        EdgeType::CrossTask,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::SameSpeaker => "same_speaker",
            EdgeType::SameTask => "same_task",
            EdgeType::CrossTask => "cross_task",
        }
    }

    fn keeps_self_loops(self) -> bool {
        matches!(self, EdgeType::SameSpeaker | EdgeType::SameTask)
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EdgeType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EdgeType::ALL
            .into_iter()
            .find(|t| t.as_str() == s.replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown edge type {s:?}")))
    }
}

/// Square boolean matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    n: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..n * n).map(|k| f(k / n, k % n)).collect();
        Self { n, bits }
    }

    pub fn full(n: usize) -> Self {
        Self::from_fn(n, |_, _| true)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |i, j| i == j)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&j| self.get(i, j)).collect()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn or(&self, other: &Mask) -> Mask {
        assert_eq!(self.n, other.n, "mask sizes differ");
        Mask {
            n: self.n,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a || *b)
                .collect(),
        }
    }

    /// Keeps only the diagonal entries that are set.
    fn diagonal(&self) -> Mask {
        Mask::from_fn(self.n, |i, j| i == j && self.get(i, j))
    }

    /// One line per node, `0`/`1` separated by spaces.
    pub fn to_grid(&self) -> String {
        let mut s = String::with_capacity(self.n * self.n * 2);
        for i in 0..self.n {
            let row: Vec<&str> = (0..self.n)
                .map(|j| if self.get(i, j) { "1" } else { "0" })
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedAdjacency {
    node_count: usize,
    masks: BTreeMap<EdgeType, Mask>,
}

impl TypedAdjacency {
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn mask(&self, edge: EdgeType) -> Option<&Mask> {
        self.masks.get(&edge)
    }

    pub fn masks(&self) -> impl Iterator<Item = (EdgeType, &Mask)> {
        self.masks.iter().map(|(&t, m)| (t, m))
    }

    /// Union of every edge type: the attention neighborhood of each node.
    pub fn neighborhood(&self) -> Mask {
        self.masks
            .values()
            .fold(Mask::from_fn(self.node_count, |_, _| false), |acc, m| {
                acc.or(m)
            })
    }

    fn check_nonempty(self) -> Result<Self> {
        let union = self.neighborhood();
        if let Some(node) = (0..self.node_count).find(|&i| union.neighbors(i).is_empty()) {
            return Err(Error::DegenerateNeighborhood { node });
        }
        Ok(self)
    }
}

/// Same-speaker edges (self-loops included) over the utterances of one dialog.
pub fn speaker_adjacency<S: PartialEq>(speakers: &[S]) -> TypedAdjacency {
    let n = speakers.len();
    let mask = Mask::from_fn(n, |i, j| speakers[i] == speakers[j]);
    TypedAdjacency {
        node_count: n,
        masks: BTreeMap::from([(EdgeType::SameSpeaker, mask)]),
    }
}

/// Complete within-task blocks (cross-utterance edges, self-loops included) and a
/// complete bipartite cross-task block over `2n` nodes.
pub fn cointeractive_adjacency(n: usize) -> Result<TypedAdjacency> {
    if n == 0 {
        return Err(Error::Config(
            "co-interactive graph needs at least one utterance".into(),
        ));
    }
    let same = Mask::from_fn(2 * n, |i, j| (i < n) == (j < n));
    let cross = Mask::from_fn(2 * n, |i, j| (i < n) != (j < n));
    Ok(TypedAdjacency {
        node_count: 2 * n,
        masks: BTreeMap::from([(EdgeType::SameTask, same), (EdgeType::CrossTask, cross)]),
    })
}

/// Removes the listed edge types. Same-speaker and same-task self-loops survive.
pub fn ablate(adj: &TypedAdjacency, drop: &[EdgeType]) -> Result<TypedAdjacency> {
    let masks = adj
        .masks
        .iter()
        .map(|(&t, m)| {
            let kept = if !drop.contains(&t) {
                m.clone()
            } else if t.keeps_self_loops() {
                m.diagonal()
            } else {
                Mask::from_fn(m.size(), |_, _| false)
            };
            (t, kept)
        })
        .collect();
    TypedAdjacency {
        node_count: adj.node_count,
        masks,
    }
    .check_nonempty()
}
