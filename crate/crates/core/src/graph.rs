//! Ground-truth causal graphs.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// DAG over `n` variables whose index order is a topological order.
///
/// `adjacency[i][j] == true` means `Z_i -> Z_j`. Only entries with `i < j`
/// may be set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct CausalGraph {
    n: usize,
    adjacency: Vec<Vec<bool>>,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    n: usize,
    adjacency: Vec<Vec<bool>>,
}

impl TryFrom<GraphRepr> for CausalGraph {
    type Error = Error;
    fn try_from(r: GraphRepr) -> Result<Self> {
        CausalGraph::from_adjacency(r.adjacency).and_then(|g| {
            if g.n != r.n {
                Err(Error::Schema(format!(
                    "graph declares n = {} but adjacency is {}x{}",
                    r.n, g.n, g.n
                )))
            } else {
                Ok(g)
            }
        })
    }
}

impl From<CausalGraph> for GraphRepr {
    fn from(g: CausalGraph) -> Self {
        GraphRepr {
            n: g.n,
            adjacency: g.adjacency,
        }
    }
}

impl CausalGraph {
    pub fn empty(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("graph needs at least one variable".into()));
        }
        Ok(Self {
            n,
            adjacency: vec![vec![false; n]; n],
        })
    }

    pub fn from_adjacency(adjacency: Vec<Vec<bool>>) -> Result<Self> {
        let n = adjacency.len();
        let mut g = Self::empty(n)?;
        for (i, row) in adjacency.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Schema(format!(
                    "adjacency row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &edge) in row.iter().enumerate() {
                if edge {
                    g.add_edge(i, j)?;
                }
            }
        }
        Ok(g)
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(n)?;
        for &(i, j) in edges {
            g.add_edge(i, j)?;
        }
        Ok(g)
    }

    /// Chain `0 -> 1 -> ... -> n-1`.
    pub fn chain(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|j| (j - 1, j)).collect();
        Self::from_edges(n, &edges)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let mut g = Self::empty(n)?;
        for i in 0..n {
            for j in i + 1..n {
                g.adjacency[i][j] = true;
            }
        }
        Ok(g)
    }

    fn add_edge(&mut self, i: usize, j: usize) -> Result<()> {
        if i >= self.n || j >= self.n {
            return Err(Error::InvalidArgument(format!(
                "edge ({i}, {j}) out of range for {} variables",
                self.n
            )));
        }
        if i >= j {
            return Err(Error::InvalidArgument(format!(
                "edge {i} -> {j} violates the fixed topological order"
            )));
        }
        self.adjacency[i][j] = true;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn adjacency(&self) -> &[Vec<bool>] {
        &self.adjacency
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i][j]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.adjacency[i][j] {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().flatten().filter(|&&e| e).count()
    }

    /// Parents of `j` in increasing index order.
    pub fn parents(&self, j: usize) -> Vec<usize> {
        (0..j).filter(|&i| self.adjacency[i][j]).collect()
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (i + 1..self.n).filter(|&j| self.adjacency[i][j]).collect()
    }

    /// Strict descendants of `i`, sorted.
    pub fn descendants(&self, i: usize) -> Vec<usize> {
        let mut seen = vec![false; self.n];
        let mut queue: VecDeque<usize> = self.children(i).into();
        while let Some(k) = queue.pop_front() {
            if !seen[k] {
                seen[k] = true;
                queue.extend(self.children(k));
            }
        }
        (0..self.n).filter(|&k| seen[k]).collect()
    }

    /// Kahn's algorithm. `None` would mean a cycle, which the constructors rule out.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut indegree: Vec<usize> = (0..self.n).map(|j| self.parents(j).len()).collect();
        let mut ready: VecDeque<usize> = (0..self.n).filter(|&j| indegree[j] == 0).collect();
        let mut order = Vec::with_capacity(self.n);
        while let Some(i) = ready.pop_front() {
            order.push(i);
            for j in self.children(i) {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.push_back(j);
                }
            }
        }
        (order.len() == self.n).then_some(order)
    }
}

/// Random DAG: every pair `i < j` gets an edge with probability `edge_prob`.
pub fn sample_dag<R: Rng + ?Sized>(n: usize, edge_prob: f64, rng: &mut R) -> Result<CausalGraph> {
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::InvalidArgument(format!(
            "edge probability {edge_prob} outside [0, 1]"
        )));
    }
    let mut g = CausalGraph::empty(n)?;
    for i in 0..n {
        for j in i + 1..n {
            g.adjacency[i][j] = rng.random_bool(edge_prob);
        }
    }
    Ok(g)
}

/// Names accepted by [`graph_from_registry`].
pub const REGISTRY_NAMES: [&str; 10] = ["G1", "G2", "G3", "G4", "G5", "G6", "G7", "G8", "G9", "G10"];

/// The ten fixed four-variable benchmark graphs. Nodes A, B, C, D are 0, 1, 2, 3.
pub fn graph_from_registry(name: &str) -> Result<CausalGraph> {
    const A: usize = 0;
    const B: usize = 1;
    const C: usize = 2;
    const D: usize = 3;
    let edges: &[(usize, usize)] = match name {
        "G1" => &[(A, C), (A, D), (B, C)],
        "G2" => &[(A, B), (C, D)],
        "G3" => &[(A, B), (A, C), (B, C), (C, D)],
        "G4" => &[(A, C), (A, D), (B, D)],
        "G5" => &[(A, B), (A, C), (A, D), (B, C), (B, D), (C, D)],
        "G6" => &[(A, B), (B, C)],
        "G7" => &[(A, C), (A, D), (C, D)],
        "G8" => &[(A, B), (A, C), (B, D), (C, D)],
        "G9" => &[(A, D), (B, D), (C, D)],
        "G10" => &[(A, B), (B, C), (A, D)],
        other => return Err(Error::NotFound(format!("no graph named `{other}` in the registry"))),
    };
    CausalGraph::from_edges(4, edges)
}
