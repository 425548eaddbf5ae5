use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected region adjacency graph. Regions are kept in lexicographic order
/// and every matrix in the crate indexes regions by this order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionGraph {
    regions: Vec<String>,
    adjacency: Vec<Vec<u8>>,
    degrees: Vec<usize>,
    connected: bool,
}

impl RegionGraph {
    /// Builds the graph from region identifiers and undirected edges.
    /// Duplicate edges are tolerated; self-loops are rejected.
    pub fn new<S: AsRef<str>>(regions: &[S], edges: &[(S, S)]) -> Result<Self> {
        let set: BTreeSet<String> = regions.iter().map(|r| r.as_ref().to_string()).collect();
        if set.len() != regions.len() {
            return Err(Error::validation("duplicate region identifiers"));
        }
        let regions: Vec<String> = set.into_iter().collect();
        let n = regions.len();
        let mut adjacency = vec![vec![0u8; n]; n];
        for (a, b) in edges {
            let (a, b) = (a.as_ref(), b.as_ref());
            let i = regions
                .binary_search_by(|r| r.as_str().cmp(a))
                .map_err(|_| Error::validation(format!("edge references unknown region '{a}'")))?;
            let j = regions
                .binary_search_by(|r| r.as_str().cmp(b))
                .map_err(|_| Error::validation(format!("edge references unknown region '{b}'")))?;
            if i == j {
                return Err(Error::validation(format!("self-loop on region '{a}'")));
            }
            adjacency[i][j] = 1;
            adjacency[j][i] = 1;
        }
        let degrees = adjacency
            .iter()
            .map(|row| row.iter().map(|&v| usize::from(v)).sum())
            .collect();
        let connected = is_connected(&adjacency);
        Ok(RegionGraph {
            regions,
            adjacency,
            degrees,
            connected,
        })
    }

    /// Path graph r0 - r1 - ... over `n` regions named `R00`, `R01`, ...
    pub fn path(n: usize) -> Self {
        let names: Vec<String> = (0..n).map(|i| format!("R{i:02}")).collect();
        let edges: Vec<(String, String)> = (1..n)
            .map(|i| (names[i - 1].clone(), names[i].clone()))
            .collect();
        RegionGraph::new(&names, &edges).expect("path graph is valid")
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn regions(&self) -> &[String] {
        &self.regions
    }

    pub fn index_of(&self, region: &str) -> Option<usize> {
        self.regions.binary_search_by(|r| r.as_str().cmp(region)).ok()
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i][j] == 1
    }

    pub fn degree(&self, i: usize) -> usize {
        self.degrees[i]
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adjacency[i][j] == 1 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Adjacency matrix `W`.
    pub fn adjacency_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| f64::from(self.adjacency[i][j]))
    }

    /// Graph Laplacian `D - W`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                self.degrees[i] as f64
            } else {
                -f64::from(self.adjacency[i][j])
            }
        })
    }

    /// Quadratic form `vᵀ(D - W)v = Σ_{edges} (v_i - v_j)²`.
    pub fn laplacian_quadratic(&self, v: &[f64]) -> f64 {
        self.edges()
            .iter()
            .map(|&(i, j)| (v[i] - v[j]).powi(2))
            .sum()
    }
}

fn is_connected(adj: &[Vec<u8>]) -> bool {
    let n = adj.len();
    if n == 0 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if adj[i][j] == 1 && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}
