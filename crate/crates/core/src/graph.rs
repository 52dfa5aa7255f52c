//! Directed sensor-network topology.
//!
//! `a(i, j) == 1` means node `j` transmits to node `i` (edge `(j, i)`), so row
//! `i` of the adjacency lists the in-neighbours of `i`. Nodes are 0-based here;
//! the scenario file uses 1-based labels.

use serde::{Deserialize, Serialize};

use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiGraph {
    n: usize,
    adjacency: Vec<Vec<bool>>,
}

impl DiGraph {
    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidModel("graph needs at least one node".into()));
        }
        Ok(Self {
            n,
            adjacency: vec![vec![false; n]; n],
        })
    }

    /// Builds a graph from 0-based `(from, to)` pairs.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(n)?;
        for &(from, to) in edges {
            g.add_edge(from, to)?;
        }
        Ok(g)
    }

    pub fn add_edge(&mut self, from: usize, to: usize) -> Result<()> {
        if from >= self.n || to >= self.n {
            return Err(Error::InvalidModel(format!(
                "edge ({from}, {to}) references a node outside 0..{}",
                self.n
            )));
        }
        if from == to {
            return Err(Error::InvalidModel(format!("self-loop on node {from}")));
        }
        self.adjacency[to][from] = true;
        Ok(())
    }

    /// Directed ring `0 -> 1 -> ... -> n-1 -> 0`.
    pub fn ring(n: usize) -> Result<Self> {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        if n == 1 {
            return Self::empty(1);
        }
        Self::from_edges(n, &edges)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        Self::from_edges(n, &edges)
    }

    /// Default five-sensor topology: directed ring 1->2->3->4->5->1 plus the
    /// chords 1->3 and 3->5 (1-based labels). Strongly connected, not symmetric.
    pub fn tracking_network() -> Self {
        let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2), (2, 4)];
        Self::from_edges(5, &edges).expect("static topology is valid")
    }

    /// Same graph with every edge made bidirectional.
    pub fn undirected(&self) -> Self {
        let mut g = self.clone();
        for i in 0..self.n {
            for j in 0..self.n {
                if self.adjacency[i][j] {
                    g.adjacency[j][i] = true;
                }
            }
        }
        g
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// `a_ij` as 0/1.
    pub fn a(&self, i: usize, j: usize) -> f64 {
        if self.adjacency[i][j] {
            1.0
        } else {
            0.0
        }
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.adjacency[to][from]
    }

    /// Number of in-neighbours `|N_i|`, which is also `l_ii`.
    pub fn in_degree(&self, i: usize) -> usize {
        self.adjacency[i].iter().filter(|&&a| a).count()
    }

    pub fn in_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[i]
            .iter()
            .enumerate()
            .filter_map(|(j, &a)| a.then_some(j))
    }

    /// 0-based `(from, to)` pairs in row-major adjacency order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for from in 0..self.n {
            for to in 0..self.n {
                if self.has_edge(from, to) {
                    out.push((from, to));
                }
            }
        }
        out
    }

    pub fn adjacency_matrix(&self) -> Matrix {
        Matrix::from_fn(self.n, self.n, |i, j| self.a(i, j))
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.adjacency[i][j] == self.adjacency[j][i]))
    }

    /// `L = D - S` with `D = diag(|N_1|, ..., |N_N|)`.
    pub fn laplacian(&self) -> Matrix {
        Matrix::from_fn(self.n, self.n, |i, j| {
            if i == j {
                self.in_degree(i) as f64
            } else {
                -self.a(i, j)
            }
        })
    }

    /// Forward and reverse reachability from node 0 must both cover the graph.
    pub fn is_strongly_connected(&self) -> bool {
        let forward = self.reach_from(0, |from, to| self.has_edge(from, to));
        let backward = self.reach_from(0, |from, to| self.has_edge(to, from));
        forward.iter().all(|&v| v) && backward.iter().all(|&v| v)
    }

    fn reach_from(&self, start: usize, step: impl Fn(usize, usize) -> bool) -> Vec<bool> {
        let mut seen = vec![false; self.n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(u) = stack.pop() {
            for v in 0..self.n {
                if !seen[v] && step(u, v) {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }
}

/// Irreducible diagonal dominance: irreducible, weakly row-dominant everywhere,
/// strictly dominant in at least one row.
pub fn check_idd(m: &Matrix) -> Result<bool> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let n = m.nrows();
    let mut dominant = true;
    let mut strict = false;
    for i in 0..n {
        let diag = m[(i, i)].abs();
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
        dominant &= diag >= off;
        strict |= diag > off;
    }
    Ok(dominant && strict && is_irreducible(m))
}

/// Irreducible iff the transitive closure of the pattern `|m| > 0` (with unit
/// diagonal) is fully positive.
fn is_irreducible(m: &Matrix) -> bool {
    let n = m.nrows();
    let mut reach: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| i == j || m[(i, j)] != 0.0).collect())
        .collect();
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    reach.iter().all(|row| row.iter().all(|&v| v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matrix_from_rows;

    fn three_cycle() -> DiGraph {
        DiGraph::from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap()
    }

    #[test]
    fn laplacian_examples() {
        assert_eq!(DiGraph::empty(1).unwrap().laplacian(), Matrix::zeros(1, 1));

        let two = DiGraph::complete(2).unwrap();
        let expected = matrix_from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        assert_eq!(two.laplacian(), expected);

        let expected = matrix_from_rows(&[
            vec![1.0, 0.0, -1.0],
            vec![-1.0, 1.0, 0.0],
            vec![0.0, -1.0, 1.0],
        ])
        .unwrap();
        assert_eq!(three_cycle().laplacian(), expected);
    }

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let l = DiGraph::tracking_network().laplacian();
        for i in 0..5 {
            assert_eq!(l.row(i).sum(), 0.0);
        }
    }

    #[test]
    fn strong_connectivity_examples() {
        assert!(three_cycle().is_strongly_connected());
        let one_way = DiGraph::from_edges(2, &[(0, 1)]).unwrap();
        assert!(!one_way.is_strongly_connected());
        assert!(DiGraph::empty(1).unwrap().is_strongly_connected());
    }

    #[test]
    fn tracking_network_matches_warshall_closure() {
        let g = DiGraph::tracking_network();
        assert!(!g.is_symmetric());
        let mut reach = [[false; 5]; 5];
        for (i, row) in reach.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = i == j || g.has_edge(i, j);
            }
        }
        for k in 0..5 {
            for i in 0..5 {
                for j in 0..5 {
                    reach[i][j] |= reach[i][k] && reach[k][j];
                }
            }
        }
        assert!(reach.iter().all(|r| r.iter().all(|&v| v)));
        assert!(g.is_strongly_connected());
    }

    #[test]
    fn rejects_self_loops_and_bad_nodes() {
        assert!(DiGraph::from_edges(2, &[(1, 1)]).is_err());
        assert!(DiGraph::from_edges(2, &[(0, 2)]).is_err());
        assert!(DiGraph::empty(0).is_err());
    }

    #[test]
    fn idd_examples() {
        assert!(!check_idd(&Matrix::identity(2, 2)).unwrap());
        let m = matrix_from_rows(&[vec![2.0, -1.0], vec![-1.0, 2.0]]).unwrap();
        assert!(check_idd(&m).unwrap());

        // Two-node bidirectional, r1 = r2 = 1: L (x) I_2 + B with B = diag(0,1,1,0).
        // Components {0, 2} and {1, 3} never interact, so the 4x4 is
        // reducible; each 2x2 channel block is IDD.
        let lb = matrix_from_rows(&[
            vec![1.0, 0.0, -1.0, 0.0],
            vec![0.0, 2.0, 0.0, -1.0],
            vec![-1.0, 0.0, 2.0, 0.0],
            vec![0.0, -1.0, 0.0, 1.0],
        ])
        .unwrap();
        assert!(!check_idd(&lb).unwrap());
        let first = matrix_from_rows(&[vec![1.0, -1.0], vec![-1.0, 2.0]]).unwrap();
        let second = matrix_from_rows(&[vec![2.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        assert_eq!(lb.select_rows(&[0, 2]).select_columns(&[0, 2]), first);
        assert_eq!(lb.select_rows(&[1, 3]).select_columns(&[1, 3]), second);
        assert!(check_idd(&first).unwrap());
        assert!(check_idd(&second).unwrap());
        assert!(check_idd(&Matrix::zeros(2, 3)).is_err());
    }

    /// Brute-force path enumeration: is there a simple path from `s` to `t`?
    fn path_exists(g: &DiGraph, s: usize, t: usize, visited: &mut Vec<bool>) -> bool {
        if s == t {
            return true;
        }
        visited[s] = true;
        let found = (0..g.node_count())
            .any(|v| !visited[v] && g.has_edge(s, v) && path_exists(g, v, t, visited));
        visited[s] = false;
        found
    }

    #[test]
    fn strong_connectivity_exhaustive_up_to_four_nodes() {
        for n in 1..=4usize {
            let pairs: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .collect();
            for mask in 0u32..(1 << pairs.len()) {
                let edges: Vec<_> = pairs
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| mask & (1 << b) != 0)
                    .map(|(_, &e)| e)
                    .collect();
                let g = DiGraph::from_edges(n, &edges).unwrap();
                let oracle = (0..n).all(|s| {
                    (0..n).all(|t| path_exists(&g, s, t, &mut vec![false; n]))
                });
                assert_eq!(g.is_strongly_connected(), oracle, "n={n} edges={edges:?}");
            }
        }
    }
}
