//! Weighted undirected communication graph among aggregators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{GneError, Result};

/// Below this the second-smallest Laplacian eigenvalue counts as zero.
pub const CONNECTIVITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CommGraph {
    n: usize,
    edges: Vec<Edge>,
    /// Per node, `(neighbour, weight)` sorted by neighbour id.
    neighbors: Vec<Vec<(usize, f64)>>,
    laplacian: DMatrix<f64>,
    lambda_max: f64,
    algebraic_connectivity: f64,
}

impl CommGraph {
    /// Build from 0-based `(a, b, weight)` triples. The graph must be connected.
    pub fn new(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if n < 2 {
            return Err(GneError::InvalidGraph(format!("need >= 2 nodes, got {n}")));
        }
        let mut weights = DMatrix::<f64>::zeros(n, n);
        let mut kept = Vec::with_capacity(edges.len());
        for &(a, b, w) in edges {
            if a >= n || b >= n {
                return Err(GneError::InvalidGraph(format!(
                    "edge {}-{} references a node outside 1..{}",
                    a + 1,
                    b + 1,
                    n
                )));
            }
            if a == b {
                return Err(GneError::InvalidGraph(format!("self-loop at node {}", a + 1)));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(GneError::InvalidGraph(format!(
                    "edge {}-{} has non-positive weight {w}",
                    a + 1,
                    b + 1
                )));
            }
            if weights[(a, b)] != 0.0 {
                return Err(GneError::InvalidGraph(format!(
                    "duplicate edge {}-{}",
                    a + 1,
                    b + 1
                )));
            }
            weights[(a, b)] = w;
            weights[(b, a)] = w;
            kept.push(Edge { a, b, weight: w });
        }

        let mut laplacian = -weights.clone();
        for i in 0..n {
            laplacian[(i, i)] = weights.row(i).sum();
        }
        let neighbors = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| weights[(i, j)] != 0.0)
                    .map(|j| (j, weights[(i, j)]))
                    .collect()
            })
            .collect();

        let mut eig = SymmetricEigen::new(laplacian.clone()).eigenvalues;
        eig.as_mut_slice().sort_by(|x, y| x.total_cmp(y));
        let algebraic_connectivity = eig[1];
        let lambda_max = eig[n - 1];
        if algebraic_connectivity <= CONNECTIVITY_TOL {
            return Err(GneError::DisconnectedGraph(algebraic_connectivity));
        }
        Ok(Self {
            n,
            edges: kept,
            neighbors,
            laplacian,
            lambda_max,
            algebraic_connectivity,
        })
    }

    /// Ring `0-1-...-(n-1)-0` with unit weights (a single edge for `n = 2`).
    pub fn ring(n: usize) -> Result<Self> {
        let edges: Vec<_> = if n == 2 {
            vec![(0, 1, 1.0)]
        } else {
            (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect()
        };
        Self::new(n, &edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }
    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }
    pub fn algebraic_connectivity(&self) -> f64 {
        self.algebraic_connectivity
    }

    pub fn are_neighbors(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].iter().any(|&(k, _)| k == j)
    }
}

/// Apply `L ⊗ I_M` to per-node vectors: node `n` receives
/// `sum_m w_nm (v_n - v_m)`.
pub fn neighbor_mix(g: &CommGraph, v: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    if v.len() != g.n {
        return Err(GneError::Dimension {
            what: "per-node vectors",
            expected: g.n,
            got: v.len(),
        });
    }
    let width = v[0].len();
    if let Some(bad) = v.iter().find(|x| x.len() != width) {
        return Err(GneError::Dimension {
            what: "node vector width",
            expected: width,
            got: bad.len(),
        });
    }
    Ok((0..g.n)
        .map(|i| {
            let mut acc = DVector::zeros(width);
            for &(j, w) in &g.neighbors[i] {
                acc += (&v[i] - &v[j]) * w;
            }
            acc
        })
        .collect())
}
