//! Gauss-Hermite quadrature for expectations under a standard normal.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights with `Σ w_j f(z_j) ≈ E[f(Z)]`, `Z ~ N(0, 1)`.
///
/// An `m`-node rule is exact for polynomials of degree `2m − 1`. Nodes are
/// sorted ascending and exactly antisymmetric (`z_j = −z_{m−1−j}`, with an
/// exact zero for odd `m`); weights are exactly symmetric and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub-Welsch on the Jacobi matrix of the probabilists' Hermite
    /// polynomials (off-diagonal `sqrt(k)`).
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "quadrature order must be positive");
        let mut jacobi = DMatrix::zeros(order, order);
        for k in 1..order {
            let off = (k as f64).sqrt();
            jacobi[(k - 1, k)] = off;
            jacobi[(k, k - 1)] = off;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|j| (eig.eigenvalues[j], eig.eigenvectors[(0, j)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut nodes = vec![0.0; order];
        let mut weights = vec![0.0; order];
        for j in 0..order {
            let mirror = order - 1 - j;
            nodes[j] = 0.5 * (pairs[j].0 - pairs[mirror].0);
            weights[j] = 0.5 * (pairs[j].1 + pairs[mirror].1);
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        for j in 0..order / 2 {
            let mirror = order - 1 - j;
            weights[mirror] = weights[j];
            nodes[mirror] = -nodes[j];
        }
        if order % 2 == 1 {
            nodes[order / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// `E[f(mean + std·Z)]`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mean: f64, std: f64, mut f: F) -> f64 {
        self.iter().map(|(z, w)| w * f(mean + std * z)).sum()
    }
}
