//! Finite-horizon Riccati synthesis and the certainty-equivalent controller.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg;
use crate::model::ProcessModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiccatiError {
    #[error("Lambda = B'SB + R is numerically singular at stage {0}")]
    SingularLambda(usize),
}

/// Backward Riccati sequences and the derived quantities shared by the
/// controller and the trigger synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    /// `S_k`, `k = 0..=N+1`, with `S_{N+1} = Q_{N+1}`.
    pub s: Vec<DMatrix<f64>>,
    /// `L_k = Λ_k⁻¹ B_kᵀ S_{k+1} A_k`, `k = 0..=N`.
    pub gain: Vec<DMatrix<f64>>,
    /// `Λ_k = B_kᵀ S_{k+1} B_k + R_k`, `k = 0..=N`.
    pub lambda_mat: Vec<DMatrix<f64>>,
    /// `Γ_k = L_kᵀ Λ_k L_k`, `k = 0..=N+1`; `Γ_{N+1} = 0`.
    pub gamma: Vec<DMatrix<f64>>,
    /// Transmission price `θ_k = ℓ_k (1 − λ) / λ`, `k = 0..=N`.
    pub price: Vec<f64>,
    /// Policy-independent part of the regulation cost:
    /// `E[x_0ᵀ(S_0 − Q_0)x_0] + Σ_k tr(S_{k+1} W_k)`.
    pub kappa: f64,
}

impl RiccatiSolution {
    pub fn horizon(&self) -> usize {
        self.gain.len() - 1
    }

    /// `Γ_k`, zero outside `0..=N`.
    pub fn gamma(&self, k: usize) -> &DMatrix<f64> {
        &self.gamma[k.min(self.gamma.len() - 1)]
    }

    /// `θ_k`, zero outside `0..=N`.
    pub fn price(&self, k: usize) -> f64 {
        self.price.get(k).copied().unwrap_or(0.0)
    }
}

/// Backward recursion from `S_{N+1} = Q_{N+1}`, symmetrizing each step.
///
/// `Q_0` enters `S_0` but the regulation cost starts at `x_1`, so `κ`
/// subtracts `E[x_0ᵀ Q_0 x_0]` to keep `(N+1)Φ = λ(Ψ + κ)` exact.
pub fn riccati_backward(model: &ProcessModel) -> Result<RiccatiSolution, RiccatiError> {
    let stages = model.stages();
    let n = model.state_dim();
    let mut s = vec![DMatrix::zeros(n, n); stages + 1];
    let mut gain = vec![DMatrix::zeros(model.input_dim(), n); stages];
    let mut lambda_mat = vec![DMatrix::zeros(model.input_dim(), model.input_dim()); stages];
    let mut gamma = vec![DMatrix::zeros(n, n); stages + 1];

    s[stages] = linalg::symmetrize(model.q(stages));
    for k in (0..stages).rev() {
        let (a, b) = (model.a(k), model.b(k));
        let s_next = &s[k + 1];
        let bt_s = b.transpose() * s_next;
        let lam = linalg::symmetrize(&(&bt_s * b + model.r(k)));
        let l = linalg::spd_solve(&lam, &(&bt_s * a)).ok_or(RiccatiError::SingularLambda(k))?;
        let g = linalg::symmetrize(&(l.transpose() * &lam * &l));
        s[k] = linalg::symmetrize(&(model.q(k) + a.transpose() * s_next * a - &g));
        gain[k] = l;
        lambda_mat[k] = lam;
        gamma[k] = g;
    }

    let lambda = model.lambda();
    let price = (0..stages)
        .map(|k| model.rate_weight(k) * (1.0 - lambda) / lambda)
        .collect();

    let initial_weight = &s[0] - model.q(0);
    let mut kappa = linalg::quad_form(&initial_weight, model.m0()) + (&initial_weight * model.cov0()).trace();
    for k in 0..stages {
        kappa += (&s[k + 1] * model.w(k)).trace();
    }

    Ok(RiccatiSolution {
        s,
        gain,
        lambda_mat,
        gamma,
        price,
        kappa,
    })
}

/// `u_k = −L_k x̂_k`.
pub fn ce_control(sol: &RiccatiSolution, x_hat: &DVector<f64>, k: usize) -> DVector<f64> {
    -(&sol.gain[k] * x_hat)
}

/// `ς_k = (u_k + L_k x_k)ᵀ Λ_k (u_k + L_k x_k)`.
pub fn stage_cost_terms(sol: &RiccatiSolution, x: &DVector<f64>, u: &DVector<f64>, k: usize) -> f64 {
    let d = u + &sol.gain[k] * x;
    linalg::quad_form(&sol.lambda_mat[k], &d)
}
