//! Reference instances: the standard scalar problem and random models.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::design::Design;
use crate::model::{ModelParts, ProcessModel, SensorParts, Stationary};

/// Horizon of the standard scalar instance.
pub const STANDARD_HORIZON: usize = 9;

/// `A = B = C = W = V = M_0 = Q = R = ℓ = 1`, `m_0 = 0`.
pub fn standard_scalar_model(lambda: f64) -> Stationary {
    Stationary::scalar(1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, lambda)
}

pub fn standard_scalar(horizon: usize, lambda: f64) -> Design {
    let model = ProcessModel::from_stationary(horizon, &standard_scalar_model(lambda))
        .expect("standard instance is valid");
    Design::new(model).expect("standard instance is valid")
}

fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `G Gᵀ / dim + floor·I`.
fn random_spd<R: Rng + ?Sized>(dim: usize, floor: f64, rng: &mut R) -> DMatrix<f64> {
    let g = gaussian_matrix(dim, dim, rng);
    &g * g.transpose() / dim as f64 + DMatrix::identity(dim, dim) * floor
}

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Random time-varying model with `n` states, `sensors` sensors of 1–2
/// outputs each, and every `A_k` scaled to spectral radius in `[0.5, 1.1]`.
pub fn random_model<R: Rng + ?Sized>(n: usize, sensors: usize, horizon: usize, rng: &mut R) -> ProcessModel {
    let stages = horizon + 1;
    let m = rng.random_range(1..=n.min(2));
    let dims: Vec<usize> = (0..sensors).map(|_| rng.random_range(1..=2)).collect();
    let a = (0..stages)
        .map(|_| {
            let raw = gaussian_matrix(n, n, rng);
            let radius = spectral_radius(&raw).max(1e-6);
            raw * (rng.random_range(0.5..=1.1) / radius)
        })
        .collect();
    let parts = ModelParts {
        horizon,
        a,
        b: (0..stages).map(|_| gaussian_matrix(n, m, rng)).collect(),
        w: (0..stages).map(|_| random_spd(n, 0.1, rng)).collect(),
        sensors: dims
            .iter()
            .map(|&p| SensorParts {
                c: (0..stages).map(|_| gaussian_matrix(p, n, rng)).collect(),
                v: (0..stages).map(|_| random_spd(p, 0.1, rng)).collect(),
            })
            .collect(),
        m0: DVector::from_fn(n, |_, _| rng.sample(StandardNormal)),
        cov0: random_spd(n, 0.2, rng),
        q: (0..stages + 1).map(|_| random_spd(n, 0.0, rng)).collect(),
        r: (0..stages).map(|_| random_spd(m, 0.1, rng)).collect(),
        rate_weights: (0..stages).map(|_| rng.random_range(0.5..2.0)).collect(),
        lambda: rng.random_range(0.1..0.9),
    };
    ProcessModel::new(parts).expect("random model is structurally valid")
}
