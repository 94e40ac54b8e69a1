//! Encoder Kalman filter, decoder estimator and the estimation mismatch.
//!
//! The encoder fuses all sensors with an inverse-covariance filter. The
//! error covariances `Y_k` do not depend on data, so they are computed once
//! as a [`CovarianceSchedule`]. The decoder only sees the encoder estimate
//! when a packet arrives one step later. Otherwise it propagates its own
//! estimate open loop, with no correction for what silence implies.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg;
use crate::model::{AggregateSensor, ProcessModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("{what} is singular at stage {stage}; the model is ill-posed")]
    Singular { what: &'static str, stage: usize },
    #[error("payload must be present exactly when delta = 1 (delta = {delta}, payload present = {present})")]
    PayloadMismatch { delta: bool, present: bool },
}

/// Offline error-covariance sequences of the encoder filter, `k = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSchedule {
    /// `Y_k = Cov[x_k | I^e_k]`.
    pub y: Vec<DMatrix<f64>>,
    /// `Θ_k = A_k Y_k A_kᵀ + W_k`.
    pub theta: Vec<DMatrix<f64>>,
    /// Innovation covariance `N_k = C_k Θ_{k-1} C_kᵀ + V_k`, with `Θ_{-1} = M_0`.
    pub innovation_cov: Vec<DMatrix<f64>>,
    /// `K_k = Y_k C_kᵀ V_k⁻¹`.
    pub gain: Vec<DMatrix<f64>>,
    /// `Y_k Θ_{k-1}⁻¹`, the weight on the prediction in the information form.
    pub prior_weight: Vec<DMatrix<f64>>,
}

impl CovarianceSchedule {
    pub fn stages(&self) -> usize {
        self.y.len()
    }

    /// `K_k N_k K_kᵀ`, the covariance of the fresh part of `ẽ_k`.
    pub fn mismatch_innovation_cov(&self, k: usize) -> DMatrix<f64> {
        linalg::symmetrize(&(&self.gain[k] * &self.innovation_cov[k] * self.gain[k].transpose()))
    }
}

/// Information-form schedule. Per-sensor information `C^iᵀ V^i⁻¹ C^i` is
/// summed; every inverse goes through a Cholesky factorization.
pub fn covariance_schedule(
    model: &ProcessModel,
    sensors: &AggregateSensor,
) -> Result<CovarianceSchedule, EstimationError> {
    let stages = model.stages();
    let mut y = Vec::with_capacity(stages);
    let mut theta = Vec::with_capacity(stages);
    let mut innovation_cov = Vec::with_capacity(stages);
    let mut gain = Vec::with_capacity(stages);
    let mut prior_weight = Vec::with_capacity(stages);

    let mut prior = model.cov0().clone();
    for k in 0..stages {
        let prior_inv = linalg::spd_inverse(&prior).ok_or(EstimationError::Singular {
            what: if k == 0 { "M0" } else { "Theta" },
            stage: k.saturating_sub(1),
        })?;

        let mut info = prior_inv.clone();
        let mut gain_blocks = Vec::with_capacity(model.sensor_count());
        let mut v_inv_c = Vec::with_capacity(model.sensor_count());
        for i in 0..model.sensor_count() {
            let c = model.c(i, k);
            let v_inv = linalg::spd_inverse(model.v(i, k))
                .ok_or(EstimationError::Singular { what: "V", stage: k })?;
            info += c.transpose() * &v_inv * c;
            v_inv_c.push(v_inv);
        }
        let yk = linalg::spd_inverse(&info).ok_or(EstimationError::Singular { what: "Y", stage: k })?;
        for (i, v_inv) in v_inv_c.iter().enumerate() {
            gain_blocks.push(&yk * model.c(i, k).transpose() * v_inv);
        }
        let c = &sensors.c[k];
        let n_k = linalg::symmetrize(&(c * &prior * c.transpose() + &sensors.v[k]));

        let a = model.a(k);
        let theta_k = linalg::symmetrize(&(a * &yk * a.transpose() + model.w(k)));

        prior_weight.push(&yk * &prior_inv);
        gain.push(linalg::hstack(&gain_blocks));
        innovation_cov.push(n_k);
        prior = theta_k.clone();
        theta.push(theta_k);
        y.push(yk);
    }

    Ok(CovarianceSchedule {
        y,
        theta,
        innovation_cov,
        gain,
        prior_weight,
    })
}

/// Encoder MMSE estimate `x̌_k = E[x_k | I^e_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub stage: usize,
    pub estimate: DVector<f64>,
}

impl EncoderState {
    /// `x̌_0 = Y_0 M_0⁻¹ m_0 + Y_0 C_0ᵀ V_0⁻¹ y_0`.
    pub fn initial(model: &ProcessModel, schedule: &CovarianceSchedule, y0: &DVector<f64>) -> Self {
        let estimate = &schedule.prior_weight[0] * model.m0() + &schedule.gain[0] * y0;
        Self { stage: 0, estimate }
    }

    /// `A_k x̌_k + B_k u_k`.
    pub fn predict(&self, model: &ProcessModel, u: &DVector<f64>) -> DVector<f64> {
        let k = self.stage;
        model.a(k) * &self.estimate + model.b(k) * u
    }
}

/// Inverse-covariance update with the stacked output `y_{k+1}`:
/// `x̌_{k+1} = Y_{k+1} Θ_k⁻¹ (A_k x̌_k + B_k u_k) + Σ_i Y_{k+1} C^iᵀ V^i⁻¹ y^i_{k+1}`.
pub fn encoder_update(
    state: &EncoderState,
    model: &ProcessModel,
    schedule: &CovarianceSchedule,
    y_next: &DVector<f64>,
    u: &DVector<f64>,
) -> EncoderState {
    let next = state.stage + 1;
    let predicted = state.predict(model, u);
    let estimate = &schedule.prior_weight[next] * predicted + &schedule.gain[next] * y_next;
    EncoderState { stage: next, estimate }
}

/// Aggregate-innovation form `x̌_{k+1} = A_k x̌_k + B_k u_k + K_{k+1} ν_{k+1}`.
pub fn encoder_update_innovation(
    state: &EncoderState,
    model: &ProcessModel,
    sensors: &AggregateSensor,
    schedule: &CovarianceSchedule,
    y_next: &DVector<f64>,
    u: &DVector<f64>,
) -> EncoderState {
    let next = state.stage + 1;
    let nu = innovation(state, model, sensors, y_next, u);
    let estimate = state.predict(model, u) + &schedule.gain[next] * nu;
    EncoderState { stage: next, estimate }
}

/// `ν_{k+1} = y_{k+1} − C_{k+1}(A_k x̌_k + B_k u_k)`.
pub fn innovation(
    state: &EncoderState,
    model: &ProcessModel,
    sensors: &AggregateSensor,
    y_next: &DVector<f64>,
    u: &DVector<f64>,
) -> DVector<f64> {
    y_next - &sensors.c[state.stage + 1] * state.predict(model, u)
}

/// `ν_0 = y_0 − C_0 m_0`.
pub fn initial_innovation(model: &ProcessModel, sensors: &AggregateSensor, y0: &DVector<f64>) -> DVector<f64> {
    y0 - &sensors.c[0] * model.m0()
}

/// Decoder MMSE estimate `x̂_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub stage: usize,
    pub estimate: DVector<f64>,
}

impl DecoderState {
    /// `x̂_0 = m_0`.
    pub fn initial(model: &ProcessModel) -> Self {
        Self {
            stage: 0,
            estimate: model.m0().clone(),
        }
    }
}

/// One decoder step. A payload carries `x̌_k` and must be present exactly
/// when `δ_k = 1`; it then lands as `x̂_{k+1} = A_k x̌_k + B_k u_k`.
/// Without it, `x̂_{k+1} = A_k x̂_k + B_k u_k`.
pub fn decoder_step(
    state: &DecoderState,
    model: &ProcessModel,
    u: &DVector<f64>,
    delta: bool,
    payload: Option<&DVector<f64>>,
) -> Result<DecoderState, EstimationError> {
    let k = state.stage;
    let base = match (delta, payload) {
        (true, Some(x_check)) => x_check,
        (false, None) => &state.estimate,
        (delta, payload) => {
            return Err(EstimationError::PayloadMismatch {
                delta,
                present: payload.is_some(),
            })
        }
    };
    Ok(DecoderState {
        stage: k + 1,
        estimate: model.a(k) * base + model.b(k) * u,
    })
}

/// `ẽ_{k+1} = (1 − δ_k) A_k ẽ_k + K_{k+1} ν_{k+1}`.
pub fn mismatch_step(
    model: &ProcessModel,
    schedule: &CovarianceSchedule,
    mismatch: &DVector<f64>,
    delta: bool,
    nu_next: &DVector<f64>,
    k: usize,
) -> DVector<f64> {
    let fresh = &schedule.gain[k + 1] * nu_next;
    if delta {
        fresh
    } else {
        model.a(k) * mismatch + fresh
    }
}

/// `ẽ_0 = K_0 ν_0`.
pub fn initial_mismatch(schedule: &CovarianceSchedule, nu0: &DVector<f64>) -> DVector<f64> {
    &schedule.gain[0] * nu0
}
