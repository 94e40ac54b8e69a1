//! Brute-force references: batch MMSE estimation, exhaustive trigger search
//! on tiny scalar instances, and Monte Carlo rollouts of the mismatch
//! process.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::design::Design;
use crate::linalg;
use crate::model::{aggregate_sensors, ProcessModel};
use crate::quadrature::GaussHermite;
use crate::rng::episode_rng;
use crate::sim::{map_episodes, Estimate, Moments};
use crate::voidp::ValueTable;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("joint output covariance is singular at stage {0}")]
    SingularJoint(usize),
    #[error("got {outputs} outputs and {inputs} inputs; need one input fewer than outputs")]
    LengthMismatch { outputs: usize, inputs: usize },
    #[error("enumeration needs a scalar model with horizon <= 2, got n = {state_dim}, N = {horizon}")]
    TooLarge { state_dim: usize, horizon: usize },
    #[error("enumeration family has 2^{bits} labelings, over the budget 2^{budget_bits}")]
    BudgetExceeded { bits: u32, budget_bits: u32 },
    #[error("quadrature order must be at least 1")]
    QuadratureOrder,
}

/// `E[x_t | y_0..y_t, u_0..u_{t−1}]` for every `t`, from the joint Gaussian
/// law of `(x_0, w_0, …, w_{t−1})` and the stacked outputs.
pub fn batch_mmse(
    model: &ProcessModel,
    outputs: &[DVector<f64>],
    inputs: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>, OracleError> {
    if outputs.is_empty() || inputs.len() + 1 != outputs.len() {
        return Err(OracleError::LengthMismatch {
            outputs: outputs.len(),
            inputs: inputs.len(),
        });
    }
    let n = model.state_dim();
    let sensors = aggregate_sensors(model);

    // x_t = H_t ξ + d_t with ξ = (x_0, w_0, …, w_{T−1}).
    let last = outputs.len() - 1;
    let dim = n * (last + 1);
    let mut h = Vec::with_capacity(last + 1);
    let mut d = Vec::with_capacity(last + 1);
    let mut ht = DMatrix::zeros(n, dim);
    ht.view_mut((0, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
    let mut dt = DVector::zeros(n);
    h.push(ht.clone());
    d.push(dt.clone());
    for (t, u) in inputs.iter().enumerate().take(last) {
        ht = model.a(t) * &ht;
        let mut block = ht.view_mut((0, n * (t + 1)), (n, n));
        block += DMatrix::<f64>::identity(n, n);
        dt = model.a(t) * &dt + model.b(t) * u;
        h.push(ht.clone());
        d.push(dt.clone());
    }

    let mut prior_mean = DVector::zeros(dim);
    prior_mean.rows_mut(0, n).copy_from(model.m0());
    let mut prior_cov = DMatrix::zeros(dim, dim);
    prior_cov.view_mut((0, 0), (n, n)).copy_from(model.cov0());
    for t in 0..last {
        prior_cov
            .view_mut((n * (t + 1), n * (t + 1)), (n, n))
            .copy_from(model.w(t));
    }

    let mut estimates = Vec::with_capacity(last + 1);
    for t in 0..=last {
        let g = linalg::vstack(&(0..=t).map(|s| &sensors.c[s] * &h[s]).collect::<Vec<_>>());
        let offset = linalg::vconcat(&(0..=t).map(|s| &sensors.c[s] * &d[s]).collect::<Vec<_>>());
        let noise = linalg::block_diag(&(0..=t).map(|s| sensors.v[s].clone()).collect::<Vec<_>>());
        let y = linalg::vconcat(&outputs[..=t]);
        let pg = &prior_cov * g.transpose();
        let joint = linalg::symmetrize(&(&g * &pg + noise));
        let chol = Cholesky::new(joint).ok_or(OracleError::SingularJoint(t))?;
        let resid = y - &g * &prior_mean - offset;
        let posterior = &prior_mean + pg * chol.solve(&resid);
        estimates.push(&h[t] * posterior + &d[t]);
    }
    Ok(estimates)
}

/// Scalar mismatch-process coefficients per stage `k = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
struct MismatchLaw {
    a: Vec<f64>,
    /// `A_k² Γ_{k+1}`.
    q: Vec<f64>,
    /// `tr(A_kᵀΓ_{k+1}A_kY_k + Γ_{k+1}W_k)`.
    c: Vec<f64>,
    price: Vec<f64>,
    /// `sqrt(K_k N_k K_kᵀ)`.
    spread: Vec<f64>,
}

impl MismatchLaw {
    fn new(design: &Design) -> Self {
        let m = &design.model;
        let stages = m.stages();
        let mut law = Self {
            a: Vec::with_capacity(stages),
            q: Vec::with_capacity(stages),
            c: Vec::with_capacity(stages),
            price: Vec::with_capacity(stages),
            spread: Vec::with_capacity(stages),
        };
        for k in 0..stages {
            let a = m.a(k)[(0, 0)];
            let g = design.riccati.gamma(k + 1)[(0, 0)];
            law.a.push(a);
            law.q.push(a * a * g);
            law.c.push(a * a * g * design.schedule.y[k][(0, 0)] + g * m.w(k)[(0, 0)]);
            law.price.push(design.riccati.price(k));
            law.spread.push(design.schedule.mismatch_innovation_cov(k)[(0, 0)].max(0.0).sqrt());
        }
        law
    }

    /// `θδ + (1−δ)qẽ² + c` at stage `k`.
    fn stage_cost(&self, k: usize, e: f64, delta: bool) -> f64 {
        let base = if delta { self.price[k] } else { self.q[k] * e * e };
        base + self.c[k]
    }

    fn next(&self, k: usize, e: f64, delta: bool, z: f64) -> f64 {
        let carried = if delta { 0.0 } else { self.a[k] * e };
        carried + self.spread[k + 1] * z
    }
}

/// Scalar instance small enough for exhaustive trigger search.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub design: Design,
    pub quad_order: usize,
    /// Maximum family size as a power of two.
    pub budget_bits: u32,
}

pub const DEFAULT_ORACLE_ORDER: usize = 9;
pub const DEFAULT_BUDGET_BITS: u32 = 27;

impl TinyInstance {
    pub fn new(design: Design, quad_order: usize) -> Result<Self, OracleError> {
        if design.state_dim() != 1 || design.horizon() > 2 {
            return Err(OracleError::TooLarge {
                state_dim: design.state_dim(),
                horizon: design.horizon(),
            });
        }
        if quad_order == 0 {
            return Err(OracleError::QuadratureOrder);
        }
        Ok(Self {
            design,
            quad_order,
            budget_bits: DEFAULT_BUDGET_BITS,
        })
    }

    /// `log2` of the family size: one bit for `δ_0`, one per node per later stage.
    pub fn family_bits(&self) -> u32 {
        (1 + self.quad_order * self.design.horizon()) as u32
    }
}

/// A deterministic trigger on the quadrature tree from a fixed `ẽ_0`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Labeling {
    pub first: bool,
    /// `stages[t-1][j]` is `δ_t` when the stage-`t` innovation sits on node `j`.
    /// Labels at stage 2 are shared across stage-1 nodes.
    pub stages: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeOptimum {
    /// Initial mismatch `ẽ_0`.
    pub start: f64,
    pub value: f64,
    /// Best value given `δ_0 = 0` and `δ_0 = 1`.
    pub value_by_first: [f64; 2],
    pub labeling: Labeling,
}

impl NodeOptimum {
    /// Whether every labeled stage fires exactly on the nodes with the
    /// largest `|ẽ|`. Stage-1 coordinates follow from `ẽ_0` and `δ_0`;
    /// shared stage-2 labels are read against the reset law `s_2 z_j`.
    pub fn is_threshold_type(&self, instance: &TinyInstance) -> bool {
        let law = MismatchLaw::new(&instance.design);
        let gh = GaussHermite::new(instance.quad_order);
        self.labeling.stages.iter().enumerate().all(|(i, labels)| {
            let t = i + 1;
            let coords: Vec<f64> = gh
                .nodes()
                .iter()
                .map(|&z| match t {
                    1 => law.next(0, self.start, self.labeling.first, z),
                    _ => law.spread[t] * z,
                })
                .collect();
            threshold_in_magnitude(&coords, labels)
        })
    }
}

/// `max |x| over unlabeled < min |x| over labeled`.
pub fn threshold_in_magnitude(coords: &[f64], labels: &[bool]) -> bool {
    let quiet = coords
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(x, _)| x.abs())
        .fold(f64::NEG_INFINITY, f64::max);
    let loud = coords
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(x, _)| x.abs())
        .fold(f64::INFINITY, f64::min);
    quiet < loud
}

/// Exact minimum of the expected cost over the labeling family, for each
/// starting mismatch in `starts`.
///
/// `δ_0` and the shared last-stage labels are enumerated outright. For
/// `N = 2` the cost is additive over stage-1 nodes once those are fixed, so
/// each stage-1 label is minimized node by node, which is exact for the
/// family.
pub fn enumerate_policies(instance: &TinyInstance, starts: &[f64]) -> Result<Vec<NodeOptimum>, OracleError> {
    let bits = instance.family_bits();
    if bits > instance.budget_bits {
        return Err(OracleError::BudgetExceeded {
            bits,
            budget_bits: instance.budget_bits,
        });
    }
    let law = MismatchLaw::new(&instance.design);
    let gh = GaussHermite::new(instance.quad_order);
    let horizon = instance.design.horizon();
    Ok(starts.iter().map(|&e| optimize_from(&law, &gh, horizon, e)).collect())
}

fn optimize_from(law: &MismatchLaw, gh: &GaussHermite, horizon: usize, e0: f64) -> NodeOptimum {
    let q = gh.order();
    let mut value_by_first = [f64::INFINITY; 2];
    let mut labels_by_first: [Option<Vec<Vec<bool>>>; 2] = [None, None];

    for first in [false, true] {
        let root = law.stage_cost(0, e0, first);
        let (value, labels) = match horizon {
            0 => (root, vec![]),
            1 => {
                // Stage-1 labels are per node and the cost is additive.
                let mut total = root;
                let mut labels = Vec::with_capacity(q);
                for (z, w) in gh.iter() {
                    let e1 = law.next(0, e0, first, z);
                    let (c0, c1) = (law.stage_cost(1, e1, false), law.stage_cost(1, e1, true));
                    labels.push(c1 < c0);
                    total += w * c0.min(c1);
                }
                (total, vec![labels])
            }
            _ => {
                let mut best = (f64::INFINITY, vec![]);
                for mask in 0u64..(1 << q) {
                    let last: Vec<bool> = (0..q).map(|j| mask >> j & 1 == 1).collect();
                    let mut total = root;
                    let mut middle = Vec::with_capacity(q);
                    for (z1, w1) in gh.iter() {
                        let e1 = law.next(0, e0, first, z1);
                        let branch = |d1: bool| {
                            law.stage_cost(1, e1, d1)
                                + gh
                                    .iter()
                                    .zip(&last)
                                    .map(|((z2, w2), &d2)| w2 * law.stage_cost(2, law.next(1, e1, d1, z2), d2))
                                    .sum::<f64>()
                        };
                        let (c0, c1) = (branch(false), branch(true));
                        middle.push(c1 < c0);
                        total += w1 * c0.min(c1);
                        if total >= best.0 {
                            break;
                        }
                    }
                    if total < best.0 {
                        best = (total, vec![middle, last]);
                    }
                }
                best
            }
        };
        value_by_first[usize::from(first)] = value;
        labels_by_first[usize::from(first)] = Some(labels);
    }

    let first = value_by_first[1] < value_by_first[0];
    NodeOptimum {
        start: e0,
        value: value_by_first[usize::from(first)],
        value_by_first,
        labeling: Labeling {
            first,
            stages: labels_by_first[usize::from(first)].take().expect("both branches evaluated"),
        },
    }
}

/// Literal enumeration of every labeling; exponential, for cross-checks.
pub fn brute_force_value(instance: &TinyInstance, e0: f64) -> f64 {
    let law = MismatchLaw::new(&instance.design);
    let gh = GaussHermite::new(instance.quad_order);
    let (horizon, q) = (instance.design.horizon(), instance.quad_order);
    let bits = 1 + q * horizon;
    let mut best = f64::INFINITY;
    for mask in 0u64..(1 << bits) {
        let first = mask & 1 == 1;
        let label = |t: usize, j: usize| mask >> (1 + (t - 1) * q + j) & 1 == 1;
        let mut total = law.stage_cost(0, e0, first);
        if horizon >= 1 {
            for (j1, (z1, w1)) in gh.iter().enumerate() {
                let e1 = law.next(0, e0, first, z1);
                let d1 = label(1, j1);
                total += w1 * law.stage_cost(1, e1, d1);
                if horizon == 2 {
                    for (j2, (z2, w2)) in gh.iter().enumerate() {
                        total += w1 * w2 * law.stage_cost(2, law.next(1, e1, d1, z2), label(2, j2));
                    }
                }
            }
        }
        best = best.min(total);
    }
    best
}

/// Monte Carlo value of a trigger rule on the mismatch process from `(k, ẽ)`.
pub fn rollout_value<F>(design: &Design, k: usize, e0: f64, episodes: u64, seed: u64, decide: F) -> Estimate
where
    F: Fn(usize, f64) -> bool + Sync,
{
    let law = MismatchLaw::new(design);
    let stages = design.model.stages();
    map_episodes(
        episodes,
        Moments::default,
        |m, i| {
            let mut rng = episode_rng(seed, i);
            let mut e = e0;
            let mut cost = 0.0;
            for t in k..stages {
                let delta = decide(t, e);
                cost += law.stage_cost(t, e, delta);
                if t + 1 < stages {
                    let z: f64 = rng.sample(StandardNormal);
                    e = law.next(t, e, delta, z);
                }
            }
            m.push(cost);
        },
        Moments::merge,
    )
    .estimate()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueCheck {
    pub stage: usize,
    pub start: f64,
    pub rollout: Estimate,
    pub table_value: f64,
    /// `|rollout − table| ≤ 3·SE` (exact equality when the SE is zero).
    pub consistent: bool,
}

/// Greedy-DP rollout average against the table value at `(k, ẽ)`.
pub fn mc_value_check(table: &ValueTable, design: &Design, e0: f64, k: usize, episodes: u64, seed: u64) -> ValueCheck {
    let table_value = table.value(k, e0);
    let rollout = if k >= design.model.stages() {
        Estimate { mean: 0.0, se: 0.0 }
    } else {
        rollout_value(design, k, e0, episodes, seed, |t, e| table.decision(t, e))
    };
    let diff = (rollout.mean - table_value).abs();
    ValueCheck {
        stage: k,
        start: e0,
        rollout,
        table_value,
        consistent: diff <= 3.0 * rollout.se || diff <= 1e-12 * (1.0 + table_value.abs()),
    }
}
