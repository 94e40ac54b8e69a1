//! Value of information by backward induction over the estimation mismatch.
//!
//! Under certainty-equivalent control the encoder's cost-to-go depends on
//! its information only through the mismatch `ẽ_k = x̌_k − x̂_k`:
//!
//! ```text
//! V_k(ẽ) = c_k + min{ θ_k + T_k ,  ẽᵀA_kᵀΓ_{k+1}A_kẽ + G_k(ẽ) }
//! G_k(ẽ) = E[V_{k+1}(A_k ẽ + K_{k+1} ν)],   T_k = G_k(0) = E[V_{k+1}(K_{k+1} ν)]
//! c_k    = tr(A_kᵀΓ_{k+1}A_k Y_k + Γ_{k+1} W_k),   V_{N+1} ≡ 0
//! ```
//!
//! The first branch transmits (the mismatch resets), the second waits.
//! `VoI_k(ẽ)` is the wait branch minus the transmit branch, and the optimal
//! trigger fires when it is non-negative.
//!
//! The exact table is scalar only. Each stage stores `G_k` on a uniform
//! grid, and `V_k` off the grid is rebuilt from the two branches: `G_k` is
//! interpolated linearly (clamped beyond the grid edge, so the wait branch
//! keeps its quadratic growth), the quadratic term is evaluated exactly, and
//! the minimum is taken.
//!
//! Expectations over the innovation are taken either exactly against the
//! Gaussian density (the interpolated `V_{k+1}` is piecewise quadratic) or
//! by Gauss-Hermite quadrature. The exact mode is the default: a discrete
//! symmetric rule applied to the kinked `V_{k+1}` can break monotonicity in
//! `|ẽ|`, while convolution with the Gaussian preserves it. The quadrature
//! mode solves the problem with the noise replaced by the quadrature law,
//! which is what the enumeration oracle evaluates.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::Design;
use crate::linalg;
use crate::quadrature::GaussHermite;
use rayon::prelude::*;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VoiError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("exact value-of-information tables need a scalar state, got dimension {0}")]
    ExactModeDimension(usize),
    #[error("mismatch has dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("stage {stage} is outside the table (last stage {last})")]
    StageOutOfRange { stage: usize, last: usize },
}

/// How `E[V_{k+1}(mean + s·Z)]` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integration {
    /// Closed-form Gaussian integral of the piecewise-quadratic interpolant.
    #[default]
    ExactGaussian,
    /// `quad_nodes`-point Gauss-Hermite rule.
    GaussHermite,
}

/// Discretization of the mismatch axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Grid half-width in units of `σ_k`.
    pub half_width: f64,
    /// Points per axis; odd so that zero is a node.
    pub points: usize,
    /// Gauss-Hermite nodes per expectation.
    pub quad_nodes: usize,
    pub integration: Integration,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            half_width: 8.0,
            points: 1025,
            quad_nodes: 15,
            integration: Integration::ExactGaussian,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), VoiError> {
        if self.points < 3 || self.points.is_multiple_of(2) {
            return Err(VoiError::InvalidGrid(format!(
                "points must be odd and >= 3, got {}",
                self.points
            )));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(VoiError::InvalidGrid(format!(
                "half_width must be positive, got {}",
                self.half_width
            )));
        }
        if self.quad_nodes < 3 {
            return Err(VoiError::InvalidGrid(format!(
                "quad_nodes must be >= 3, got {}",
                self.quad_nodes
            )));
        }
        Ok(())
    }
}

/// One stage of the exact table.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTable {
    pub stage: usize,
    /// Grid coordinates, symmetric about zero.
    pub nodes: Vec<f64>,
    /// `V_k` at the nodes, including `c_k`.
    pub values: Vec<f64>,
    /// `G_k` at the nodes.
    pub continuation: Vec<f64>,
    /// `T_k`.
    pub transmit: f64,
    /// `c_k`.
    pub constant: f64,
    /// `A_k² Γ_{k+1}`.
    pub quad_coef: f64,
    /// `θ_k`.
    pub price: f64,
    /// `sqrt(K_k N_k K_kᵀ)`, sets the grid extent.
    pub sigma: f64,
    half_width: f64,
    spacing: f64,
}

impl StageTable {
    fn zero(stage: usize, nodes: Vec<f64>, sigma: f64, half_width: f64) -> Self {
        let spacing = nodes[1] - nodes[0];
        let len = nodes.len();
        Self {
            stage,
            nodes,
            values: vec![0.0; len],
            continuation: vec![0.0; len],
            transmit: 0.0,
            constant: 0.0,
            quad_coef: 0.0,
            price: 0.0,
            sigma,
            half_width,
            spacing,
        }
    }

    /// `G_k(e)`: linear interpolation inside the grid, edge value outside.
    pub fn continuation_at(&self, e: f64) -> f64 {
        let last = self.nodes.len() - 1;
        if e <= -self.half_width {
            return self.continuation[0];
        }
        if e >= self.half_width {
            return self.continuation[last];
        }
        let mid = last / 2;
        let t = e / self.spacing + mid as f64;
        let idx = (t.floor().max(0.0) as usize).min(last - 1);
        let frac = t - idx as f64;
        self.continuation[idx] * (1.0 - frac) + self.continuation[idx + 1] * frac
    }

    pub fn wait_branch(&self, e: f64) -> f64 {
        self.quad_coef * e * e + self.continuation_at(e)
    }

    pub fn transmit_branch(&self) -> f64 {
        self.price + self.transmit
    }

    pub fn value_at(&self, e: f64) -> f64 {
        self.constant + self.transmit_branch().min(self.wait_branch(e))
    }

    /// `ρ_k(e) = G_k(e) − T_k`.
    pub fn residual_at(&self, e: f64) -> f64 {
        self.continuation_at(e) - self.transmit
    }

    /// `VoI_k(e) = q_k e² − θ_k + ρ_k(e)`.
    pub fn voi_at(&self, e: f64) -> f64 {
        self.quad_coef * e * e - self.price + self.residual_at(e)
    }

    /// VoI at node `i` from the stored continuation (no interpolation).
    pub fn voi_at_node(&self, i: usize) -> f64 {
        let e = self.nodes[i];
        self.quad_coef * e * e - self.price + (self.continuation[i] - self.transmit)
    }

    pub fn residual_at_node(&self, i: usize) -> f64 {
        self.continuation[i] - self.transmit
    }

    /// `E[V_k(mean + spread·Z)]` for `Z ~ N(0, 1)`, exact for the
    /// interpolated value function up to tail mass beyond `±12` deviations.
    pub fn gaussian_expectation(&self, mean: f64, spread: f64) -> f64 {
        Segments::new(self).expectation(mean, spread)
    }
}

/// Integration window in standard deviations.
const TAIL: f64 = 12.0;

fn eval_poly(p: [f64; 3], x: f64) -> f64 {
    (p[0] * x + p[1]) * x + p[2]
}

/// `V_k − c_k` as consecutive pieces that are either the constant transmit
/// branch or a quadratic wait branch.
struct Segments<'a> {
    table: &'a StageTable,
    /// Breakpoints, from `−∞` to `+∞`.
    cuts: Vec<f64>,
    /// `None` for the transmit branch, else the wait-branch quadratic.
    pieces: Vec<Option<[f64; 3]>>,
}

impl<'a> Segments<'a> {
    fn new(table: &'a StageTable) -> Self {
        let cap = table.transmit_branch();
        let nodes = &table.nodes;
        let last = nodes.len() - 1;
        let mut raw: Vec<(f64, f64, [f64; 3])> = Vec::with_capacity(nodes.len() + 1);
        raw.push((f64::NEG_INFINITY, nodes[0], [table.quad_coef, 0.0, table.continuation[0]]));
        for i in 0..last {
            let (x0, x1) = (nodes[i], nodes[i + 1]);
            let slope = (table.continuation[i + 1] - table.continuation[i]) / (x1 - x0);
            raw.push((x0, x1, [table.quad_coef, slope, table.continuation[i] - slope * x0]));
        }
        raw.push((nodes[last], f64::INFINITY, [table.quad_coef, 0.0, table.continuation[last]]));

        let mut cuts = vec![f64::NEG_INFINITY];
        let mut pieces = Vec::with_capacity(raw.len() + 4);
        for (l, u, p) in raw {
            let mut inner: Vec<f64> = quadratic_roots(p[0], p[1], p[2] - cap)
                .into_iter()
                .filter(|&r| r > l && r < u)
                .collect();
            inner.sort_by(f64::total_cmp);
            let mut a = l;
            for b in inner.into_iter().chain(std::iter::once(u)) {
                let probe = match (a.is_finite(), b.is_finite()) {
                    (true, true) => 0.5 * (a + b),
                    (true, false) => a + 1.0,
                    (false, true) => b - 1.0,
                    (false, false) => 0.0,
                };
                let piece = (eval_poly(p, probe) < cap).then_some(p);
                // merge adjacent transmit pieces
                if piece.is_none() && pieces.last() == Some(&None) {
                    *cuts.last_mut().expect("cut present") = b;
                } else {
                    pieces.push(piece);
                    cuts.push(b);
                }
                a = b;
            }
        }
        Self { table, cuts, pieces }
    }

    fn expectation(&self, mean: f64, spread: f64) -> f64 {
        if spread <= 0.0 {
            return self.table.value_at(mean);
        }
        let cap = self.table.transmit_branch();
        let z = |x: f64| ((x - mean) / spread).clamp(-TAIL, TAIL);
        let first = self.cuts[1..].partition_point(|&c| c <= mean - TAIL * spread);
        let mut left = Endpoint::new(z(self.cuts[first]));
        let mut total = 0.0;
        for (i, piece) in self.pieces.iter().enumerate().skip(first) {
            let right = Endpoint::new(z(self.cuts[i + 1]));
            let mass = left.mass_to(&right);
            total += match piece {
                None => cap * mass,
                Some(p) => {
                    let m1 = left.pdf - right.pdf;
                    let m2 = mass + left.z * left.pdf - right.z * right.pdf;
                    let c2 = p[0] * spread * spread;
                    let c1 = (2.0 * p[0] * mean + p[1]) * spread;
                    c2 * m2 + c1 * m1 + eval_poly(*p, mean) * mass
                }
            };
            if right.z >= TAIL {
                break;
            }
            left = right;
        }
        self.table.constant + total
    }
}

/// Standardized breakpoint with its density and one-sided tail mass.
struct Endpoint {
    z: f64,
    pdf: f64,
    /// `Φ(−|z|)`.
    tail: f64,
}

impl Endpoint {
    fn new(z: f64) -> Self {
        Self {
            z,
            pdf: (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            tail: 0.5 * libm::erfc(z.abs() * std::f64::consts::FRAC_1_SQRT_2),
        }
    }

    /// `Φ(other.z) − Φ(self.z)` without cancellation in either tail.
    fn mass_to(&self, other: &Endpoint) -> f64 {
        if self.z >= 0.0 {
            self.tail - other.tail
        } else if other.z <= 0.0 {
            other.tail - self.tail
        } else {
            1.0 - self.tail - other.tail
        }
    }
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b == 0.0 { vec![] } else { vec![-c / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return vec![0.0];
    }
    vec![q / a, c / q]
}

/// Per-stage value functions for `k = 0..=N+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub stages: Vec<StageTable>,
    pub grid: GridSpec,
}

impl ValueTable {
    pub fn horizon(&self) -> usize {
        self.stages.len() - 2
    }

    pub fn stage(&self, k: usize) -> Result<&StageTable, VoiError> {
        self.stages.get(k).ok_or(VoiError::StageOutOfRange {
            stage: k,
            last: self.stages.len() - 1,
        })
    }

    /// `V_k(e)`; zero past the horizon.
    pub fn value(&self, k: usize, e: f64) -> f64 {
        self.stages.get(k).map_or(0.0, |s| s.value_at(e))
    }

    /// Optimal trigger decision `1{VoI_k(e) ≥ 0}`.
    pub fn decision(&self, k: usize, e: f64) -> bool {
        self.stages.get(k).is_some_and(|s| s.voi_at(e) >= 0.0)
    }
}

fn scalar_sigma(design: &Design, k: usize) -> f64 {
    design.schedule.mismatch_innovation_cov(k)[(0, 0)].max(0.0).sqrt()
}

fn grid_nodes(points: usize, half_width: f64) -> Vec<f64> {
    let mid = (points - 1) / 2;
    (0..points)
        .map(|i| half_width * (i as f64 - mid as f64) / mid as f64)
        .collect()
}

/// Backward induction for a scalar model.
pub fn backward_induction(design: &Design, grid: &GridSpec) -> Result<ValueTable, VoiError> {
    grid.validate()?;
    let n = design.state_dim();
    if n != 1 {
        return Err(VoiError::ExactModeDimension(n));
    }
    let horizon = design.horizon();
    let quad = GaussHermite::new(grid.quad_nodes);
    let (model, sol, schedule) = (&design.model, &design.riccati, &design.schedule);

    let extent = |sigma: f64| grid.half_width * if sigma > 0.0 { sigma } else { 1.0 };

    let mut stages: Vec<StageTable> = Vec::with_capacity(horizon + 2);
    let terminal_sigma = scalar_sigma(design, horizon);
    let h = extent(terminal_sigma);
    stages.push(StageTable::zero(
        horizon + 1,
        grid_nodes(grid.points, h),
        terminal_sigma,
        h,
    ));

    for k in (0..=horizon).rev() {
        let sigma = scalar_sigma(design, k);
        let half_width = extent(sigma);
        let nodes = grid_nodes(grid.points, half_width);
        let mut table = StageTable::zero(k, nodes, sigma, half_width);

        let a = model.a(k)[(0, 0)];
        let gamma_next = sol.gamma(k + 1);
        table.quad_coef = a * a * gamma_next[(0, 0)];
        table.price = sol.price(k);
        table.constant = (model.a(k).transpose() * gamma_next * model.a(k) * &schedule.y[k]).trace()
            + (gamma_next * model.w(k)).trace();

        let next = stages.last().expect("terminal stage present");
        if k < horizon {
            let spread = scalar_sigma(design, k + 1);
            let segments = Segments::new(next);
            let expect = |mean: f64| match grid.integration {
                Integration::GaussHermite => quad.expect(mean, spread, |x| next.value_at(x)),
                Integration::ExactGaussian => segments.expectation(mean, spread),
            };
            table.transmit = expect(0.0);
            table.continuation = table.nodes.par_iter().map(|&e| expect(a * e)).collect();
        }
        // k == N: V_{N+1} ≡ 0 so both expectations vanish.

        let transmit = table.transmit_branch();
        for i in 0..table.nodes.len() {
            let e = table.nodes[i];
            let wait = table.quad_coef * e * e + table.continuation[i];
            table.values[i] = table.constant + transmit.min(wait);
        }
        stages.push(table);
    }
    stages.reverse();
    Ok(ValueTable {
        stages,
        grid: *grid,
    })
}

/// Where the residual `ρ_k` comes from.
#[derive(Debug, Clone, Copy)]
pub enum VoiSource<'a> {
    Exact(&'a ValueTable),
    /// `ρ ≡ 0`: only the immediate quadratic term is weighed against the price.
    Myopic,
}

/// Decomposed value of information at one stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoIResult {
    pub stage: usize,
    pub value: f64,
    /// `ẽᵀA_kᵀΓ_{k+1}A_kẽ`.
    pub quadratic: f64,
    /// `θ_k`.
    pub price: f64,
    /// `ρ_k(ẽ)`.
    pub residual: f64,
    /// `VoI ≥ 0`.
    pub transmit: bool,
}

pub fn voi(source: VoiSource<'_>, design: &Design, e: &DVector<f64>, k: usize) -> Result<VoIResult, VoiError> {
    let n = design.state_dim();
    if e.len() != n {
        return Err(VoiError::DimensionMismatch {
            expected: n,
            found: e.len(),
        });
    }
    if k > design.horizon() {
        return Err(VoiError::StageOutOfRange {
            stage: k,
            last: design.horizon(),
        });
    }
    let price = design.riccati.price(k);
    let (quadratic, residual) = match source {
        VoiSource::Exact(table) => {
            let stage = table.stage(k)?;
            let x = e[0];
            (stage.quad_coef * x * x, stage.residual_at(x))
        }
        VoiSource::Myopic => {
            let a = design.model.a(k);
            let weight = a.transpose() * design.riccati.gamma(k + 1) * a;
            (linalg::quad_form(&weight, e), 0.0)
        }
    };
    let value = quadratic - price + residual;
    Ok(VoIResult {
        stage: k,
        value,
        quadratic,
        price,
        residual,
        transmit: value >= 0.0,
    })
}

/// Smallest `r ≥ 0` with `VoI_k(r) ≥ 0` for a scalar model, `+∞` if none.
///
/// The exact source scans the grid and then bisects the interpolated VoI
/// between the bracketing nodes; the myopic source brackets by doubling.
pub fn extract_threshold(source: VoiSource<'_>, design: &Design, k: usize) -> Result<f64, VoiError> {
    let n = design.state_dim();
    if n != 1 {
        return Err(VoiError::ExactModeDimension(n));
    }
    match source {
        VoiSource::Exact(table) => {
            let stage = table.stage(k)?;
            let mid = (stage.nodes.len() - 1) / 2;
            let Some(i) = (mid..stage.nodes.len()).find(|&i| stage.voi_at_node(i) >= 0.0) else {
                return Ok(f64::INFINITY);
            };
            if i == mid {
                return Ok(0.0);
            }
            Ok(bisect(|r| stage.voi_at(r), stage.nodes[i - 1], stage.nodes[i]))
        }
        VoiSource::Myopic => {
            let f = |r: f64| {
                voi(source, design, &DVector::from_element(1, r), k)
                    .map(|v| v.value)
                    .unwrap_or(f64::NEG_INFINITY)
            };
            if f(0.0) >= 0.0 {
                return Ok(0.0);
            }
            let mut hi = 1.0;
            while f(hi) < 0.0 {
                hi *= 2.0;
                if hi > 1e150 {
                    return Ok(f64::INFINITY);
                }
            }
            Ok(bisect(f, 0.0, hi))
        }
    }
}

/// Bisection for the first sign change of `f` from negative to
/// non-negative inside `(lo, hi]`.
fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
