//! Multi-sensor controlled Gauss-Markov problem instances.
//!
//! A [`ProcessModel`] holds per-stage system, sensor, noise and cost
//! matrices for stages `k = 0..=N`, plus the terminal state weight `Q_{N+1}`.
//! Construction checks only that the shapes line up; [`validate_model`]
//! enforces the definiteness assumptions and the trade-off weight range.

mod config;

pub use config::{MatrixInput, ModelConfig, SensorConfig, VectorInput};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch in {location}: expected {expected}, found {found}")]
    DimensionMismatch {
        location: Location,
        expected: String,
        found: String,
    },
    #[error("{0} is not symmetric")]
    NotSymmetric(Location),
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(Location),
    #[error("{0} is not positive semi-definite")]
    NotPositiveSemidefinite(Location),
    #[error("{0} contains a non-finite entry")]
    NonFinite(Location),
    #[error("lambda = {0} is outside the open interval (0, 1)")]
    LambdaOutOfRange(f64),
    #[error("rate weight {0} is negative")]
    NegativeRateWeight(Location),
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },
}

/// A model field, optionally at a stage, rendered as `V^1_0`, `A_3`, `lambda`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Location {
    pub field: String,
    pub stage: Option<usize>,
}

impl Location {
    pub fn new(field: impl Into<String>, stage: Option<usize>) -> Self {
        Self {
            field: field.into(),
            stage,
        }
    }

    fn at(field: impl Into<String>, stage: usize) -> Self {
        Self::new(field, Some(stage))
    }
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.stage {
            Some(k) => write!(f, "{}_{}", self.field, k),
            None => f.write_str(&self.field),
        }
    }
}

/// Per-sensor output matrices and noise covariances for stages `0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorParts {
    pub c: Vec<DMatrix<f64>>,
    pub v: Vec<DMatrix<f64>>,
}

/// Raw, per-stage description of a problem instance.
///
/// `a`, `b`, `w`, `r`, `rate_weights` and every sensor sequence have one
/// entry per stage `0..=N`. `q` has entries for `0..=N+1`; `q[0]` only
/// enters the Riccati recursion (the regulation cost starts at `x_1`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParts {
    pub horizon: usize,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub w: Vec<DMatrix<f64>>,
    pub sensors: Vec<SensorParts>,
    pub m0: DVector<f64>,
    pub cov0: DMatrix<f64>,
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub rate_weights: Vec<f64>,
    pub lambda: f64,
}

/// Time-invariant shorthand, expanded to every stage by [`Stationary::expand`].
#[derive(Debug, Clone, PartialEq)]
pub struct Stationary {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// `(C^i, V^i)` per sensor.
    pub sensors: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    pub w: DMatrix<f64>,
    pub m0: DVector<f64>,
    pub cov0: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub q_final: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub rate_weight: f64,
    pub lambda: f64,
}

impl Stationary {
    /// Scalar instance with every matrix 1×1.
    #[allow(clippy::too_many_arguments)]
    pub fn scalar(a: f64, b: f64, c: f64, w: f64, v: f64, m0: f64, cov0: f64, q: f64, r: f64, lambda: f64) -> Self {
        let s = |x: f64| DMatrix::from_element(1, 1, x);
        Self {
            a: s(a),
            b: s(b),
            sensors: vec![(s(c), s(v))],
            w: s(w),
            m0: DVector::from_element(1, m0),
            cov0: s(cov0),
            q: s(q),
            q_final: s(q),
            r: s(r),
            rate_weight: 1.0,
            lambda,
        }
    }

    pub fn expand(&self, horizon: usize) -> ModelParts {
        let stages = horizon + 1;
        let rep = |m: &DMatrix<f64>, count: usize| vec![m.clone(); count];
        let mut q = rep(&self.q, stages);
        q.push(self.q_final.clone());
        ModelParts {
            horizon,
            a: rep(&self.a, stages),
            b: rep(&self.b, stages),
            w: rep(&self.w, stages),
            sensors: self
                .sensors
                .iter()
                .map(|(c, v)| SensorParts {
                    c: rep(c, stages),
                    v: rep(v, stages),
                })
                .collect(),
            m0: self.m0.clone(),
            cov0: self.cov0.clone(),
            q,
            r: rep(&self.r, stages),
            rate_weights: vec![self.rate_weight; stages],
            lambda: self.lambda,
        }
    }
}

/// Cached square-root factors used for sampling.
#[derive(Debug, Clone, PartialEq)]
struct NoiseFactors {
    w: Vec<DMatrix<f64>>,
    v: Vec<Vec<DMatrix<f64>>>,
    cov0: DMatrix<f64>,
}

/// A structurally consistent problem instance. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessModel {
    parts: ModelParts,
    state_dim: usize,
    input_dim: usize,
    output_dims: Vec<usize>,
    noise: NoiseFactors,
}

impl ProcessModel {
    /// Checks shapes and sequence lengths. Definiteness and `λ` are left to
    /// [`validate_model`].
    pub fn new(parts: ModelParts) -> Result<Self, ModelError> {
        let stages = parts.horizon + 1;
        let n = parts.m0.len();
        if n == 0 {
            return Err(dim_err(Location::new("m0", None), "length >= 1", "0"));
        }
        let m = parts.b.first().map_or(0, |b| b.ncols());
        if m == 0 {
            return Err(dim_err(Location::at("B", 0), "at least one column", "0"));
        }
        if parts.sensors.is_empty() {
            return Err(ModelError::Config {
                field: "sensors".into(),
                message: "at least one sensor is required".into(),
            });
        }

        check_len("A", parts.a.len(), stages)?;
        check_len("B", parts.b.len(), stages)?;
        check_len("W", parts.w.len(), stages)?;
        check_len("R", parts.r.len(), stages)?;
        check_len("Q", parts.q.len(), stages + 1)?;
        check_len("ell", parts.rate_weights.len(), stages)?;

        check_shape(&Location::new("M0", None), &parts.cov0, n, n)?;
        for k in 0..stages {
            check_shape(&Location::at("A", k), &parts.a[k], n, n)?;
            check_shape(&Location::at("B", k), &parts.b[k], n, m)?;
            check_shape(&Location::at("W", k), &parts.w[k], n, n)?;
            check_shape(&Location::at("R", k), &parts.r[k], m, m)?;
        }
        for (k, q) in parts.q.iter().enumerate() {
            let field = if k == stages { "Qfinal" } else { "Q" };
            check_shape(&Location::at(field, k), q, n, n)?;
        }

        let mut output_dims = Vec::with_capacity(parts.sensors.len());
        for (i, sensor) in parts.sensors.iter().enumerate() {
            let c_name = format!("C^{}", i + 1);
            let v_name = format!("V^{}", i + 1);
            check_len(&c_name, sensor.c.len(), stages)?;
            check_len(&v_name, sensor.v.len(), stages)?;
            let p = sensor.c[0].nrows();
            if p == 0 {
                return Err(dim_err(Location::at(c_name, 0), "at least one row", "0"));
            }
            for k in 0..stages {
                check_shape(&Location::at(c_name.clone(), k), &sensor.c[k], p, n)?;
                check_shape(&Location::at(v_name.clone(), k), &sensor.v[k], p, p)?;
            }
            output_dims.push(p);
        }

        let noise = NoiseFactors {
            w: parts.w.iter().map(linalg::sqrt_factor).collect(),
            v: parts
                .sensors
                .iter()
                .map(|s| s.v.iter().map(linalg::sqrt_factor).collect())
                .collect(),
            cov0: linalg::sqrt_factor(&parts.cov0),
        };

        Ok(Self {
            parts,
            state_dim: n,
            input_dim: m,
            output_dims,
            noise,
        })
    }

    pub fn from_stationary(horizon: usize, stationary: &Stationary) -> Result<Self, ModelError> {
        Self::new(stationary.expand(horizon))
    }

    pub fn parts(&self) -> &ModelParts {
        &self.parts
    }

    pub fn horizon(&self) -> usize {
        self.parts.horizon
    }
    /// Number of decision stages, `N + 1`.
    pub fn stages(&self) -> usize {
        self.parts.horizon + 1
    }
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn sensor_count(&self) -> usize {
        self.output_dims.len()
    }
    pub fn output_dims(&self) -> &[usize] {
        &self.output_dims
    }
    pub fn total_output_dim(&self) -> usize {
        self.output_dims.iter().sum()
    }

    pub fn a(&self, k: usize) -> &DMatrix<f64> {
        &self.parts.a[k]
    }
    pub fn b(&self, k: usize) -> &DMatrix<f64> {
        &self.parts.b[k]
    }
    pub fn w(&self, k: usize) -> &DMatrix<f64> {
        &self.parts.w[k]
    }
    pub fn c(&self, sensor: usize, k: usize) -> &DMatrix<f64> {
        &self.parts.sensors[sensor].c[k]
    }
    pub fn v(&self, sensor: usize, k: usize) -> &DMatrix<f64> {
        &self.parts.sensors[sensor].v[k]
    }
    pub fn m0(&self) -> &DVector<f64> {
        &self.parts.m0
    }
    pub fn cov0(&self) -> &DMatrix<f64> {
        &self.parts.cov0
    }
    /// State weight `Q_k`, `k = 0..=N+1`.
    pub fn q(&self, k: usize) -> &DMatrix<f64> {
        &self.parts.q[k]
    }
    pub fn r(&self, k: usize) -> &DMatrix<f64> {
        &self.parts.r[k]
    }
    pub fn rate_weight(&self, k: usize) -> f64 {
        self.parts.rate_weights[k]
    }
    pub fn lambda(&self) -> f64 {
        self.parts.lambda
    }

    /// Same instance with a different trade-off weight.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        out.parts.lambda = lambda;
        out
    }

    /// Draws `x_0 ~ N(m_0, M_0)`.
    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        &self.parts.m0 + &self.noise.cov0 * standard_normal(self.state_dim, rng)
    }

    /// `x_{k+1} = A_k x + B_k u + w_k`, `w_k ~ N(0, W_k)`.
    pub fn step_process<R: Rng + ?Sized>(
        &self,
        k: usize,
        x: &DVector<f64>,
        u: &DVector<f64>,
        rng: &mut R,
    ) -> DVector<f64> {
        let w = &self.noise.w[k] * standard_normal(self.state_dim, rng);
        &self.parts.a[k] * x + &self.parts.b[k] * u + w
    }

    /// Per-sensor outputs `y^i_k = C^i_k x + v^i_k`, in sensor order.
    pub fn observe<R: Rng + ?Sized>(&self, k: usize, x: &DVector<f64>, rng: &mut R) -> Vec<DVector<f64>> {
        self.parts
            .sensors
            .iter()
            .zip(&self.noise.v)
            .zip(&self.output_dims)
            .map(|((sensor, factors), &p)| &sensor.c[k] * x + &factors[k] * standard_normal(p, rng))
            .collect()
    }
}

fn standard_normal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn dim_err(location: Location, expected: impl Into<String>, found: impl Into<String>) -> ModelError {
    ModelError::DimensionMismatch {
        location,
        expected: expected.into(),
        found: found.into(),
    }
}

fn check_len(field: &str, len: usize, expected: usize) -> Result<(), ModelError> {
    if len == expected {
        Ok(())
    } else {
        Err(dim_err(
            Location::new(field, None),
            format!("{expected} stage entries"),
            format!("{len}"),
        ))
    }
}

fn check_shape(location: &Location, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<(), ModelError> {
    if m.shape() != (rows, cols) {
        return Err(dim_err(
            location.clone(),
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::NonFinite(location.clone()));
    }
    Ok(())
}

/// Returns the model unchanged when every definiteness assumption and the
/// range of `λ` hold; otherwise names the first offending field and stage.
pub fn validate_model(model: ProcessModel) -> Result<ProcessModel, ModelError> {
    validate(&model)?;
    Ok(model)
}

/// Borrowing form of [`validate_model`].
pub fn validate(model: &ProcessModel) -> Result<(), ModelError> {
    let p = &model.parts;
    if !(p.lambda > 0.0 && p.lambda < 1.0) {
        return Err(ModelError::LambdaOutOfRange(p.lambda));
    }
    if p.m0.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::NonFinite(Location::new("m0", None)));
    }
    require_pd(&Location::new("M0", None), &p.cov0)?;
    for k in 0..model.stages() {
        require_pd(&Location::at("W", k), &p.w[k])?;
        require_pd(&Location::at("R", k), &p.r[k])?;
        for (i, sensor) in p.sensors.iter().enumerate() {
            require_pd(&Location::at(format!("V^{}", i + 1), k), &sensor.v[k])?;
        }
        let ell = p.rate_weights[k];
        if !ell.is_finite() {
            return Err(ModelError::NonFinite(Location::at("ell", k)));
        }
        if ell < 0.0 {
            return Err(ModelError::NegativeRateWeight(Location::at("ell", k)));
        }
    }
    for (k, q) in p.q.iter().enumerate() {
        let field = if k == model.stages() { "Qfinal" } else { "Q" };
        let loc = Location::at(field, k);
        if !linalg::is_symmetric(q) {
            return Err(ModelError::NotSymmetric(loc));
        }
        if !linalg::is_positive_semidefinite(q) {
            return Err(ModelError::NotPositiveSemidefinite(loc));
        }
    }
    Ok(())
}

fn require_pd(location: &Location, m: &DMatrix<f64>) -> Result<(), ModelError> {
    if !linalg::is_symmetric(m) {
        return Err(ModelError::NotSymmetric(location.clone()));
    }
    if !linalg::is_positive_definite(m) {
        return Err(ModelError::NotPositiveDefinite(location.clone()));
    }
    Ok(())
}

/// Stacked sensor description `C_k = [C^1_k; …; C^S_k]`, `V_k = diag(V^1_k, …, V^S_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSensor {
    pub c: Vec<DMatrix<f64>>,
    pub v: Vec<DMatrix<f64>>,
    block_dims: Vec<usize>,
}

impl AggregateSensor {
    pub fn output_dim(&self) -> usize {
        self.block_dims.iter().sum()
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.block_dims
    }

    /// Stacks per-sensor outputs in sensor order.
    pub fn stack(&self, outputs: &[DVector<f64>]) -> DVector<f64> {
        debug_assert_eq!(outputs.len(), self.block_dims.len());
        linalg::vconcat(outputs)
    }

    /// Inverse of [`AggregateSensor::stack`].
    pub fn split(&self, stacked: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut offset = 0;
        self.block_dims
            .iter()
            .map(|&p| {
                let part = stacked.rows(offset, p).into_owned();
                offset += p;
                part
            })
            .collect()
    }
}

pub fn aggregate_sensors(model: &ProcessModel) -> AggregateSensor {
    let sensors = &model.parts.sensors;
    let (c, v) = (0..model.stages())
        .map(|k| {
            let cs: Vec<_> = sensors.iter().map(|s| s.c[k].clone()).collect();
            let vs: Vec<_> = sensors.iter().map(|s| s.v[k].clone()).collect();
            (linalg::vstack(&cs), linalg::block_diag(&vs))
        })
        .unzip();
    AggregateSensor {
        c,
        v,
        block_dims: model.output_dims.clone(),
    }
}
