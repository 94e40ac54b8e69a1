//! Trigger and control policies: the VoI pair plus baselines.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::Design;
use crate::lqr;
use crate::voidp::{self, GridSpec, ValueTable, VoiError, VoiSource};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("unknown policy `{0}`")]
    Unknown(String),
    #[error("policy `{kind}`: {message}")]
    Parameter { kind: String, message: String },
    #[error(transparent)]
    Voi(#[from] VoiError),
}

/// Trigger kinds, written as `kind[:param]` in configs and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TriggerKind {
    VoiExact,
    VoiMyopic,
    Periodic(usize),
    Always,
    Never,
    MismatchThreshold(f64),
    VarianceBased(f64),
    Bernoulli(f64),
}

impl TriggerKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::VoiExact => "voi_exact",
            Self::VoiMyopic => "voi_myopic",
            Self::Periodic(_) => "periodic",
            Self::Always => "always",
            Self::Never => "never",
            Self::MismatchThreshold(_) => "mismatch_threshold",
            Self::VarianceBased(_) => "variance_based",
            Self::Bernoulli(_) => "bernoulli",
        }
    }

    /// Whether the decision depends on `ẽ` only through an even function.
    pub fn is_even(&self) -> bool {
        !matches!(self, Self::Bernoulli(_))
    }
}

impl fmt::Display for TriggerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Periodic(p) => write!(f, "periodic:{p}"),
            Self::MismatchThreshold(r) => write!(f, "mismatch_threshold:{r}"),
            Self::VarianceBased(c) => write!(f, "variance_based:{c}"),
            Self::Bernoulli(q) => write!(f, "bernoulli:{q}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for TriggerKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n.trim(), Some(p.trim())),
            None => (s.trim(), None),
        };
        let bad = |message: String| PolicyError::Parameter {
            kind: name.to_string(),
            message,
        };
        let number = || -> Result<f64, PolicyError> {
            let p = param.ok_or_else(|| bad("missing parameter".into()))?;
            let v: f64 = p.parse().map_err(|_| bad(format!("`{p}` is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(format!("`{p}` is not finite")))
            }
        };
        let none = |kind: TriggerKind| match param {
            None => Ok(kind),
            Some(p) => Err(bad(format!("takes no parameter, got `{p}`"))),
        };
        match name {
            "voi_exact" => none(Self::VoiExact),
            "voi_myopic" => none(Self::VoiMyopic),
            "always" => none(Self::Always),
            "never" => none(Self::Never),
            "periodic" => {
                let p = param.ok_or_else(|| bad("missing period".into()))?;
                match p.parse::<usize>() {
                    Ok(period) if period >= 1 => Ok(Self::Periodic(period)),
                    _ => Err(bad(format!("period must be a positive integer, got `{p}`"))),
                }
            }
            "mismatch_threshold" => {
                let r = number()?;
                if r < 0.0 {
                    return Err(bad(format!("radius must be >= 0, got {r}")));
                }
                Ok(Self::MismatchThreshold(r))
            }
            "variance_based" => Ok(Self::VarianceBased(number()?)),
            "bernoulli" => {
                let q = number()?;
                if !(0.0..=1.0).contains(&q) {
                    return Err(bad(format!("probability must be in [0, 1], got {q}")));
                }
                Ok(Self::Bernoulli(q))
            }
            _ => Err(PolicyError::Unknown(s.to_string())),
        }
    }
}

impl TryFrom<String> for TriggerKind {
    type Error = PolicyError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<TriggerKind> for String {
    fn from(kind: TriggerKind) -> String {
        kind.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlPolicy {
    #[default]
    CertaintyEquivalent,
    Zero,
}

impl FromStr for ControlPolicy {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "certainty_equivalent" | "ce" => Ok(Self::CertaintyEquivalent),
            "zero" => Ok(Self::Zero),
            other => Err(PolicyError::Unknown(other.to_string())),
        }
    }
}

/// `u_k` from the decoder estimate only.
pub fn act(policy: ControlPolicy, design: &Design, x_hat: &DVector<f64>, k: usize) -> DVector<f64> {
    match policy {
        ControlPolicy::CertaintyEquivalent => lqr::ce_control(&design.riccati, x_hat, k),
        ControlPolicy::Zero => DVector::zeros(design.model.input_dim()),
    }
}

/// A trigger ready to run: the kind plus any table it needs.
#[derive(Debug, Clone)]
pub struct TriggerPolicy {
    kind: TriggerKind,
    table: Option<Arc<ValueTable>>,
}

impl TriggerPolicy {
    /// Builds the exact value table when needed. For a vector state the
    /// exact kind falls back to the myopic rule.
    pub fn new(kind: TriggerKind, design: &Design, grid: &GridSpec) -> Result<Self, PolicyError> {
        match kind {
            TriggerKind::VoiExact if design.state_dim() > 1 => {
                log::warn!(
                    "exact VoI needs a scalar state (n = {}); using the myopic rule",
                    design.state_dim()
                );
                Ok(Self { kind: TriggerKind::VoiMyopic, table: None })
            }
            TriggerKind::VoiExact => {
                let table = voidp::backward_induction(design, grid)?;
                Ok(Self::with_table(Arc::new(table)))
            }
            other => Ok(Self { kind: other, table: None }),
        }
    }

    /// Exact VoI trigger over an existing table.
    pub fn with_table(table: Arc<ValueTable>) -> Self {
        Self {
            kind: TriggerKind::VoiExact,
            table: Some(table),
        }
    }

    /// The kind actually in effect (after any fallback).
    pub fn kind(&self) -> TriggerKind {
        self.kind
    }

    pub fn table(&self) -> Option<&ValueTable> {
        self.table.as_deref()
    }

    pub fn start_episode(&self, design: &Design) -> TriggerState {
        TriggerState {
            decoder_cov: design.model.cov0().clone(),
        }
    }

    /// `δ_k` from the encoder's mismatch. `rng` is only drawn by `bernoulli`.
    pub fn decide<R: Rng + ?Sized>(
        &self,
        design: &Design,
        state: &mut TriggerState,
        k: usize,
        mismatch: &DVector<f64>,
        rng: &mut R,
    ) -> bool {
        let delta = match self.kind {
            TriggerKind::VoiExact => {
                let table = self.table.as_deref().expect("exact trigger carries a table");
                table.decision(k, mismatch[0])
            }
            TriggerKind::VoiMyopic => voidp::voi(VoiSource::Myopic, design, mismatch, k)
                .map(|r| r.transmit)
                .unwrap_or(false),
            TriggerKind::Periodic(p) => k.is_multiple_of(p),
            TriggerKind::Always => true,
            TriggerKind::Never => false,
            TriggerKind::MismatchThreshold(r) => mismatch.norm() >= r,
            TriggerKind::VarianceBased(c) => (&state.decoder_cov - &design.schedule.y[k]).trace() > c,
            TriggerKind::Bernoulli(q) => rng.random::<f64>() < q,
        };
        state.advance(design, k, delta);
        delta
    }
}

/// Episode-local trigger state.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerState {
    /// Decoder error covariance propagated without the truncation term.
    pub decoder_cov: DMatrix<f64>,
}

impl TriggerState {
    fn advance(&mut self, design: &Design, k: usize, delta: bool) {
        if k >= design.horizon() {
            return;
        }
        self.decoder_cov = if delta {
            design.schedule.theta[k].clone()
        } else {
            let a = design.model.a(k);
            a * &self.decoder_cov * a.transpose() + design.model.w(k)
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ProcessModel, Stationary};
    use crate::rng::policy_rng;
    use approx::assert_relative_eq;

    fn scalar(horizon: usize) -> Design {
        let st = Stationary::scalar(1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.5);
        Design::new(ProcessModel::from_stationary(horizon, &st).unwrap()).unwrap()
    }

    fn run(policy: &TriggerPolicy, design: &Design, e: f64, k: usize) -> bool {
        let mut state = policy.start_episode(design);
        let mut rng = policy_rng(1, 0);
        policy.decide(design, &mut state, k, &DVector::from_element(1, e), &mut rng)
    }

    #[test]
    fn parse_round_trip() {
        for s in [
            "voi_exact",
            "voi_myopic",
            "periodic:3",
            "always",
            "never",
            "mismatch_threshold:1.5",
            "variance_based:0.25",
            "bernoulli:0.5",
        ] {
            let kind: TriggerKind = s.parse().unwrap();
            assert_eq!(kind.to_string(), s);
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(serde_json::from_str::<TriggerKind>(&json).unwrap(), kind);
        }
    }

    #[test]
    fn parse_errors() {
        assert!(matches!("sometimes".parse::<TriggerKind>(), Err(PolicyError::Unknown(_))));
        for bad in ["periodic", "periodic:0", "periodic:x", "bernoulli:1.5", "mismatch_threshold:-1", "always:2"] {
            assert!(matches!(bad.parse::<TriggerKind>(), Err(PolicyError::Parameter { .. })), "{bad}");
        }
        assert_eq!("zero".parse::<ControlPolicy>().unwrap(), ControlPolicy::Zero);
        assert!("pid".parse::<ControlPolicy>().is_err());
    }

    #[test]
    fn fixed_schedules() {
        let design = scalar(6);
        let grid = GridSpec::default();
        let never = TriggerPolicy::new(TriggerKind::Never, &design, &grid).unwrap();
        let always = TriggerPolicy::new(TriggerKind::Always, &design, &grid).unwrap();
        let periodic = TriggerPolicy::new(TriggerKind::Periodic(3), &design, &grid).unwrap();
        for k in 0..=6 {
            assert!(!run(&never, &design, 10.0, k));
            assert!(run(&always, &design, 0.0, k));
            assert_eq!(run(&periodic, &design, 0.0, k), k % 3 == 0);
        }
    }

    #[test]
    fn myopic_example() {
        let design = scalar(2);
        let policy = TriggerPolicy::new(TriggerKind::VoiMyopic, &design, &GridSpec::default()).unwrap();
        assert!(!run(&policy, &design, 1.0, 0));
        assert!(run(&policy, &design, 1.1, 0));
        assert!(run(&policy, &design, -1.1, 0));
    }

    #[test]
    fn mismatch_threshold_uses_norm() {
        let design = scalar(2);
        let policy = TriggerPolicy::new(TriggerKind::MismatchThreshold(0.5), &design, &GridSpec::default()).unwrap();
        assert!(run(&policy, &design, 0.5, 0));
        assert!(run(&policy, &design, -0.7, 0));
        assert!(!run(&policy, &design, 0.49, 0));
    }

    #[test]
    fn even_kinds_are_symmetric() {
        let design = scalar(5);
        let grid = GridSpec { points: 401, ..GridSpec::default() };
        for kind in [
            TriggerKind::VoiExact,
            TriggerKind::VoiMyopic,
            TriggerKind::MismatchThreshold(1.0),
            TriggerKind::VarianceBased(0.3),
        ] {
            let policy = TriggerPolicy::new(kind, &design, &grid).unwrap();
            for k in 0..=5 {
                for e in [0.0, 0.3, 0.9, 1.4, 2.2, 5.0] {
                    assert_eq!(run(&policy, &design, e, k), run(&policy, &design, -e, k), "{kind} k {k} e {e}");
                }
            }
        }
    }

    #[test]
    fn exact_trigger_matches_table_threshold() {
        let design = scalar(4);
        let grid = GridSpec { points: 401, ..GridSpec::default() };
        let policy = TriggerPolicy::new(TriggerKind::VoiExact, &design, &grid).unwrap();
        let table = policy.table().unwrap();
        for k in 0..4 {
            let r = voidp::extract_threshold(VoiSource::Exact(table), &design, k).unwrap();
            assert!(run(&policy, &design, r, k));
            assert!(!run(&policy, &design, r * 0.99, k));
        }
        assert!(!run(&policy, &design, 100.0, 4));
    }

    #[test]
    fn variance_trigger_tracks_decoder_covariance() {
        let design = scalar(4);
        let policy = TriggerPolicy::new(TriggerKind::VarianceBased(1.0), &design, &GridSpec::default()).unwrap();
        let mut state = policy.start_episode(&design);
        let mut rng = policy_rng(0, 0);
        let e = DVector::zeros(1);
        // P_0 = 1, Y_0 = 0.5: 0.5 <= 1, wait; P_1 = 2, Y_1 = 0.6: 1.4 > 1, send
        assert!(!policy.decide(&design, &mut state, 0, &e, &mut rng));
        assert_relative_eq!(state.decoder_cov[(0, 0)], 2.0, epsilon = 1e-14);
        assert!(policy.decide(&design, &mut state, 1, &e, &mut rng));
        assert_relative_eq!(state.decoder_cov[(0, 0)], design.schedule.theta[1][(0, 0)], epsilon = 1e-14);
    }

    #[test]
    fn bernoulli_rate() {
        let design = scalar(2);
        let policy = TriggerPolicy::new(TriggerKind::Bernoulli(0.3), &design, &GridSpec::default()).unwrap();
        let mut state = policy.start_episode(&design);
        let mut rng = policy_rng(9, 0);
        let e = DVector::zeros(1);
        let hits = (0..20_000).filter(|_| policy.decide(&design, &mut state, 0, &e, &mut rng)).count();
        assert!((hits as f64 / 20_000.0 - 0.3).abs() < 0.015);
    }

    #[test]
    fn exact_falls_back_for_vector_state() {
        let mut st = Stationary::scalar(1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.5);
        st.a = DMatrix::identity(2, 2);
        st.b = DMatrix::from_element(2, 1, 1.0);
        st.sensors = vec![(DMatrix::identity(2, 2), DMatrix::identity(2, 2))];
        st.w = DMatrix::identity(2, 2);
        st.m0 = DVector::zeros(2);
        st.cov0 = DMatrix::identity(2, 2);
        st.q = DMatrix::identity(2, 2);
        st.q_final = DMatrix::identity(2, 2);
        let design = Design::new(ProcessModel::from_stationary(3, &st).unwrap()).unwrap();
        let policy = TriggerPolicy::new(TriggerKind::VoiExact, &design, &GridSpec::default()).unwrap();
        assert_eq!(policy.kind(), TriggerKind::VoiMyopic);
    }

    #[test]
    fn control_policies() {
        let design = scalar(1);
        assert_eq!(act(ControlPolicy::Zero, &design, &DVector::from_element(1, 3.0), 0)[0], 0.0);
        assert_eq!(act(ControlPolicy::CertaintyEquivalent, &design, &DVector::zeros(1), 0)[0], 0.0);
        assert_relative_eq!(
            act(ControlPolicy::CertaintyEquivalent, &design, &DVector::from_element(1, 2.0), 0)[0],
            -1.2,
            epsilon = 1e-14
        );
    }
}
