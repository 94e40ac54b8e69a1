//! JSON model files.
//!
//! Keys: `N`, `A`, `B`, `sensors: [{C, V}]`, `W`, `M0`, `m0`, `Q`, `R`,
//! `Qfinal`, `ell`, `lambda`. Matrices are row-major nested arrays; a bare
//! number is a 1×1 matrix. Any matrix key may instead hold a list with one
//! entry per stage `0..=N` (for scalar models a flat list of numbers).
//! Missing `m0` defaults to zeros, `Qfinal` to the last stage's `Q` and
//! `ell` to 1.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ModelError, ModelParts, ProcessModel, SensorParts};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixInput {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
    Stages(Vec<StageMatrix>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StageMatrix {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorInput {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    #[serde(rename = "C")]
    pub c: MatrixInput,
    #[serde(rename = "V")]
    pub v: MatrixInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(rename = "A")]
    pub a: MatrixInput,
    #[serde(rename = "B")]
    pub b: MatrixInput,
    pub sensors: Vec<SensorConfig>,
    #[serde(rename = "W")]
    pub w: MatrixInput,
    #[serde(rename = "M0")]
    pub cov0: MatrixInput,
    #[serde(rename = "m0", default, skip_serializing_if = "Option::is_none")]
    pub m0: Option<VectorInput>,
    #[serde(rename = "Q")]
    pub q: MatrixInput,
    #[serde(rename = "R")]
    pub r: MatrixInput,
    #[serde(rename = "Qfinal", default, skip_serializing_if = "Option::is_none")]
    pub q_final: Option<MatrixInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<VectorInput>,
    pub lambda: f64,
}

fn config_err(field: &str, message: impl Into<String>) -> ModelError {
    ModelError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

fn rows_to_matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ModelError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(config_err(field, "matrix must be non-empty"));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(config_err(field, "rows have different lengths"));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flatten().copied(),
    ))
}

fn stage_matrix(field: &str, m: &StageMatrix) -> Result<DMatrix<f64>, ModelError> {
    match m {
        StageMatrix::Scalar(x) => Ok(DMatrix::from_element(1, 1, *x)),
        StageMatrix::Rows(rows) => rows_to_matrix(field, rows),
    }
}

impl MatrixInput {
    /// Expands to `count` per-stage matrices.
    pub fn expand(&self, field: &str, count: usize) -> Result<Vec<DMatrix<f64>>, ModelError> {
        match self {
            MatrixInput::Scalar(x) => Ok(vec![DMatrix::from_element(1, 1, *x); count]),
            MatrixInput::Rows(rows) => Ok(vec![rows_to_matrix(field, rows)?; count]),
            MatrixInput::Stages(stages) => {
                if stages.len() != count {
                    return Err(config_err(
                        field,
                        format!("expected {count} per-stage entries, found {}", stages.len()),
                    ));
                }
                stages.iter().map(|m| stage_matrix(field, m)).collect()
            }
        }
    }

    /// A single matrix; per-stage lists are rejected.
    pub fn single(&self, field: &str) -> Result<DMatrix<f64>, ModelError> {
        match self {
            MatrixInput::Stages(_) => Err(config_err(field, "expected a single matrix")),
            other => Ok(other.expand(field, 1)?.remove(0)),
        }
    }
}

impl ModelConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| config_err(&serde_field(&e.to_string()), e.to_string()))
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, ModelError> {
        serde_json::from_value(value).map_err(|e| config_err(&serde_field(&e.to_string()), e.to_string()))
    }

    /// Copy with every default made explicit.
    pub fn resolved(&self) -> Result<Self, ModelError> {
        let model = self.to_model()?;
        let mut out = self.clone();
        if out.m0.is_none() {
            out.m0 = Some(VectorInput::Vector(model.m0().iter().copied().collect()));
        }
        if out.q_final.is_none() {
            let q = model.q(model.stages());
            out.q_final = Some(MatrixInput::Rows(
                q.row_iter().map(|r| r.iter().copied().collect()).collect(),
            ));
        }
        if out.ell.is_none() {
            out.ell = Some(VectorInput::Scalar(1.0));
        }
        Ok(out)
    }

    /// Builds the (structurally checked, not yet validated) model.
    pub fn to_model(&self) -> Result<ProcessModel, ModelError> {
        let stages = self.horizon + 1;
        let a = self.a.expand("A", stages)?;
        let b = self.b.expand("B", stages)?;
        let w = self.w.expand("W", stages)?;
        let r = self.r.expand("R", stages)?;
        let mut q = self.q.expand("Q", stages)?;
        let q_final = match &self.q_final {
            Some(m) => m.single("Qfinal")?,
            None => q[stages - 1].clone(),
        };
        q.push(q_final);
        let cov0 = self.cov0.single("M0")?;
        let n = a[0].nrows();
        let m0 = match &self.m0 {
            None => DVector::zeros(n),
            Some(VectorInput::Scalar(x)) => DVector::from_element(1, *x),
            Some(VectorInput::Vector(v)) => DVector::from_vec(v.clone()),
        };
        let rate_weights = match &self.ell {
            None => vec![1.0; stages],
            Some(VectorInput::Scalar(x)) => vec![*x; stages],
            Some(VectorInput::Vector(v)) => {
                if v.len() != stages {
                    return Err(config_err(
                        "ell",
                        format!("expected {stages} per-stage entries, found {}", v.len()),
                    ));
                }
                v.clone()
            }
        };
        if self.sensors.is_empty() {
            return Err(config_err("sensors", "at least one sensor is required"));
        }
        let sensors = self
            .sensors
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Ok(SensorParts {
                    c: s.c.expand(&format!("sensors[{i}].C"), stages)?,
                    v: s.v.expand(&format!("sensors[{i}].V"), stages)?,
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        ProcessModel::new(ModelParts {
            horizon: self.horizon,
            a,
            b,
            w,
            sensors,
            m0,
            cov0,
            q,
            r,
            rate_weights,
            lambda: self.lambda,
        })
    }
}

/// Pulls the backtick-quoted field name out of a serde error message.
fn serde_field(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<root>".to_string())
}
