//! Experiment configuration: a model plus run settings.
//!
//! A config file is either a bare model file or an object with a `model`
//! key holding a path (relative to the config file) or an inline model.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use voi_control::model::ModelConfig;
use voi_control::policies::{ControlPolicy, TriggerKind};
use voi_control::voidp::GridSpec;
use voi_control::{Design, DesignError};

use crate::CliError;

pub const DEFAULT_EPISODES: u64 = 10_000;
pub const DEFAULT_ORACLE_ORDER: usize = voi_control::oracle::DEFAULT_ORACLE_ORDER;

const KEYS: [&str; 9] = [
    "model", "policy", "control", "grid", "episodes", "seed", "lambdas", "quad_order", "threads",
];

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    pub model: ModelConfig,
    pub policy: TriggerKind,
    pub control: ControlPolicy,
    pub grid: GridSpec,
    pub episodes: u64,
    pub seed: u64,
    pub lambdas: Vec<f64>,
    /// Gauss-Hermite order of the enumeration oracle.
    pub quad_order: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

fn default_lambdas() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

fn field_error(field: &str, message: impl ToString) -> CliError {
    CliError::Config {
        field: field.to_string(),
        message: message.to_string(),
    }
}

fn read_json(path: &Path, field: &str) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| field_error(field, format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| field_error(field, format!("{} is not valid JSON: {e}", path.display())))
}

fn take<T: DeserializeOwned>(map: &mut Map<String, Value>, key: &str) -> Result<Option<T>, CliError> {
    map.remove(key)
        .map(|v| serde_json::from_value(v).map_err(|e| field_error(key, e)))
        .transpose()
}

fn parse_model(value: Value) -> Result<ModelConfig, CliError> {
    ModelConfig::from_value(value).map_err(CliError::from)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let value = read_json(path, "config")?;
        let Value::Object(mut map) = value else {
            return Err(field_error("config", "top level must be a JSON object"));
        };
        if !map.contains_key("model") {
            let model = parse_model(Value::Object(map))?;
            return Self::with_model(model, None);
        }
        if let Some(unknown) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(field_error(unknown, "unknown field"));
        }
        let (model, model_path) = match map.remove("model").expect("checked above") {
            Value::String(p) => {
                let resolved = path.parent().unwrap_or(Path::new(".")).join(&p);
                let value = read_json(&resolved, "model")?;
                (parse_model(value)?, Some(resolved))
            }
            inline @ Value::Object(_) => (parse_model(inline)?, None),
            _ => return Err(field_error("model", "expected a path or an inline model object")),
        };
        let mut cfg = Self::with_model(model, model_path)?;
        if let Some(policy) = map.remove("policy") {
            let text = policy.as_str().ok_or_else(|| field_error("policy", "expected a string `kind[:param]`"))?;
            cfg.policy = text.parse().map_err(|e| field_error("policy", e))?;
        }
        if let Some(control) = map.remove("control") {
            let text = control.as_str().ok_or_else(|| field_error("control", "expected a string"))?;
            cfg.control = text.parse().map_err(|e| field_error("control", e))?;
        }
        if let Some(grid) = take(&mut map, "grid")? {
            cfg.grid = grid;
        }
        if let Some(episodes) = take(&mut map, "episodes")? {
            cfg.episodes = episodes;
        }
        if let Some(seed) = take(&mut map, "seed")? {
            cfg.seed = seed;
        }
        if let Some(lambdas) = take(&mut map, "lambdas")? {
            cfg.lambdas = lambdas;
        }
        if let Some(order) = take(&mut map, "quad_order")? {
            cfg.quad_order = order;
        }
        cfg.threads = take(&mut map, "threads")?;
        Ok(cfg)
    }

    fn with_model(model: ModelConfig, model_path: Option<PathBuf>) -> Result<Self, CliError> {
        Ok(Self {
            model_path,
            model: model.resolved()?,
            policy: TriggerKind::VoiExact,
            control: ControlPolicy::default(),
            grid: GridSpec::default(),
            episodes: DEFAULT_EPISODES,
            seed: 0,
            lambdas: default_lambdas(),
            quad_order: DEFAULT_ORACLE_ORDER,
            threads: None,
        })
    }

    /// Range checks on the run settings.
    pub fn check(&self) -> Result<(), CliError> {
        if self.episodes < 2 {
            return Err(field_error("episodes", format!("need at least 2 episodes, got {}", self.episodes)));
        }
        self.grid.validate().map_err(|e| field_error("grid", e))?;
        if self.lambdas.is_empty() {
            return Err(field_error("lambdas", "list is empty"));
        }
        if let Some(bad) = self.lambdas.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return Err(field_error("lambdas", format!("{bad} is outside (0, 1)")));
        }
        if self.quad_order < 1 {
            return Err(field_error("quad_order", "must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(field_error("threads", "must be at least 1"));
        }
        Ok(())
    }

    pub fn design(&self) -> Result<Design, CliError> {
        let model = self.model.to_model()?;
        Design::new(model).map_err(|e| match e {
            DesignError::Model(m) => CliError::from(m),
            other => CliError::Run(other.to_string()),
        })
    }
}
