//! A validated model together with everything synthesized offline from it.

use thiserror::Error;

use crate::estimation::{covariance_schedule, CovarianceSchedule, EstimationError};
use crate::lqr::{riccati_backward, RiccatiError, RiccatiSolution};
use crate::model::{aggregate_sensors, validate_model, AggregateSensor, ModelError, ProcessModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
}

/// Model, stacked sensors, encoder covariance schedule and Riccati solution.
/// Immutable and shareable across episode threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub model: ProcessModel,
    pub sensors: AggregateSensor,
    pub schedule: CovarianceSchedule,
    pub riccati: RiccatiSolution,
}

impl Design {
    pub fn new(model: ProcessModel) -> Result<Self, DesignError> {
        let model = validate_model(model)?;
        let sensors = aggregate_sensors(&model);
        let schedule = covariance_schedule(&model, &sensors)?;
        let riccati = riccati_backward(&model)?;
        Ok(Self {
            model,
            sensors,
            schedule,
            riccati,
        })
    }

    /// Rebuilds for a different trade-off weight; only the prices change.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self, DesignError> {
        Self::new(self.model.with_lambda(lambda))
    }

    pub fn horizon(&self) -> usize {
        self.model.horizon()
    }

    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }
}
