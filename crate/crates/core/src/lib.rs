//! Event-triggered estimation and control over a rate-limited channel.
//!
//! A multi-sensor Kalman encoder decides at every stage whether to send its
//! estimate to a certainty-equivalent LQR decoder. The trigger weighs the
//! value of information of the estimation mismatch against a transmission
//! price.

pub mod design;
pub mod estimation;
pub mod instances;
pub mod linalg;
pub mod lqr;
pub mod model;
pub mod oracle;
pub mod policies;
pub mod quadrature;
pub mod rng;
pub mod sim;
pub mod verify;
pub mod voidp;

pub use design::{Design, DesignError};
