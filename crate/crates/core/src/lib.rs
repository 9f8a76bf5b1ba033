//! Discrete-event simulation of component-level microreboots in a
//! three-tier web application, with session-aware goodput metrics.

pub mod error;
pub mod faults;
pub mod fixtures;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod scenario;
pub mod sim;
pub mod trace;
pub mod workload;

pub use error::{Error, Result};
pub use model::{fault_closure, validate_model, AppModel};
pub use sim::{RecoveryAction, SimConfig, SimOutput, Simulation};
pub use trace::{Outcome, RequestRecord};
