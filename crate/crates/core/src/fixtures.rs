//! Bundled RUBiS-like application and workload.
//!
//! The model is a reconstruction: 27 servlet-fronted operations over nine
//! beans. Paths are mostly a single servlet-to-bean hop. The only beans that
//! propagate faults to other beans are IDManagerEJB, ItemEJB, CategoryEJB
//! and UserEJB, and the closure of UserEJB is {UserEJB, ItemEJB, BidEJB}.
//! The transition table is synthesized so every operation is reachable and
//! roughly 15% of requests are database writes.

use std::path::PathBuf;

use crate::model::{AppModel, ModelIndex};
use crate::workload::{WorkloadDocument, WorkloadModel};

pub const RUBIS_MODEL_JSON: &str = include_str!("../fixtures/rubis/model.json");
pub const RUBIS_WORKLOAD_JSON: &str = include_str!("../fixtures/rubis/workload.json");

pub fn rubis_model() -> AppModel {
    AppModel::from_json_str(RUBIS_MODEL_JSON).expect("bundled model parses")
}

pub fn rubis_workload_document() -> WorkloadDocument {
    serde_json::from_str(RUBIS_WORKLOAD_JSON).expect("bundled workload parses")
}

pub fn rubis_workload(index: &ModelIndex) -> WorkloadModel {
    WorkloadModel::from_document(&rubis_workload_document(), index)
        .expect("bundled workload is valid")
}

/// Directory holding the bundled model, workload and scenario documents.
pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join("rubis")
}
