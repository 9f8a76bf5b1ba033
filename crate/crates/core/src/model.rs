//! The componentized application under test.
//!
//! An [`AppModel`] lists the components (servlets and beans), the operations
//! clients can request together with the component path that serves each of
//! them, and the fault-propagation map that decides how far a microreboot
//! has to reach.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentKind {
    Servlet,
    StatelessBean,
    StatefulSessionBean,
    EntityBean,
}

/// Where a component keeps per-session state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionStatePolicy {
    #[default]
    None,
    /// State lives in a store outside the component and survives reboots.
    ExternalStore,
    /// State lives in the container's memory and is discarded by any reboot
    /// of the component.
    InMemoryVolatile,
}

/// Per-invocation service time, in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "kebab-case")]
pub enum ServiceTime {
    Constant { ms: f64 },
    Uniform { min_ms: f64, max_ms: f64 },
    Exponential { mean_ms: f64 },
}

impl ServiceTime {
    /// Draws one service time. Samples are rounded to whole milliseconds and
    /// never drop below 1 ms, so every hop advances the clock.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let raw = match *self {
            ServiceTime::Constant { ms } => ms,
            ServiceTime::Uniform { min_ms, max_ms } => {
                if max_ms > min_ms {
                    rng.random_range(min_ms..max_ms)
                } else {
                    min_ms
                }
            }
            ServiceTime::Exponential { mean_ms } => match Exp::new(1.0 / mean_ms) {
                Ok(exp) => exp.sample(rng),
                Err(_) => mean_ms,
            },
        };
        (raw.round() as u64).max(1)
    }

    pub fn mean_ms(&self) -> f64 {
        match *self {
            ServiceTime::Constant { ms } => ms,
            ServiceTime::Uniform { min_ms, max_ms } => (min_ms + max_ms) / 2.0,
            ServiceTime::Exponential { mean_ms } => mean_ms,
        }
    }

    fn is_valid(&self) -> bool {
        match *self {
            ServiceTime::Constant { ms } => ms.is_finite() && ms >= 0.0,
            ServiceTime::Uniform { min_ms, max_ms } => {
                min_ms.is_finite() && max_ms.is_finite() && min_ms >= 0.0 && max_ms >= min_ms
            }
            ServiceTime::Exponential { mean_ms } => mean_ms.is_finite() && mean_ms > 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub id: String,
    pub kind: ComponentKind,
    pub service_time: ServiceTime,
    /// Time to undeploy and redeploy this component, in milliseconds.
    pub microreboot_duration: u64,
    #[serde(default)]
    pub session_state_policy: SessionStatePolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperationSpec {
    pub id: String,
    /// Components invoked, in call order, to serve the operation. The first
    /// entry is the servlet the front end dispatches to.
    pub path: Vec<String>,
    #[serde(default)]
    pub is_db_write: bool,
    #[serde(default)]
    pub is_homepage: bool,
}

/// Directed edges `(source, target)`: a fault in `source` was observed to
/// propagate to `target`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FaultPropagationMap {
    pub edges: Vec<(String, String)>,
}

fn default_error_latency() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppModel {
    #[serde(default)]
    pub name: String,
    pub components: Vec<ComponentSpec>,
    pub operations: Vec<OperationSpec>,
    #[serde(rename = "fault_edges", default)]
    pub fault_map: FaultPropagationMap,
    #[serde(rename = "app_restart_ms")]
    pub app_restart_duration: u64,
    #[serde(rename = "server_restart_ms")]
    pub server_restart_duration: u64,
    /// Time for an error page or a refused connection to reach the client.
    #[serde(default = "default_error_latency")]
    pub error_latency_ms: u64,
}

/// One broken model invariant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    DuplicateComponent(String),
    DuplicateOperation(String),
    ZeroMicrorebootDuration(String),
    InvalidServiceTime(String),
    StatefulServlet(String),
    UnresolvedComponent {
        id: String,
        referenced_by: String,
    },
    EmptyPath(String),
    PathStartsWithNonServlet {
        operation: String,
        first: String,
    },
    NoHomepage,
    MultipleHomepages(Vec<String>),
    SelfEdge(String),
    AppRestartTooShort {
        app_restart_ms: u64,
        longest_microreboot_ms: u64,
    },
    ServerRestartTooShort {
        server_restart_ms: u64,
        app_restart_ms: u64,
    },
    ZeroErrorLatency,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateComponent(id) => write!(f, "duplicate component {id}"),
            Violation::DuplicateOperation(id) => write!(f, "duplicate operation {id}"),
            Violation::ZeroMicrorebootDuration(id) => {
                write!(f, "component {id} has a zero microreboot duration")
            }
            Violation::InvalidServiceTime(id) => {
                write!(f, "component {id} has an invalid service time distribution")
            }
            Violation::StatefulServlet(id) => {
                write!(f, "servlet {id} declares a session state policy")
            }
            Violation::UnresolvedComponent { id, referenced_by } => {
                write!(f, "unresolved component {id} (referenced by {referenced_by})")
            }
            Violation::EmptyPath(op) => write!(f, "operation {op} has an empty path"),
            Violation::PathStartsWithNonServlet { operation, first } => write!(
                f,
                "operation {operation} path starts at {first}, which is not a servlet"
            ),
            Violation::NoHomepage => write!(f, "no homepage operation"),
            Violation::MultipleHomepages(ids) => {
                write!(f, "multiple homepage operations: {}", ids.join(", "))
            }
            Violation::SelfEdge(id) => write!(f, "fault edge from {id} to itself"),
            Violation::AppRestartTooShort {
                app_restart_ms,
                longest_microreboot_ms,
            } => write!(
                f,
                "app restart ({app_restart_ms} ms) shorter than the longest microreboot ({longest_microreboot_ms} ms)"
            ),
            Violation::ServerRestartTooShort {
                server_restart_ms,
                app_restart_ms,
            } => write!(
                f,
                "server restart ({server_restart_ms} ms) shorter than app restart ({app_restart_ms} ms)"
            ),
            Violation::ZeroErrorLatency => write!(f, "error_latency_ms must be at least 1"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidModel(self.violations))
        }
    }
}

/// Checks every structural invariant of the model. Violations are returned
/// as data; nothing here fails.
pub fn validate_model(model: &AppModel) -> ValidationReport {
    let mut violations = Vec::new();

    let mut kinds: HashMap<&str, ComponentKind> = HashMap::new();
    for c in &model.components {
        if kinds.insert(c.id.as_str(), c.kind).is_some() {
            violations.push(Violation::DuplicateComponent(c.id.clone()));
        }
        if c.microreboot_duration == 0 {
            violations.push(Violation::ZeroMicrorebootDuration(c.id.clone()));
        }
        if !c.service_time.is_valid() {
            violations.push(Violation::InvalidServiceTime(c.id.clone()));
        }
        if c.kind == ComponentKind::Servlet && c.session_state_policy != SessionStatePolicy::None {
            violations.push(Violation::StatefulServlet(c.id.clone()));
        }
    }

    let mut seen_ops = HashSet::new();
    let mut homepages = Vec::new();
    for op in &model.operations {
        if !seen_ops.insert(op.id.as_str()) {
            violations.push(Violation::DuplicateOperation(op.id.clone()));
        }
        if op.is_homepage {
            homepages.push(op.id.clone());
        }
        match op.path.first() {
            None => violations.push(Violation::EmptyPath(op.id.clone())),
            Some(first) => {
                if let Some(kind) = kinds.get(first.as_str()) {
                    if *kind != ComponentKind::Servlet {
                        violations.push(Violation::PathStartsWithNonServlet {
                            operation: op.id.clone(),
                            first: first.clone(),
                        });
                    }
                }
            }
        }
        for hop in &op.path {
            if !kinds.contains_key(hop.as_str()) {
                violations.push(Violation::UnresolvedComponent {
                    id: hop.clone(),
                    referenced_by: format!("operation {}", op.id),
                });
            }
        }
    }
    match homepages.len() {
        0 => violations.push(Violation::NoHomepage),
        1 => {}
        _ => violations.push(Violation::MultipleHomepages(homepages)),
    }

    for (src, dst) in &model.fault_map.edges {
        for end in [src, dst] {
            if !kinds.contains_key(end.as_str()) {
                violations.push(Violation::UnresolvedComponent {
                    id: end.clone(),
                    referenced_by: format!("fault edge {src} -> {dst}"),
                });
            }
        }
        if src == dst {
            violations.push(Violation::SelfEdge(src.clone()));
        }
    }

    let longest = model
        .components
        .iter()
        .map(|c| c.microreboot_duration)
        .max()
        .unwrap_or(0);
    if model.app_restart_duration < longest {
        violations.push(Violation::AppRestartTooShort {
            app_restart_ms: model.app_restart_duration,
            longest_microreboot_ms: longest,
        });
    }
    if model.server_restart_duration < model.app_restart_duration {
        violations.push(Violation::ServerRestartTooShort {
            server_restart_ms: model.server_restart_duration,
            app_restart_ms: model.app_restart_duration,
        });
    }
    if model.error_latency_ms == 0 {
        violations.push(Violation::ZeroErrorLatency);
    }

    ValidationReport { violations }
}

/// Everything reachable from `seed` over the fault-propagation map,
/// including `seed` itself.
pub fn fault_closure(model: &AppModel, seed: &str) -> Result<BTreeSet<String>> {
    fault_closure_of_set(model, [seed])
}

/// Union of the closures of every seed.
pub fn fault_closure_of_set<'a, I>(model: &AppModel, seeds: I) -> Result<BTreeSet<String>>
where
    I: IntoIterator<Item = &'a str>,
{
    let known: HashSet<&str> = model.components.iter().map(|c| c.id.as_str()).collect();
    let mut successors: HashMap<&str, Vec<&str>> = HashMap::new();
    for (src, dst) in &model.fault_map.edges {
        successors
            .entry(src.as_str())
            .or_default()
            .push(dst.as_str());
    }

    let mut closed: BTreeSet<String> = BTreeSet::new();
    let mut work: Vec<&str> = Vec::new();
    for seed in seeds {
        if !known.contains(seed) {
            return Err(Error::UnknownComponent(seed.to_string()));
        }
        if closed.insert(seed.to_string()) {
            work.push(seed);
        }
    }
    while let Some(node) = work.pop() {
        for &next in successors.get(node).into_iter().flatten() {
            if closed.insert(next.to_string()) {
                work.push(next);
            }
        }
    }
    Ok(closed)
}

/// The component path serving `operation`, unchanged.
pub fn route_for<'m>(model: &'m AppModel, operation: &str) -> Result<&'m [String]> {
    model
        .operations
        .iter()
        .find(|op| op.id == operation)
        .map(|op| op.path.as_slice())
        .ok_or_else(|| Error::UnknownOperation(operation.to_string()))
}

impl AppModel {
    pub fn from_json_str(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn component(&self, id: &str) -> Option<&ComponentSpec> {
        self.components.iter().find(|c| c.id == id)
    }

    pub fn operation(&self, id: &str) -> Option<&OperationSpec> {
        self.operations.iter().find(|o| o.id == id)
    }

    pub fn homepage(&self) -> Option<&OperationSpec> {
        self.operations.iter().find(|o| o.is_homepage)
    }

    /// Validates the model and builds the index the engine runs on.
    pub fn index(&self) -> Result<ModelIndex> {
        validate_model(self).into_result()?;
        ModelIndex::build(self)
    }
}

/// Dense, index-based view of a validated model.
#[derive(Clone, Debug)]
pub struct ModelIndex {
    component_ids: Vec<String>,
    component_by_id: HashMap<String, usize>,
    operation_ids: Vec<String>,
    operation_by_id: HashMap<String, usize>,
    paths: Vec<Vec<usize>>,
    db_write: Vec<bool>,
    homepage: usize,
    successors: Vec<Vec<usize>>,
}

impl ModelIndex {
    fn build(model: &AppModel) -> Result<Self> {
        let component_ids: Vec<String> = model.components.iter().map(|c| c.id.clone()).collect();
        let component_by_id: HashMap<String, usize> = component_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        let lookup = |id: &str| {
            component_by_id
                .get(id)
                .copied()
                .ok_or_else(|| Error::UnknownComponent(id.to_string()))
        };

        let mut paths = Vec::with_capacity(model.operations.len());
        for op in &model.operations {
            paths.push(
                op.path
                    .iter()
                    .map(|c| lookup(c))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let mut successors = vec![Vec::new(); component_ids.len()];
        for (src, dst) in &model.fault_map.edges {
            successors[lookup(src)?].push(lookup(dst)?);
        }
        let operation_ids: Vec<String> = model.operations.iter().map(|o| o.id.clone()).collect();
        let operation_by_id = operation_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        let homepage = model
            .operations
            .iter()
            .position(|o| o.is_homepage)
            .ok_or(Error::InvalidModel(vec![Violation::NoHomepage]))?;

        Ok(ModelIndex {
            component_ids,
            component_by_id,
            operation_ids,
            operation_by_id,
            paths,
            db_write: model.operations.iter().map(|o| o.is_db_write).collect(),
            homepage,
            successors,
        })
    }

    pub fn component_count(&self) -> usize {
        self.component_ids.len()
    }

    pub fn operation_count(&self) -> usize {
        self.operation_ids.len()
    }

    pub fn component_id(&self, idx: usize) -> &str {
        &self.component_ids[idx]
    }

    pub fn component_index(&self, id: &str) -> Result<usize> {
        self.component_by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownComponent(id.to_string()))
    }

    pub fn operation_id(&self, idx: usize) -> &str {
        &self.operation_ids[idx]
    }

    pub fn operation_index(&self, id: &str) -> Result<usize> {
        self.operation_by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownOperation(id.to_string()))
    }

    pub fn path(&self, op: usize) -> &[usize] {
        &self.paths[op]
    }

    pub fn is_db_write(&self, op: usize) -> bool {
        self.db_write[op]
    }

    pub fn homepage(&self) -> usize {
        self.homepage
    }

    pub fn successors(&self, component: usize) -> &[usize] {
        &self.successors[component]
    }
}
