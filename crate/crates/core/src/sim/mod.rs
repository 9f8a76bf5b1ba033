//! Deterministic discrete-event engine.
//!
//! Clients issue requests that walk their operation's component path one
//! call at a time. Recovery actions (microreboot of a component set,
//! application restart, server restart) change component status at their
//! trigger time; the engine then applies the consequences: killed in-flight
//! calls, `RetryLater` stalls, refused connections, lost session state.

mod engine;
mod queue;
mod retry;
mod runtime;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use engine::{
    DbEvent, DbEventKind, RecoveryWindow, RetryEvent, SessionLoss, SimOutput, Simulation,
};
pub use queue::EventQueue;
pub use retry::{invoke, HopOutcome, RetryLaterSignal, RetryPolicy};
pub use runtime::{ComponentRuntime, Status};

/// Default user patience: a request slower than this counts as failed.
pub const DEFAULT_ABANDONMENT_MS: u64 = 8000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RecoveryKind {
    Microreboot(BTreeSet<String>),
    AppRestart,
    ServerRestart,
}

impl RecoveryKind {
    pub fn label(&self) -> String {
        match self {
            RecoveryKind::Microreboot(ids) => {
                format!(
                    "microreboot({})",
                    ids.iter().cloned().collect::<Vec<_>>().join(",")
                )
            }
            RecoveryKind::AppRestart => "app-restart".into(),
            RecoveryKind::ServerRestart => "server-restart".into(),
        }
    }
}

/// Optional post-recovery slowdown: for `window_ms` after a component comes
/// back, its service times are multiplied by `factor`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stabilization {
    pub window_ms: u64,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryAction {
    pub kind: RecoveryKind,
    pub trigger_ms: u64,
    pub stabilization: Option<Stabilization>,
}

impl RecoveryAction {
    pub fn microreboot<I, S>(ids: I, trigger_ms: u64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        RecoveryAction {
            kind: RecoveryKind::Microreboot(ids.into_iter().map(Into::into).collect()),
            trigger_ms,
            stabilization: None,
        }
    }

    pub fn app_restart(trigger_ms: u64) -> Self {
        RecoveryAction {
            kind: RecoveryKind::AppRestart,
            trigger_ms,
            stabilization: None,
        }
    }

    pub fn server_restart(trigger_ms: u64) -> Self {
        RecoveryAction {
            kind: RecoveryKind::ServerRestart,
            trigger_ms,
            stabilization: None,
        }
    }
}

/// How the components of one microreboot come back.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RedeployOrder {
    /// All components go down together and are redeployed one after another
    /// in model order; component `i` is back after the sum of the first `i`
    /// durations.
    #[default]
    Sequential,
    /// Every component comes back after its own duration.
    Parallel,
}

/// Front-end capacity. `None` means unbounded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerLimits {
    #[serde(default)]
    pub worker_threads: Option<usize>,
    #[serde(default)]
    pub accept_queue: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub clients: u32,
    /// Clients stop issuing new requests at this time; requests already in
    /// flight still complete.
    pub duration_ms: u64,
    pub seed: u64,
    pub retry: RetryPolicy,
    pub abandonment_ms: Option<u64>,
    pub server: ServerLimits,
    pub redeploy: RedeployOrder,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            clients: 20,
            duration_ms: 60_000,
            seed: 0,
            retry: RetryPolicy::default(),
            abandonment_ms: Some(DEFAULT_ABANDONMENT_MS),
            server: ServerLimits::default(),
            redeploy: RedeployOrder::default(),
        }
    }
}
