use std::collections::BTreeSet;

use crate::model::SessionStatePolicy;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Online,
    Recovering {
        until: u64,
    },
    /// Gone with no redeploy scheduled.
    Undeployed,
}

/// Live state of one component inside the container.
#[derive(Clone, Debug)]
pub struct ComponentRuntime {
    pub status: Status,
    pub microreboot_duration: u64,
    pub policy: SessionStatePolicy,
    /// Clients whose request currently has this component on its call stack.
    pub inflight: BTreeSet<u32>,
    /// Sessions with state held in this component's memory.
    pub session_bindings: BTreeSet<u64>,
    /// Bumped on every reboot so stale "back online" events can be ignored.
    pub epoch: u64,
    pub slow_until: u64,
    pub slow_factor: f64,
    pub(crate) pending_slowdown: Option<super::Stabilization>,
}

impl ComponentRuntime {
    pub fn new(microreboot_duration: u64, policy: SessionStatePolicy) -> Self {
        ComponentRuntime {
            status: Status::Online,
            microreboot_duration,
            policy,
            inflight: BTreeSet::new(),
            session_bindings: BTreeSet::new(),
            epoch: 0,
            slow_until: 0,
            slow_factor: 1.0,
            pending_slowdown: None,
        }
    }

    /// Remaining recovery time, floored at zero. `None` unless recovering.
    pub fn remaining_recovery(&self, now: u64) -> Option<u64> {
        match self.status {
            Status::Recovering { until } => Some(until.saturating_sub(now)),
            _ => None,
        }
    }

    pub fn is_online(&self) -> bool {
        self.status == Status::Online
    }
}
