//! Container-level call retry.
//!
//! A call to a component that is being rebooted does not reach it. The
//! caller's container gets a `RetryLater(t)` signal carrying the estimated
//! time until the callee is back, pauses, and tries again. Once the retry
//! budget is spent the call fails.

use serde::{Deserialize, Serialize};

use super::runtime::{ComponentRuntime, Status};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RetryLaterSignal {
    /// Estimated remaining recovery time of the callee, in milliseconds.
    pub t: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HopOutcome {
    Ok,
    RetryLater(RetryLaterSignal),
    HardFail,
}

/// Decides what a single call attempt to `callee` does at `now`. An
/// invocation is atomic: it is either delivered (`Ok`) or never reaches the
/// callee.
pub fn invoke(callee: &ComponentRuntime, faulted: bool, now: u64) -> HopOutcome {
    match callee.status {
        Status::Recovering { until } => HopOutcome::RetryLater(RetryLaterSignal {
            t: until.saturating_sub(now),
        }),
        Status::Undeployed => HopOutcome::HardFail,
        Status::Online if faulted => HopOutcome::HardFail,
        Status::Online => HopOutcome::Ok,
    }
}

fn default_max_attempts() -> u32 {
    3
}

fn default_pause_factor() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    #[serde(default)]
    pub enabled: bool,
    /// Retries allowed per call, each preceded by a pause.
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    /// Multiplier on `t` for the pause length.
    #[serde(default = "default_pause_factor")]
    pub pause_factor: f64,
    /// Pause this long regardless of `t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_pause_ms: Option<u64>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            enabled: false,
            max_attempts: default_max_attempts(),
            pause_factor: default_pause_factor(),
            fixed_pause_ms: None,
        }
    }
}

impl RetryPolicy {
    pub fn enabled() -> Self {
        RetryPolicy {
            enabled: true,
            ..Default::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.max_attempts < 1 {
            return Err(Error::Scenario(
                "retry max_attempts must be at least 1".into(),
            ));
        }
        if !(self.pause_factor > 0.0 && self.pause_factor.is_finite()) {
            return Err(Error::Scenario(
                "retry pause_factor must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Pause before the next retry, or `None` when the call should fail.
    /// `retries_so_far` counts retries already made for this request. Pauses
    /// are at least 1 ms.
    pub fn next_pause(&self, retries_so_far: u32, signal: RetryLaterSignal) -> Option<u64> {
        if !self.enabled || retries_so_far >= self.max_attempts {
            return None;
        }
        let pause = match self.fixed_pause_ms {
            Some(ms) => ms,
            None => (self.pause_factor * signal.t as f64).ceil() as u64,
        };
        Some(pause.max(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SessionStatePolicy;

    fn runtime(status: Status) -> ComponentRuntime {
        let mut rt = ComponentRuntime::new(1000, SessionStatePolicy::None);
        rt.status = status;
        rt
    }

    #[test]
    fn invoke_outcomes() {
        assert_eq!(invoke(&runtime(Status::Online), false, 0), HopOutcome::Ok);
        assert_eq!(
            invoke(&runtime(Status::Online), true, 0),
            HopOutcome::HardFail
        );
        assert_eq!(
            invoke(&runtime(Status::Recovering { until: 1500 }), false, 700),
            HopOutcome::RetryLater(RetryLaterSignal { t: 800 })
        );
        assert_eq!(
            invoke(&runtime(Status::Undeployed), false, 0),
            HopOutcome::HardFail
        );
    }

    #[test]
    fn disabled_policy_never_pauses() {
        let p = RetryPolicy::default();
        assert_eq!(p.next_pause(0, RetryLaterSignal { t: 10 }), None);
    }

    #[test]
    fn pause_follows_estimate() {
        let p = RetryPolicy {
            pause_factor: 1.5,
            ..RetryPolicy::enabled()
        };
        assert_eq!(p.next_pause(0, RetryLaterSignal { t: 300 }), Some(450));
        assert_eq!(p.next_pause(0, RetryLaterSignal { t: 0 }), Some(1));
        assert_eq!(p.next_pause(3, RetryLaterSignal { t: 300 }), None);
    }

    /// Steps the container loop by hand: 150 ms of recovery left, fixed
    /// 100 ms pauses, one retry allowed.
    #[test]
    fn single_retry_cannot_cover_two_pauses() {
        let p = RetryPolicy {
            max_attempts: 1,
            fixed_pause_ms: Some(100),
            ..RetryPolicy::enabled()
        };
        let callee = runtime(Status::Recovering { until: 150 });
        let mut now = 0;
        let mut retries = 0;
        let result = loop {
            match invoke(&callee, false, now) {
                HopOutcome::Ok => break HopOutcome::Ok,
                HopOutcome::HardFail => break HopOutcome::HardFail,
                HopOutcome::RetryLater(sig) => match p.next_pause(retries, sig) {
                    Some(pause) => {
                        retries += 1;
                        now += pause;
                    }
                    None => break HopOutcome::HardFail,
                },
            }
        };
        assert_eq!(result, HopOutcome::HardFail);
        assert_eq!((retries, now), (1, 100));
    }

    #[test]
    fn policy_checks() {
        assert!(RetryPolicy::default().check().is_ok());
        let zero = RetryPolicy {
            max_attempts: 0,
            ..Default::default()
        };
        assert!(zero.check().is_err());
        let neg = RetryPolicy {
            pause_factor: -1.0,
            ..Default::default()
        };
        assert!(neg.check().is_err());
    }
}
