//! Fault injection specs and recovery planning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{fault_closure, AppModel};
use crate::sim::{RecoveryAction, RecoveryKind, Simulation, Stabilization};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultKind {
    /// Every invocation of the target fails.
    FailStop,
    /// Each invocation fails independently with probability `p`.
    Degrade,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClearedBy {
    #[default]
    AnyRebootCoveringTarget,
    Never,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub target: String,
    pub onset_ms: u64,
    pub kind: FaultKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default)]
    pub cleared_by: ClearedBy,
}

impl FaultSpec {
    pub fn fail_stop(target: impl Into<String>, onset_ms: u64, cleared_by: ClearedBy) -> Self {
        FaultSpec {
            target: target.into(),
            onset_ms,
            kind: FaultKind::FailStop,
            p: None,
            cleared_by,
        }
    }

    pub fn degrade(
        target: impl Into<String>,
        onset_ms: u64,
        p: f64,
        cleared_by: ClearedBy,
    ) -> Self {
        FaultSpec {
            target: target.into(),
            onset_ms,
            kind: FaultKind::Degrade,
            p: Some(p),
            cleared_by,
        }
    }

    /// Probability that one invocation of the target fails while the fault
    /// is active.
    pub fn failure_probability(&self) -> f64 {
        match self.kind {
            FaultKind::FailStop => 1.0,
            FaultKind::Degrade => self.p.unwrap_or(0.0),
        }
    }

    pub fn check(&self, model: &AppModel) -> Result<()> {
        if model.component(&self.target).is_none() {
            return Err(Error::UnknownComponent(self.target.clone()));
        }
        if self.kind == FaultKind::Degrade {
            match self.p {
                Some(p) if (0.0..=1.0).contains(&p) => {}
                Some(p) => {
                    return Err(Error::Scenario(format!(
                        "degrade fault on {} has p = {p}, expected 0 <= p <= 1",
                        self.target
                    )))
                }
                None => {
                    return Err(Error::Scenario(format!(
                        "degrade fault on {} is missing p",
                        self.target
                    )))
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecoveryPolicy {
    MicrorebootClosure,
    AppRestart,
    ServerRestart,
    None,
}

/// A recovery to fire at a fixed time. Detection is not modeled; a
/// detection delay is expressed by a trigger later than the fault onset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryPlan {
    pub policy: RecoveryPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failing: Option<String>,
    pub trigger_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stabilization: Option<Stabilization>,
}

impl RecoveryPlan {
    pub fn plan(&self, model: &AppModel) -> Result<Option<RecoveryAction>> {
        let action = plan_recovery(model, self.failing.as_deref(), self.policy, self.trigger_ms)?;
        Ok(action.map(|mut a| {
            a.stabilization = self.stabilization;
            a
        }))
    }
}

/// Maps a failing component and a policy to the recovery action that
/// handles it. `None` policy plans nothing.
pub fn plan_recovery(
    model: &AppModel,
    failing: Option<&str>,
    policy: RecoveryPolicy,
    trigger_ms: u64,
) -> Result<Option<RecoveryAction>> {
    if let Some(id) = failing {
        if model.component(id).is_none() {
            return Err(Error::UnknownComponent(id.to_string()));
        }
    }
    let kind = match policy {
        RecoveryPolicy::MicrorebootClosure => {
            let seed = failing.ok_or_else(|| {
                Error::Scenario("microreboot-closure needs a failing component".into())
            })?;
            RecoveryKind::Microreboot(fault_closure(model, seed)?)
        }
        RecoveryPolicy::AppRestart => RecoveryKind::AppRestart,
        RecoveryPolicy::ServerRestart => RecoveryKind::ServerRestart,
        RecoveryPolicy::None => return Ok(None),
    };
    Ok(Some(RecoveryAction {
        kind,
        trigger_ms,
        stabilization: None,
    }))
}

/// Schedules `spec` on a simulation that has not started yet.
pub fn inject(sim: &mut Simulation<'_>, spec: FaultSpec) -> Result<()> {
    sim.inject(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use std::collections::BTreeSet;

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn closure_policy_for_user_bean() {
        let model = fixtures::rubis_model();
        let action = plan_recovery(
            &model,
            Some("UserEJB"),
            RecoveryPolicy::MicrorebootClosure,
            100_000,
        )
        .unwrap()
        .unwrap();
        assert_eq!(
            action.kind,
            RecoveryKind::Microreboot(set(&["UserEJB", "ItemEJB", "BidEJB"]))
        );
        assert_eq!(action.trigger_ms, 100_000);
    }

    #[test]
    fn closure_policy_for_sink() {
        let model = fixtures::rubis_model();
        let action = plan_recovery(
            &model,
            Some("QueryEJB"),
            RecoveryPolicy::MicrorebootClosure,
            0,
        )
        .unwrap()
        .unwrap();
        assert_eq!(action.kind, RecoveryKind::Microreboot(set(&["QueryEJB"])));
    }

    #[test]
    fn restart_policies_ignore_closure() {
        let model = fixtures::rubis_model();
        let server = plan_recovery(&model, Some("UserEJB"), RecoveryPolicy::ServerRestart, 5)
            .unwrap()
            .unwrap();
        assert_eq!(server.kind, RecoveryKind::ServerRestart);
        let app = plan_recovery(&model, None, RecoveryPolicy::AppRestart, 5)
            .unwrap()
            .unwrap();
        assert_eq!(app.kind, RecoveryKind::AppRestart);
        assert!(plan_recovery(&model, None, RecoveryPolicy::None, 5)
            .unwrap()
            .is_none());
    }

    #[test]
    fn unknown_failing_component() {
        let model = fixtures::rubis_model();
        assert!(matches!(
            plan_recovery(
                &model,
                Some("GhostEJB"),
                RecoveryPolicy::MicrorebootClosure,
                0
            ),
            Err(Error::UnknownComponent(_))
        ));
    }

    #[test]
    fn closure_plans_always_contain_the_failing_component() {
        let model = fixtures::rubis_model();
        for c in &model.components {
            let action = plan_recovery(&model, Some(&c.id), RecoveryPolicy::MicrorebootClosure, 0)
                .unwrap()
                .unwrap();
            match action.kind {
                RecoveryKind::Microreboot(ids) => {
                    assert!(ids.contains(&c.id));
                    assert!(ids.iter().all(|id| model.component(id).is_some()));
                }
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn fault_spec_checks() {
        let model = fixtures::rubis_model();
        assert!(FaultSpec::fail_stop("QueryEJB", 0, ClearedBy::Never)
            .check(&model)
            .is_ok());
        assert!(FaultSpec::fail_stop("Ghost", 0, ClearedBy::Never)
            .check(&model)
            .is_err());
        assert!(FaultSpec::degrade("QueryEJB", 0, 1.5, ClearedBy::Never)
            .check(&model)
            .is_err());
        assert!(FaultSpec::degrade("QueryEJB", 0, 0.0, ClearedBy::Never)
            .check(&model)
            .is_ok());
    }

    #[test]
    fn scenario_entry_shape() {
        let f: FaultSpec = serde_json::from_str(
            r#"{"target":"QueryEJB","onset_ms":30000,"kind":"fail-stop","cleared_by":"never"}"#,
        )
        .unwrap();
        assert_eq!(
            f,
            FaultSpec::fail_stop("QueryEJB", 30_000, ClearedBy::Never)
        );
        let r: RecoveryPlan = serde_json::from_str(
            r#"{"policy":"microreboot-closure","failing":"UserEJB","trigger_ms":100000}"#,
        )
        .unwrap();
        assert_eq!(r.policy, RecoveryPolicy::MicrorebootClosure);
    }
}
