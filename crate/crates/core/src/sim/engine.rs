use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::queue::EventQueue;
use super::retry::{invoke, HopOutcome, RetryLaterSignal};
use super::runtime::{ComponentRuntime, Status};
use super::{RecoveryAction, RecoveryKind, RedeployOrder, SimConfig, Stabilization};
use crate::error::{Error, Result};
use crate::faults::{ClearedBy, FaultSpec};
use crate::model::{AppModel, ModelIndex, ServiceTime, SessionStatePolicy};
use crate::trace::{Outcome, RequestRecord};
use crate::workload::{step_client, ClientAction, ClientState, SessionCounter, WorkloadModel};

#[derive(Debug)]
enum Event {
    ClientWake { client: u32 },
    HopDone { client: u32, token: u32 },
    RetryWake { client: u32, token: u32 },
    Abandon { client: u32, request: u64 },
    Recovery { action: usize },
    ComponentOnline { component: usize, epoch: u64 },
    ServerUp { epoch: u64 },
    FaultOnset { fault: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Queued,
    Executing,
    Paused,
}

#[derive(Debug)]
struct ActiveRequest {
    id: u64,
    op: usize,
    start: u64,
    /// Index into the path of the call being made or executed.
    hop: usize,
    /// Components on the call stack, outermost first.
    entered: Vec<usize>,
    retries: u32,
    phase: Phase,
    txn_open: bool,
    holds_worker: bool,
}

struct Client {
    /// `None` for probe clients driven through [`Simulation::begin_request`].
    driver: Option<ClientState>,
    session_id: u64,
    first: bool,
    active: Option<ActiveRequest>,
    token: u32,
}

struct FaultState {
    spec: FaultSpec,
    active: bool,
    /// A covering reboot is in progress; the fault clears when the target
    /// comes back.
    clearing: bool,
    cleared: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RetryEvent {
    pub request_id: u64,
    pub client_id: u32,
    pub component: String,
    pub at: u64,
    /// Remaining recovery time reported by the callee.
    pub residual_ms: u64,
    pub pause_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DbEventKind {
    Committed,
    /// Rolled back; nothing persisted.
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DbEvent {
    pub request_id: u64,
    pub at: u64,
    pub kind: DbEventKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionLoss {
    pub session_id: u64,
    pub client_id: u32,
    pub at: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecoveryWindow {
    pub label: String,
    pub components: BTreeSet<String>,
    pub start: u64,
    pub end: u64,
}

/// Everything a run produced.
#[derive(Clone, Debug, Default)]
pub struct SimOutput {
    /// One record per issued request, ordered by request id.
    pub records: Vec<RequestRecord>,
    pub retry_log: Vec<RetryEvent>,
    pub db_events: Vec<DbEvent>,
    pub session_losses: Vec<SessionLoss>,
    pub recovery_windows: Vec<RecoveryWindow>,
    pub abandoned: u64,
    pub duration_ms: u64,
    pub homepage: String,
}

pub struct Simulation<'a> {
    index: ModelIndex,
    workload: &'a WorkloadModel,
    config: SimConfig,
    error_latency: u64,
    app_restart: u64,
    server_restart: u64,
    service: Vec<ServiceTime>,
    queue: EventQueue<Event>,
    components: Vec<ComponentRuntime>,
    clients: Vec<Client>,
    sessions: SessionCounter,
    lost: BTreeSet<u64>,
    /// session -> (client, components holding its state)
    session_bound: BTreeMap<u64, (u32, Vec<usize>)>,
    faults: Vec<FaultState>,
    faults_by_component: Vec<Vec<usize>>,
    actions: Vec<RecoveryAction>,
    server_down_until: Option<u64>,
    server_epoch: u64,
    active_workers: usize,
    accept_queue: VecDeque<u32>,
    draining: bool,
    service_rng: ChaCha8Rng,
    fault_rng: ChaCha8Rng,
    next_request: u64,
    out: SimOutput,
}

impl<'a> Simulation<'a> {
    /// Builds an engine with `config.clients` workload-driven clients, all
    /// starting at the homepage at time 0. `workload` must have been built
    /// against the same model.
    pub fn new(model: &AppModel, workload: &'a WorkloadModel, config: SimConfig) -> Result<Self> {
        let index = model.index()?;
        config.retry.check()?;
        if config.abandonment_ms == Some(0) {
            return Err(Error::Scenario(
                "abandonment threshold must be positive".into(),
            ));
        }
        let components = model
            .components
            .iter()
            .map(|c| ComponentRuntime::new(c.microreboot_duration, c.session_state_policy))
            .collect();

        let mut service_rng = ChaCha8Rng::seed_from_u64(config.seed);
        service_rng.set_stream(0);
        let mut fault_rng = ChaCha8Rng::seed_from_u64(config.seed);
        fault_rng.set_stream(u64::MAX);

        let mut sim = Simulation {
            faults_by_component: vec![Vec::new(); index.component_count()],
            index,
            workload,
            error_latency: model.error_latency_ms,
            app_restart: model.app_restart_duration,
            server_restart: model.server_restart_duration,
            service: model
                .components
                .iter()
                .map(|c| c.service_time.clone())
                .collect(),
            queue: EventQueue::new(),
            components,
            clients: Vec::new(),
            sessions: SessionCounter::default(),
            lost: BTreeSet::new(),
            session_bound: BTreeMap::new(),
            faults: Vec::new(),
            actions: Vec::new(),
            server_down_until: None,
            server_epoch: 0,
            active_workers: 0,
            accept_queue: VecDeque::new(),
            draining: false,
            service_rng,
            fault_rng,
            next_request: 0,
            out: SimOutput {
                duration_ms: config.duration_ms,
                homepage: model.homepage().map(|h| h.id.clone()).unwrap_or_default(),
                ..Default::default()
            },
            config,
        };
        for c in 0..sim.config.clients {
            let driver = ClientState::new(c, sim.config.seed, workload, &mut sim.sessions);
            sim.clients.push(Client {
                session_id: driver.session_id,
                driver: Some(driver),
                first: true,
                active: None,
                token: 0,
            });
            sim.queue.push(0, Event::ClientWake { client: c });
        }
        Ok(sim)
    }

    pub fn now(&self) -> u64 {
        self.queue.now()
    }

    pub fn index(&self) -> &ModelIndex {
        &self.index
    }

    /// Registers a fault; it activates at its onset time.
    pub fn inject(&mut self, spec: FaultSpec) -> Result<()> {
        let target = self.index.component_index(&spec.target)?;
        if spec.kind == crate::faults::FaultKind::Degrade
            && !spec.p.is_some_and(|p| (0.0..=1.0).contains(&p))
        {
            return Err(Error::Scenario(format!(
                "degrade fault on {} needs 0 <= p <= 1",
                spec.target
            )));
        }
        let id = self.faults.len();
        self.queue
            .push(spec.onset_ms, Event::FaultOnset { fault: id });
        self.faults_by_component[target].push(id);
        self.faults.push(FaultState {
            spec,
            active: false,
            clearing: false,
            cleared: false,
        });
        Ok(())
    }

    /// Queues a recovery action for its trigger time.
    pub fn schedule(&mut self, action: RecoveryAction) -> Result<()> {
        if let RecoveryKind::Microreboot(ids) = &action.kind {
            if ids.is_empty() {
                return Err(Error::Scenario("microreboot of an empty set".into()));
            }
            for id in ids {
                self.index.component_index(id)?;
            }
        }
        let id = self.actions.len();
        self.queue
            .push(action.trigger_ms, Event::Recovery { action: id });
        self.actions.push(action);
        Ok(())
    }

    /// Processes every event up to and including time `t`, then moves the
    /// clock to `t`.
    pub fn run_until(&mut self, t: u64) {
        while self.queue.peek_time().is_some_and(|pt| pt <= t) {
            let (now, event) = self.queue.pop().expect("peeked");
            self.handle(now, event);
        }
        self.queue.advance_to(t);
    }

    /// Runs to completion and returns the trace.
    pub fn run(mut self) -> SimOutput {
        while let Some((now, event)) = self.queue.pop() {
            self.handle(now, event);
        }
        self.out.records.sort_by_key(|r| r.request_id);
        self.out
    }

    pub fn status(&self, component: &str) -> Result<Status> {
        Ok(self.components[self.index.component_index(component)?].status)
    }

    pub fn runtime(&self, component: &str) -> Result<&ComponentRuntime> {
        Ok(&self.components[self.index.component_index(component)?])
    }

    /// How much longer `component` needs to recover, floored at zero.
    pub fn estimate_remaining_recovery(&self, component: &str) -> Result<u64> {
        self.runtime(component)?
            .remaining_recovery(self.now())
            .ok_or_else(|| Error::NotRecovering(component.to_string()))
    }

    /// Issues one request for `operation` from a fresh probe client at the
    /// current time. Probe clients issue nothing further. Returns the
    /// request id.
    pub fn begin_request(&mut self, operation: &str) -> Result<u64> {
        let op = self.index.operation_index(operation)?;
        let client = self.clients.len() as u32;
        let session_id = self.sessions.next_id();
        self.clients.push(Client {
            driver: None,
            session_id,
            first: false,
            active: None,
            token: 0,
        });
        let id = self.next_request;
        self.begin(client, op, self.now());
        Ok(id)
    }

    /// Microreboots `ids` now.
    pub fn apply_microreboot(&mut self, ids: &BTreeSet<String>) -> Result<()> {
        let set = ids
            .iter()
            .map(|id| self.index.component_index(id))
            .collect::<Result<Vec<_>>>()?;
        self.microreboot(set, None, self.now());
        Ok(())
    }

    pub fn apply_app_restart(&mut self) {
        self.restart(false, None, self.now());
    }

    pub fn apply_server_restart(&mut self) {
        self.restart(true, None, self.now());
    }

    /// Takes a component away with no redeploy. Calls to it fail hard.
    pub fn undeploy(&mut self, component: &str) -> Result<()> {
        let comp = self.index.component_index(component)?;
        let now = self.now();
        let rt = &mut self.components[comp];
        rt.status = Status::Undeployed;
        rt.epoch += 1;
        let mut member = vec![false; self.components.len()];
        member[comp] = true;
        self.discard_session_state(comp, now);
        let victims: Vec<u32> = self.components[comp].inflight.iter().copied().collect();
        for c in victims {
            self.kill(c, &member, now);
        }
        Ok(())
    }

    fn handle(&mut self, now: u64, event: Event) {
        match event {
            Event::ClientWake { client } => self.client_wake(client, now),
            Event::HopDone { client, token } => {
                if self.clients[client as usize].token == token {
                    self.hop_done(client, now);
                }
            }
            Event::RetryWake { client, token } => {
                let cl = &mut self.clients[client as usize];
                if cl.token == token {
                    if let Some(req) = cl.active.as_mut() {
                        req.phase = Phase::Executing;
                    }
                    self.attempt(client, now);
                }
            }
            Event::Abandon { client, request } => {
                let still_running = self.clients[client as usize]
                    .active
                    .as_ref()
                    .is_some_and(|r| r.id == request);
                if still_running {
                    self.out.abandoned += 1;
                    self.finish(client, Outcome::Failed, now);
                }
            }
            Event::Recovery { action } => {
                let action = self.actions[action].clone();
                match &action.kind {
                    RecoveryKind::Microreboot(ids) => {
                        let set = ids
                            .iter()
                            .map(|id| self.index.component_index(id).expect("checked on schedule"))
                            .collect();
                        self.microreboot(set, action.stabilization, now);
                    }
                    RecoveryKind::AppRestart => self.restart(false, action.stabilization, now),
                    RecoveryKind::ServerRestart => self.restart(true, action.stabilization, now),
                }
            }
            Event::ComponentOnline { component, epoch } => {
                self.component_online(component, epoch, now)
            }
            Event::ServerUp { epoch } => {
                if self.server_epoch == epoch {
                    self.server_down_until = None;
                }
            }
            Event::FaultOnset { fault } => {
                let f = &mut self.faults[fault];
                if !f.cleared {
                    f.active = true;
                }
            }
        }
    }

    fn client_wake(&mut self, client: u32, now: u64) {
        if now >= self.config.duration_ms {
            return;
        }
        let cl = &mut self.clients[client as usize];
        let Some(driver) = cl.driver.as_mut() else {
            return;
        };
        let op = if cl.first {
            cl.first = false;
            driver.current
        } else {
            loop {
                match step_client(driver, self.workload, &mut self.sessions) {
                    Ok(ClientAction::Issue { operation, .. })
                    | Ok(ClientAction::EndSession { operation }) => break operation,
                    Ok(ClientAction::Back { to, replay: true }) => break to,
                    Ok(ClientAction::Back { replay: false, .. }) => continue,
                    // Rows are validated on construction.
                    Err(_) => return,
                }
            }
        };
        let session = driver.session_id;
        if session != cl.session_id {
            let old = std::mem::replace(&mut cl.session_id, session);
            self.close_session(old);
        }
        self.begin(client, op, now);
    }

    fn begin(&mut self, client: u32, op: usize, now: u64) {
        let id = self.next_request;
        self.next_request += 1;
        let cl = &mut self.clients[client as usize];
        cl.active = Some(ActiveRequest {
            id,
            op,
            start: now,
            hop: 0,
            entered: Vec::new(),
            retries: 0,
            phase: Phase::Queued,
            txn_open: false,
            holds_worker: false,
        });
        let session = cl.session_id;
        if let Some(limit) = self.config.abandonment_ms {
            self.queue.push(
                now + limit + 1,
                Event::Abandon {
                    client,
                    request: id,
                },
            );
        }

        if self.server_down_until.is_some() {
            self.finish(client, Outcome::ConnectionRefused, now + self.error_latency);
            return;
        }
        if self.lost.contains(&session) {
            self.finish(client, Outcome::Failed, now + self.error_latency);
            return;
        }
        let limits = self.config.server;
        if limits
            .worker_threads
            .is_none_or(|w| self.active_workers < w)
        {
            self.dispatch(client, now);
        } else if limits
            .accept_queue
            .is_none_or(|q| self.accept_queue.len() < q)
        {
            self.accept_queue.push_back(client);
        } else {
            self.finish(client, Outcome::ConnectionRefused, now + self.error_latency);
        }
    }

    fn dispatch(&mut self, client: u32, now: u64) {
        if let Some(req) = self.clients[client as usize].active.as_mut() {
            req.holds_worker = true;
            req.phase = Phase::Executing;
            self.active_workers += 1;
            self.attempt(client, now);
        }
    }

    fn fault_fires(&mut self, comp: usize) -> bool {
        let mut fires = false;
        for &f in &self.faults_by_component[comp] {
            let fault = &self.faults[f];
            if !fault.active {
                continue;
            }
            let p = fault.spec.failure_probability();
            // Only fractional probabilities draw from the fault stream.
            let hit = p >= 1.0 || (p > 0.0 && self.fault_rng.random::<f64>() < p);
            fires |= hit;
        }
        fires
    }

    /// Makes the call for the request's current hop.
    fn attempt(&mut self, client: u32, now: u64) {
        let (op, hop) = match &self.clients[client as usize].active {
            Some(req) => (req.op, req.hop),
            None => return,
        };
        let comp = self.index.path(op)[hop];
        let faulted = self.components[comp].is_online() && self.fault_fires(comp);
        match invoke(&self.components[comp], faulted, now) {
            HopOutcome::Ok => {
                let cl = &mut self.clients[client as usize];
                let req = cl.active.as_mut().expect("active");
                req.entered.push(comp);
                req.txn_open = true;
                let session = cl.session_id;
                let token = cl.token;
                let rt = &mut self.components[comp];
                rt.inflight.insert(client);
                if rt.policy == SessionStatePolicy::InMemoryVolatile {
                    self.bind(session, client, comp);
                }
                let rt = &self.components[comp];
                let mut service = self.service[comp].sample(&mut self.service_rng);
                if rt.slow_until > now {
                    service = ((service as f64 * rt.slow_factor).round() as u64).max(1);
                }
                self.queue
                    .push(now + service, Event::HopDone { client, token });
            }
            HopOutcome::HardFail => self.finish(client, Outcome::Failed, now + self.error_latency),
            HopOutcome::RetryLater(signal) => self.retry_or_fail(client, comp, signal, now),
        }
    }

    fn retry_or_fail(&mut self, client: u32, comp: usize, signal: RetryLaterSignal, now: u64) {
        let cl = &mut self.clients[client as usize];
        let Some(req) = cl.active.as_mut() else {
            return;
        };
        // The front end dispatching to the servlet does not retry; only
        // container-mediated calls between components do.
        let pause = if req.hop == 0 {
            None
        } else {
            self.config.retry.next_pause(req.retries, signal)
        };
        match pause {
            Some(pause) => {
                req.retries += 1;
                req.phase = Phase::Paused;
                self.out.retry_log.push(RetryEvent {
                    request_id: req.id,
                    client_id: client,
                    component: self.index.component_id(comp).to_string(),
                    at: now,
                    residual_ms: signal.t,
                    pause_ms: pause,
                });
                let token = cl.token;
                self.queue
                    .push(now + pause, Event::RetryWake { client, token });
            }
            None => self.finish(client, Outcome::Failed, now + self.error_latency),
        }
    }

    fn hop_done(&mut self, client: u32, now: u64) {
        let Some(req) = self.clients[client as usize].active.as_mut() else {
            return;
        };
        req.hop += 1;
        if req.hop == self.index.path(req.op).len() {
            let outcome = if req.retries > 0 {
                Outcome::OkAfterRetry
            } else {
                Outcome::Ok
            };
            self.finish(client, outcome, now);
        } else {
            self.attempt(client, now);
        }
    }

    /// Terminates the client's active request with `outcome`, visible to the
    /// client at `end`.
    fn finish(&mut self, client: u32, outcome: Outcome, end: u64) {
        let now = self.now();
        let cl = &mut self.clients[client as usize];
        let Some(req) = cl.active.take() else {
            return;
        };
        cl.token = cl.token.wrapping_add(1);
        let session_id = cl.session_id;
        let driven = cl.driver.is_some();

        for &comp in &req.entered {
            self.components[comp].inflight.remove(&client);
        }
        if req.phase == Phase::Queued {
            self.accept_queue.retain(|&c| c != client);
        }

        let mut end = end;
        if !outcome.is_success() {
            if let Some(limit) = self.config.abandonment_ms {
                end = end.min(req.start + limit + 1);
            }
        }
        if self.index.is_db_write(req.op) {
            if outcome.is_success() {
                self.out.db_events.push(DbEvent {
                    request_id: req.id,
                    at: end,
                    kind: DbEventKind::Committed,
                });
            } else if req.txn_open {
                self.out.db_events.push(DbEvent {
                    request_id: req.id,
                    at: now,
                    kind: DbEventKind::Aborted,
                });
            }
        }
        self.out.records.push(RequestRecord {
            request_id: req.id,
            client_id: client,
            session_id,
            operation: self.index.operation_id(req.op).to_string(),
            start: req.start,
            end,
            outcome,
            retries: req.retries,
            is_db_write: self.index.is_db_write(req.op),
        });
        if driven {
            let think = self.workload.think_time(req.op);
            self.queue.push(end + think, Event::ClientWake { client });
        }

        if req.holds_worker {
            self.active_workers -= 1;
            if !self.draining {
                if let Some(next) = self.accept_queue.pop_front() {
                    self.dispatch(next, now);
                }
            }
        }
    }

    /// A component on the request's call stack was rebooted under it.
    fn kill(&mut self, client: u32, member: &[bool], now: u64) {
        let retry = self.config.retry.enabled;
        let cl = &mut self.clients[client as usize];
        let Some(req) = cl.active.as_mut() else {
            return;
        };
        let Some(j) = req.entered.iter().position(|&c| member[c]) else {
            return;
        };
        let target = req.entered[j];
        let recovering = self.components[target].remaining_recovery(now);
        match (retry && j >= 1, recovering) {
            (true, Some(t)) => {
                // The killed call never took effect; its caller's container
                // sees the callee recovering and retries it.
                let dropped: Vec<usize> = req.entered.drain(j..).collect();
                for comp in dropped {
                    if !req.entered.contains(&comp) {
                        self.components[comp].inflight.remove(&client);
                    }
                }
                req.hop = j;
                let aborted = req.txn_open;
                req.txn_open = false;
                let id = req.id;
                let op = req.op;
                cl.token = cl.token.wrapping_add(1);
                if aborted && self.index.is_db_write(op) {
                    self.out.db_events.push(DbEvent {
                        request_id: id,
                        at: now,
                        kind: DbEventKind::Aborted,
                    });
                }
                self.retry_or_fail(client, target, RetryLaterSignal { t }, now);
            }
            _ => self.finish(client, Outcome::Failed, now + self.error_latency),
        }
    }

    fn microreboot(&mut self, mut set: Vec<usize>, stabilization: Option<Stabilization>, now: u64) {
        set.sort_unstable();
        set.dedup();
        let mut member = vec![false; self.components.len()];
        let mut offset = 0;
        let mut window_end = now;
        for &comp in &set {
            member[comp] = true;
            let duration = self.components[comp].microreboot_duration;
            let until = match self.config.redeploy {
                RedeployOrder::Sequential => {
                    offset += duration;
                    now + offset
                }
                RedeployOrder::Parallel => now + duration,
            };
            let until = self.take_down(comp, until, stabilization, now);
            window_end = window_end.max(until);
        }
        self.out.recovery_windows.push(RecoveryWindow {
            label: "microreboot".into(),
            components: set
                .iter()
                .map(|&c| self.index.component_id(c).to_string())
                .collect(),
            start: now,
            end: window_end,
        });

        let victims: BTreeSet<u32> = set
            .iter()
            .flat_map(|&c| self.components[c].inflight.iter().copied())
            .collect();
        for client in victims {
            self.kill(client, &member, now);
        }
    }

    /// Marks `comp` recovering until at least `until`; returns the effective
    /// end of its recovery.
    fn take_down(
        &mut self,
        comp: usize,
        until: u64,
        stabilization: Option<Stabilization>,
        now: u64,
    ) -> u64 {
        let rt = &mut self.components[comp];
        let until = match rt.status {
            Status::Recovering { until: prev } => prev.max(until),
            _ => until,
        };
        rt.status = Status::Recovering { until };
        rt.epoch += 1;
        rt.pending_slowdown = stabilization;
        let epoch = rt.epoch;
        self.queue.push(
            until,
            Event::ComponentOnline {
                component: comp,
                epoch,
            },
        );
        for &f in &self.faults_by_component[comp] {
            let fault = &mut self.faults[f];
            if fault.active && fault.spec.cleared_by == ClearedBy::AnyRebootCoveringTarget {
                fault.clearing = true;
            }
        }
        self.discard_session_state(comp, now);
        until
    }

    fn restart(&mut self, server: bool, stabilization: Option<Stabilization>, now: u64) {
        let duration = if server {
            self.server_restart
        } else {
            self.app_restart
        };

        // Every open connection is lost, including queued ones.
        self.draining = true;
        let victims: Vec<u32> = (0..self.clients.len() as u32)
            .filter(|&c| self.clients[c as usize].active.is_some())
            .collect();
        for client in victims {
            self.finish(client, Outcome::ConnectionDropped, now);
        }
        self.accept_queue.clear();
        self.draining = false;

        let label = if server {
            RecoveryKind::ServerRestart.label()
        } else {
            RecoveryKind::AppRestart.label()
        };
        let mut window = RecoveryWindow {
            label,
            components: (0..self.components.len())
                .map(|c| self.index.component_id(c).to_string())
                .collect(),
            start: now,
            end: now,
        };
        if duration > 0 {
            for comp in 0..self.components.len() {
                let until = self.take_down(comp, now + duration, stabilization, now);
                window.end = window.end.max(until);
            }
            if server {
                self.server_epoch += 1;
                self.server_down_until = Some(now + duration);
                self.queue.push(
                    now + duration,
                    Event::ServerUp {
                        epoch: self.server_epoch,
                    },
                );
            }
        }
        self.out.recovery_windows.push(window);
    }

    fn component_online(&mut self, comp: usize, epoch: u64, now: u64) {
        let rt = &mut self.components[comp];
        if rt.epoch != epoch || !matches!(rt.status, Status::Recovering { .. }) {
            return;
        }
        rt.status = Status::Online;
        if let Some(st) = rt.pending_slowdown.take() {
            rt.slow_until = now + st.window_ms;
            rt.slow_factor = st.factor;
        }
        for &f in &self.faults_by_component[comp] {
            let fault = &mut self.faults[f];
            if fault.clearing {
                fault.clearing = false;
                fault.active = false;
                fault.cleared = true;
            }
        }
    }

    fn bind(&mut self, session: u64, client: u32, comp: usize) {
        if self.components[comp].session_bindings.insert(session) {
            self.session_bound
                .entry(session)
                .or_insert_with(|| (client, Vec::new()))
                .1
                .push(comp);
        }
    }

    /// In-memory session state held by `comp` is gone.
    fn discard_session_state(&mut self, comp: usize, now: u64) {
        let bound = std::mem::take(&mut self.components[comp].session_bindings);
        for session in bound {
            if self.lost.insert(session) {
                let client = self.session_bound.get(&session).map_or(0, |b| b.0);
                self.out.session_losses.push(SessionLoss {
                    session_id: session,
                    client_id: client,
                    at: now,
                });
            }
        }
    }

    fn close_session(&mut self, session: u64) {
        if let Some((_, comps)) = self.session_bound.remove(&session) {
            for comp in comps {
                self.components[comp].session_bindings.remove(&session);
            }
        }
        self.lost.remove(&session);
    }

    #[cfg(test)]
    pub(crate) fn faults_active(&self, component: &str) -> bool {
        let comp = self.index.component_index(component).unwrap();
        self.faults_by_component[comp]
            .iter()
            .any(|&f| self.faults[f].active)
    }
}
