//! Markov-chain client emulator.
//!
//! Each logical client walks a transition table over the application's
//! operations plus two pseudo-states: `Back` (browser back button) and `End`
//! (the user leaves; a new session starts at the homepage). Think time
//! defaults to zero, so a client clicks again as soon as its previous
//! request completes, successfully or not.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelIndex;

pub const BACK: &str = "Back";
pub const END: &str = "End";

const ROW_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThinkTime {
    Uniform(u64),
    PerState(BTreeMap<String, u64>),
}

impl Default for ThinkTime {
    fn default() -> Self {
        ThinkTime::Uniform(0)
    }
}

/// On-disk form of a workload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadDocument {
    #[serde(default)]
    pub name: String,
    pub states: Vec<String>,
    /// Sparse transition table as `[from, to, probability]` triples.
    pub transitions: Vec<(String, String, f64)>,
    #[serde(default)]
    pub think_time_ms: ThinkTime,
    /// When set, `Back` re-requests the previous page instead of serving it
    /// from the browser cache.
    #[serde(default)]
    pub back_issues_request: bool,
}

impl WorkloadDocument {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum State {
    Op(usize),
    Back,
    End,
}

/// A validated transition table bound to a model's operations.
#[derive(Clone, Debug)]
pub struct WorkloadModel {
    name: String,
    states: Vec<State>,
    names: Vec<String>,
    /// Dense probability rows, indexed by state slot. `None` for states the
    /// document gives no outgoing transitions (only allowed for `Back`).
    rows: Vec<Option<Vec<f64>>>,
    think: Vec<u64>,
    slot_of_op: HashMap<usize, usize>,
    homepage: usize,
    back_issues_request: bool,
}

impl WorkloadModel {
    pub fn from_document(doc: &WorkloadDocument, index: &ModelIndex) -> Result<Self> {
        let mut states = Vec::with_capacity(doc.states.len());
        let mut slot: HashMap<&str, usize> = HashMap::new();
        let mut slot_of_op = HashMap::new();
        for name in &doc.states {
            let state = match name.as_str() {
                BACK => State::Back,
                END => State::End,
                op => State::Op(index.operation_index(op).map_err(|_| {
                    Error::Workload(format!("state `{op}` is not an operation of the model"))
                })?),
            };
            if slot.insert(name.as_str(), states.len()).is_some() {
                return Err(Error::Workload(format!("state `{name}` listed twice")));
            }
            if let State::Op(op) = state {
                slot_of_op.insert(op, states.len());
            }
            states.push(state);
        }
        let homepage = index.homepage();
        if !slot_of_op.contains_key(&homepage) {
            return Err(Error::Workload(format!(
                "homepage `{}` is not a workload state",
                index.operation_id(homepage)
            )));
        }

        let n = states.len();
        let mut rows: Vec<Option<Vec<f64>>> = vec![None; n];
        for (from, to, p) in &doc.transitions {
            let lookup = |s: &str| {
                slot.get(s).copied().ok_or_else(|| {
                    Error::Workload(format!("transition mentions unknown state `{s}`"))
                })
            };
            let (a, b) = (lookup(from)?, lookup(to)?);
            if !(0.0..=1.0).contains(p) || !p.is_finite() {
                return Err(Error::InvalidRow {
                    state: from.clone(),
                    reason: format!("probability {p} to `{to}` outside [0, 1]"),
                });
            }
            let row = rows[a].get_or_insert_with(|| vec![0.0; n]);
            if row[b] != 0.0 {
                return Err(Error::InvalidRow {
                    state: from.clone(),
                    reason: format!("duplicate transition to `{to}`"),
                });
            }
            row[b] = *p;
        }

        let home_slot = slot_of_op[&homepage];
        for (i, state) in states.iter().enumerate() {
            let name = &doc.states[i];
            match (state, &rows[i]) {
                (State::Op(_), None) => {
                    return Err(Error::InvalidRow {
                        state: name.clone(),
                        reason: "no outgoing transitions".into(),
                    })
                }
                (State::End, None) => {
                    let mut row = vec![0.0; n];
                    row[home_slot] = 1.0;
                    rows[i] = Some(row);
                }
                (State::End, Some(row))
                    if row
                        .iter()
                        .enumerate()
                        .any(|(j, p)| j != home_slot && *p > 0.0) =>
                {
                    return Err(Error::InvalidRow {
                        state: name.clone(),
                        reason: "End may only lead to the homepage".into(),
                    });
                }
                _ => {}
            }
            if let Some(row) = &rows[i] {
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_TOLERANCE {
                    return Err(Error::InvalidRow {
                        state: name.clone(),
                        reason: format!("probabilities sum to {sum}"),
                    });
                }
            }
        }

        let think = match &doc.think_time_ms {
            ThinkTime::Uniform(ms) => vec![*ms; n],
            ThinkTime::PerState(map) => {
                let mut think = vec![0; n];
                for (name, ms) in map {
                    let s = slot.get(name.as_str()).ok_or_else(|| {
                        Error::Workload(format!("think time given for unknown state `{name}`"))
                    })?;
                    think[*s] = *ms;
                }
                think
            }
        };

        Ok(WorkloadModel {
            name: doc.name.clone(),
            states,
            names: doc.states.clone(),
            rows,
            think,
            slot_of_op,
            homepage,
            back_issues_request: doc.back_issues_request,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn homepage(&self) -> usize {
        self.homepage
    }

    pub fn back_issues_request(&self) -> bool {
        self.back_issues_request
    }

    /// Think time after completing `op`, before the next click.
    pub fn think_time(&self, op: usize) -> u64 {
        self.slot_of_op.get(&op).map_or(0, |&s| self.think[s])
    }

    /// Operations that appear as states.
    pub fn operations(&self) -> impl Iterator<Item = usize> + '_ {
        self.states.iter().filter_map(|s| match s {
            State::Op(op) => Some(*op),
            _ => None,
        })
    }

    /// Probability of moving from operation `from` to state `to`.
    pub fn probability(&self, from: usize, to: State) -> f64 {
        let (Some(&a), Some(b)) = (self.slot_of_op.get(&from), self.slot(to)) else {
            return 0.0;
        };
        self.rows[a].as_ref().map_or(0.0, |row| row[b])
    }

    fn slot(&self, state: State) -> Option<usize> {
        match state {
            State::Op(op) => self.slot_of_op.get(&op).copied(),
            other => self.states.iter().position(|s| *s == other),
        }
    }
}

/// Hands out globally unique session ids in issue order.
#[derive(Clone, Debug, Default)]
pub struct SessionCounter(u64);

impl SessionCounter {
    pub fn next_id(&mut self) -> u64 {
        let id = self.0;
        self.0 += 1;
        id
    }
}

#[derive(Clone, Debug)]
pub struct ClientState {
    pub client_id: u32,
    /// Operation the client is currently looking at.
    pub current: usize,
    /// Previously visited operations, for `Back`.
    pub stack: Vec<usize>,
    pub session_id: u64,
    rng: ChaCha8Rng,
}

impl ClientState {
    /// A client positioned at the homepage in a fresh session. Every client
    /// gets its own random stream derived from `(seed, client_id)`.
    pub fn new(
        client_id: u32,
        seed: u64,
        model: &WorkloadModel,
        sessions: &mut SessionCounter,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(client_id) + 1);
        ClientState {
            client_id,
            current: model.homepage,
            stack: Vec::new(),
            session_id: sessions.next_id(),
            rng,
        }
    }
}

/// Samples the next state from the row of the client's current operation.
pub fn next_state(client: &mut ClientState, model: &WorkloadModel) -> Result<State> {
    let slot = model
        .slot_of_op
        .get(&client.current)
        .copied()
        .ok_or_else(|| Error::InvalidRow {
            state: format!("operation #{}", client.current),
            reason: "not a workload state".into(),
        })?;
    let row = model.rows[slot].as_ref().ok_or_else(|| Error::InvalidRow {
        state: model.names[slot].clone(),
        reason: "no outgoing transitions".into(),
    })?;
    let u: f64 = client.rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (j, p) in row.iter().enumerate() {
        if *p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(j);
        if u < acc {
            return Ok(model.states[j]);
        }
    }
    // Rounding can leave u just above the accumulated mass.
    last.map(|j| model.states[j])
        .ok_or_else(|| Error::InvalidRow {
            state: model.names[slot].clone(),
            reason: "row has no positive probability".into(),
        })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClientAction {
    /// Request `operation`. `new_session` is set when the request is a
    /// homepage access, which always opens a new session.
    Issue { operation: usize, new_session: bool },
    /// Went back to `to`. `replay` tells whether the page is re-requested.
    Back { to: usize, replay: bool },
    /// Closed the session; the client now requests the homepage in a new
    /// session.
    EndSession { operation: usize },
}

/// Advances a client by one transition.
pub fn step_client(
    client: &mut ClientState,
    model: &WorkloadModel,
    sessions: &mut SessionCounter,
) -> Result<ClientAction> {
    let next = next_state(client, model)?;
    let action = match next {
        State::Op(op) if op == model.homepage => {
            open_session(client, model, sessions);
            ClientAction::Issue {
                operation: op,
                new_session: true,
            }
        }
        State::Op(op) => {
            client.stack.push(client.current);
            client.current = op;
            ClientAction::Issue {
                operation: op,
                new_session: false,
            }
        }
        State::Back => match client.stack.pop() {
            Some(prev) => {
                client.current = prev;
                ClientAction::Back {
                    to: prev,
                    replay: model.back_issues_request,
                }
            }
            None => {
                open_session(client, model, sessions);
                ClientAction::EndSession {
                    operation: model.homepage,
                }
            }
        },
        State::End => {
            open_session(client, model, sessions);
            ClientAction::EndSession {
                operation: model.homepage,
            }
        }
    };
    Ok(action)
}

fn open_session(client: &mut ClientState, model: &WorkloadModel, sessions: &mut SessionCounter) {
    client.stack.clear();
    client.current = model.homepage;
    client.session_id = sessions.next_id();
}

/// What came back for one request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Response {
    NetworkError,
    HttpCode(u16),
    /// A 2xx page with its body.
    Html(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Correct,
    Incorrect,
}

/// Response classifier: network errors, 4xx/5xx codes and pages containing
/// an error keyword are incorrect.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classifier {
    pub keywords: Vec<String>,
}

impl Default for Classifier {
    fn default() -> Self {
        Classifier {
            keywords: vec!["error".into(), "failed".into(), "exception".into()],
        }
    }
}

impl Classifier {
    pub fn classify(&self, response: &Response) -> Verdict {
        match response {
            Response::NetworkError => Verdict::Incorrect,
            Response::HttpCode(code) if (400..=599).contains(code) => Verdict::Incorrect,
            Response::HttpCode(_) => Verdict::Correct,
            Response::Html(body) => {
                let body = body.to_lowercase();
                if self
                    .keywords
                    .iter()
                    .any(|k| !k.is_empty() && body.contains(&k.to_lowercase()))
                {
                    Verdict::Incorrect
                } else {
                    Verdict::Correct
                }
            }
        }
    }

    /// Classifies an HTTP status together with an optional body.
    pub fn classify_http(&self, code: u16, body: Option<&str>) -> Verdict {
        if self.classify(&Response::HttpCode(code)) == Verdict::Incorrect {
            return Verdict::Incorrect;
        }
        match body {
            Some(b) => self.classify(&Response::Html(b.to_string())),
            None => Verdict::Correct,
        }
    }
}

pub fn classify_response(response: &Response) -> Verdict {
    Classifier::default().classify(response)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{AppModel, ComponentKind, ComponentSpec, OperationSpec, ServiceTime};

    fn chain_model(ops: &[&str]) -> ModelIndex {
        let components = ops
            .iter()
            .map(|id| ComponentSpec {
                id: id.to_string(),
                kind: ComponentKind::Servlet,
                service_time: ServiceTime::Constant { ms: 1.0 },
                microreboot_duration: 10,
                session_state_policy: Default::default(),
            })
            .collect();
        let operations = ops
            .iter()
            .enumerate()
            .map(|(i, id)| OperationSpec {
                id: id.to_string(),
                path: vec![id.to_string()],
                is_db_write: false,
                is_homepage: i == 0,
            })
            .collect();
        AppModel {
            name: String::new(),
            components,
            operations,
            fault_map: Default::default(),
            app_restart_duration: 10,
            server_restart_duration: 10,
            error_latency_ms: 1,
        }
        .index()
        .unwrap()
    }

    fn doc(states: &[&str], transitions: &[(&str, &str, f64)]) -> WorkloadDocument {
        WorkloadDocument {
            name: String::new(),
            states: states.iter().map(|s| s.to_string()).collect(),
            transitions: transitions
                .iter()
                .map(|(a, b, p)| (a.to_string(), b.to_string(), *p))
                .collect(),
            think_time_ms: ThinkTime::default(),
            back_issues_request: false,
        }
    }

    #[test]
    fn degenerate_row_always_picks_its_target() {
        let index = chain_model(&["Home", "ViewItem", "BuyNow"]);
        let wl = WorkloadModel::from_document(
            &doc(
                &["Home", "ViewItem", "BuyNow"],
                &[
                    ("Home", "ViewItem", 1.0),
                    ("ViewItem", "BuyNow", 1.0),
                    ("BuyNow", "Home", 1.0),
                ],
            ),
            &index,
        )
        .unwrap();
        let mut sessions = SessionCounter::default();
        let mut c = ClientState::new(0, 7, &wl, &mut sessions);
        c.current = index.operation_index("ViewItem").unwrap();
        let buy = index.operation_index("BuyNow").unwrap();
        for _ in 0..1000 {
            assert_eq!(next_state(&mut c, &wl).unwrap(), State::Op(buy));
        }
        assert_eq!(wl.probability(c.current, State::Op(buy)), 1.0);
    }

    #[test]
    fn uniform_row_frequencies_within_three_sigma() {
        let index = chain_model(&["Home", "A", "B", "C"]);
        let wl = WorkloadModel::from_document(
            &doc(
                &["Home", "A", "B", "C"],
                &[
                    ("Home", "Home", 0.25),
                    ("Home", "A", 0.25),
                    ("Home", "B", 0.25),
                    ("Home", "C", 0.25),
                    ("A", "Home", 1.0),
                    ("B", "Home", 1.0),
                    ("C", "Home", 1.0),
                ],
            ),
            &index,
        )
        .unwrap();
        let mut sessions = SessionCounter::default();
        let mut c = ClientState::new(3, 11, &wl, &mut sessions);
        let n = 100_000usize;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            match next_state(&mut c, &wl).unwrap() {
                State::Op(op) => counts[op] += 1,
                other => panic!("unexpected {other:?}"),
            }
        }
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        let mut chi2 = 0.0;
        for count in counts {
            let dev = count as f64 - n as f64 * 0.25;
            assert!(dev.abs() < 3.0 * sigma, "{counts:?}");
            chi2 += dev * dev / (n as f64 * 0.25);
        }
        // 3 degrees of freedom, p = 0.001
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    #[test]
    fn malformed_rows_are_rejected() {
        let index = chain_model(&["Home", "A"]);
        let bad_sum = doc(&["Home", "A"], &[("Home", "A", 0.5), ("A", "Home", 1.0)]);
        assert!(matches!(
            WorkloadModel::from_document(&bad_sum, &index),
            Err(Error::InvalidRow { .. })
        ));
        let negative = doc(
            &["Home", "A"],
            &[
                ("Home", "A", 1.5),
                ("Home", "Home", -0.5),
                ("A", "Home", 1.0),
            ],
        );
        assert!(matches!(
            WorkloadModel::from_document(&negative, &index),
            Err(Error::InvalidRow { .. })
        ));
        let missing = doc(&["Home", "A"], &[("Home", "A", 1.0)]);
        assert!(WorkloadModel::from_document(&missing, &index).is_err());
        let end_elsewhere = doc(
            &["Home", "A", "End"],
            &[("Home", "A", 1.0), ("A", "End", 1.0), ("End", "A", 1.0)],
        );
        assert!(WorkloadModel::from_document(&end_elsewhere, &index).is_err());
        let unknown = doc(&["Home", "Nope"], &[("Home", "Home", 1.0)]);
        assert!(matches!(
            WorkloadModel::from_document(&unknown, &index),
            Err(Error::Workload(_))
        ));
    }

    #[test]
    fn back_pops_without_a_request() {
        let index = chain_model(&["Home", "Browse"]);
        let wl = WorkloadModel::from_document(
            &doc(
                &["Home", "Browse", "Back", "End"],
                &[("Home", "Browse", 1.0), ("Browse", "Back", 1.0)],
            ),
            &index,
        )
        .unwrap();
        let mut sessions = SessionCounter::default();
        let mut c = ClientState::new(0, 1, &wl, &mut sessions);
        let home = index.homepage();
        let browse = index.operation_index("Browse").unwrap();
        let session = c.session_id;

        let mut requests = 1; // the initial homepage visit
        let mut visited = 1;
        let a = step_client(&mut c, &wl, &mut sessions).unwrap();
        assert_eq!(
            a,
            ClientAction::Issue {
                operation: browse,
                new_session: false
            }
        );
        requests += 1;
        visited += 1;
        let b = step_client(&mut c, &wl, &mut sessions).unwrap();
        assert_eq!(
            b,
            ClientAction::Back {
                to: home,
                replay: false
            }
        );
        visited += 1;
        assert_eq!(c.current, home);
        assert_eq!(c.session_id, session);
        assert_eq!(requests, visited - 1);
    }

    #[test]
    fn back_on_empty_stack_ends_the_session() {
        let index = chain_model(&["Home"]);
        let wl = WorkloadModel::from_document(
            &doc(&["Home", "Back", "End"], &[("Home", "Back", 1.0)]),
            &index,
        )
        .unwrap();
        let mut sessions = SessionCounter::default();
        let mut c = ClientState::new(0, 1, &wl, &mut sessions);
        let before = c.session_id;
        let a = step_client(&mut c, &wl, &mut sessions).unwrap();
        assert_eq!(a, ClientAction::EndSession { operation: 0 });
        assert_ne!(c.session_id, before);
    }

    #[test]
    fn end_opens_a_new_session_at_the_homepage() {
        let index = chain_model(&["Home", "Browse"]);
        let wl = WorkloadModel::from_document(
            &doc(
                &["Home", "Browse", "Back", "End"],
                &[("Home", "Browse", 1.0), ("Browse", "End", 1.0)],
            ),
            &index,
        )
        .unwrap();
        let mut sessions = SessionCounter::default();
        let mut c = ClientState::new(0, 1, &wl, &mut sessions);
        step_client(&mut c, &wl, &mut sessions).unwrap();
        let before = c.session_id;
        let a = step_client(&mut c, &wl, &mut sessions).unwrap();
        assert_eq!(
            a,
            ClientAction::EndSession {
                operation: index.homepage()
            }
        );
        assert_ne!(c.session_id, before);
        assert!(c.stack.is_empty());
        assert_eq!(c.current, index.homepage());
    }

    #[test]
    fn stack_never_holds_pseudo_states() {
        let model = fixtures::rubis_model();
        let index = model.index().unwrap();
        let wl = fixtures::rubis_workload(&index);
        let mut sessions = SessionCounter::default();
        let mut c = ClientState::new(5, 99, &wl, &mut sessions);
        for _ in 0..20_000 {
            step_client(&mut c, &wl, &mut sessions).unwrap();
            assert!(c.stack.iter().all(|op| *op < index.operation_count()));
        }
    }

    /// Stationary distribution of a small chain by power iteration.
    fn stationary(p: &[Vec<f64>]) -> Vec<f64> {
        let n = p.len();
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..10_000 {
            let mut next = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    next[j] += pi[i] * p[i][j];
                }
            }
            pi = next;
        }
        pi
    }

    #[test]
    fn visit_frequencies_converge_to_stationary_distribution() {
        let index = chain_model(&["Home", "A", "B"]);
        let p = vec![
            vec![0.1, 0.6, 0.3],
            vec![0.5, 0.2, 0.3],
            vec![0.3, 0.3, 0.4],
        ];
        let names = ["Home", "A", "B"];
        let mut transitions = Vec::new();
        for (i, row) in p.iter().enumerate() {
            for (j, prob) in row.iter().enumerate() {
                transitions.push((names[i], names[j], *prob));
            }
        }
        let wl = WorkloadModel::from_document(&doc(&names, &transitions), &index).unwrap();
        let oracle = stationary(&p);

        let mut sessions = SessionCounter::default();
        let mut c = ClientState::new(0, 2024, &wl, &mut sessions);
        let n = 200_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            match step_client(&mut c, &wl, &mut sessions).unwrap() {
                ClientAction::Issue { operation, .. } => counts[operation] += 1,
                other => panic!("{other:?}"),
            }
        }
        for i in 0..3 {
            let freq = counts[i] as f64 / n as f64;
            assert!(
                (freq - oracle[i]).abs() < 0.01,
                "{i}: {freq} vs {}",
                oracle[i]
            );
        }
    }

    #[test]
    fn streams_are_reproducible_per_seed() {
        let model = fixtures::rubis_model();
        let index = model.index().unwrap();
        let wl = fixtures::rubis_workload(&index);
        let run = |seed| {
            let mut sessions = SessionCounter::default();
            let mut c = ClientState::new(2, seed, &wl, &mut sessions);
            (0..500)
                .map(|_| step_client(&mut c, &wl, &mut sessions).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn classification_rules() {
        assert_eq!(
            Classifier::default().classify_http(200, Some("Welcome")),
            Verdict::Correct
        );
        assert_eq!(
            classify_response(&Response::HttpCode(503)),
            Verdict::Incorrect
        );
        assert_eq!(
            classify_response(&Response::HttpCode(404)),
            Verdict::Incorrect
        );
        assert_eq!(
            classify_response(&Response::HttpCode(302)),
            Verdict::Correct
        );
        assert_eq!(
            classify_response(&Response::Html("java.lang.NullPointer Exception at".into())),
            Verdict::Incorrect
        );
        assert_eq!(
            classify_response(&Response::Html("Your bid FAILED".into())),
            Verdict::Incorrect
        );
        assert_eq!(
            classify_response(&Response::NetworkError),
            Verdict::Incorrect
        );
        let custom = Classifier {
            keywords: vec!["oops".into()],
        };
        assert_eq!(
            custom.classify(&Response::Html("error".into())),
            Verdict::Correct
        );
        assert_eq!(
            custom.classify(&Response::Html("OOPS".into())),
            Verdict::Incorrect
        );
    }
}
