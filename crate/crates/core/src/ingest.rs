//! Turns an external access log into a canonical trace.
//!
//! Input columns: `timestamp_ms, client_id, url_or_operation, http_status,
//! body_flags`. An empty or non-numeric status (`-`, `neterr`) is a network
//! error. `body_flags` holds whatever text of the body is worth scanning for
//! error keywords.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{Outcome, RequestRecord};
use crate::workload::{Classifier, Response, Verdict};

fn default_homepage() -> String {
    "Home".into()
}

fn default_threshold() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    #[serde(default = "default_homepage")]
    pub homepage: String,
    /// URL (or URL prefix ending in `*`) to operation id. Unmapped URLs use
    /// their last path segment with any query string removed.
    #[serde(default)]
    pub routes: BTreeMap<String, String>,
    #[serde(default)]
    pub classifier: Classifier,
    /// Give up when more than this fraction of rows fails to parse.
    #[serde(default = "default_threshold")]
    pub max_bad_fraction: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            homepage: default_homepage(),
            routes: BTreeMap::new(),
            classifier: Classifier::default(),
            max_bad_fraction: default_threshold(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct LogRow {
    timestamp_ms: u64,
    client_id: u32,
    url_or_operation: String,
    #[serde(default)]
    http_status: String,
    #[serde(default)]
    body_flags: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowError {
    /// 1-based line in the input, counting the header.
    pub line: u64,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct Ingested {
    pub records: Vec<RequestRecord>,
    pub errors: Vec<RowError>,
    pub rows: u64,
}

impl IngestConfig {
    pub fn operation_for(&self, url: &str) -> String {
        if let Some(op) = self.routes.get(url) {
            return op.clone();
        }
        for (pattern, op) in &self.routes {
            if let Some(prefix) = pattern.strip_suffix('*') {
                if url.starts_with(prefix) {
                    return op.clone();
                }
            }
        }
        let path = url.split(['?', '#']).next().unwrap_or(url);
        path.trim_end_matches('/')
            .rsplit('/')
            .next()
            .filter(|s| !s.is_empty())
            .unwrap_or(path)
            .to_string()
    }

    fn response(status: &str, body: &str) -> Response {
        match status.trim().parse::<u16>() {
            Ok(code) if code > 0 && !(400..=599).contains(&code) && !body.is_empty() => {
                Response::Html(body.to_string())
            }
            Ok(code) if code > 0 => Response::HttpCode(code),
            _ => Response::NetworkError,
        }
    }
}

/// Reads a log, classifies each row and numbers sessions by homepage
/// bracketing. Requests get ids in row order; start and end are both the
/// logged timestamp.
pub fn ingest_log<R: Read>(input: R, config: &IngestConfig) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut out = Ingested::default();
    let mut sessions: BTreeMap<u32, u64> = BTreeMap::new();
    let mut next_session = 0u64;
    for (i, row) in rdr.deserialize::<LogRow>().enumerate() {
        out.rows += 1;
        let line = i as u64 + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let operation = config.operation_for(&row.url_or_operation);
        let session = match sessions.get(&row.client_id) {
            Some(&s) if operation != config.homepage => s,
            _ => {
                next_session += 1;
                sessions.insert(row.client_id, next_session - 1);
                next_session - 1
            }
        };
        let verdict = config
            .classifier
            .classify(&IngestConfig::response(&row.http_status, &row.body_flags));
        out.records.push(RequestRecord {
            request_id: out.records.len() as u64,
            client_id: row.client_id,
            session_id: session,
            operation,
            start: row.timestamp_ms,
            end: row.timestamp_ms,
            outcome: if verdict == Verdict::Correct {
                Outcome::Ok
            } else {
                Outcome::Failed
            },
            retries: 0,
            is_db_write: false,
        });
    }
    if out.rows > 0 && out.errors.len() as f64 / out.rows as f64 > config.max_bad_fraction {
        let first = &out.errors[0];
        return Err(Error::Scenario(format!(
            "{} of {} log rows unreadable (first at line {}: {})",
            out.errors.len(),
            out.rows,
            first.line,
            first.message
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "timestamp_ms,client_id,url_or_operation,http_status,body_flags\n";

    #[test]
    fn server_error_is_failed() {
        let log = format!("{HEADER}0,1,/rubis/Home,200,\n5,1,/rubis/ViewItem?id=3,500,\n");
        let got = ingest_log(log.as_bytes(), &IngestConfig::default()).unwrap();
        assert_eq!(got.records.len(), 2);
        assert_eq!(got.records[0].operation, "Home");
        assert_eq!(got.records[1].operation, "ViewItem");
        assert_eq!(got.records[1].outcome, Outcome::Failed);
    }

    #[test]
    fn body_keywords_and_network_errors() {
        let log = format!(
            "{HEADER}0,1,Home,200,Exception in thread\n1,1,Home,-,\n2,1,Home,200,all good\n"
        );
        let got = ingest_log(log.as_bytes(), &IngestConfig::default()).unwrap();
        let outcomes: Vec<_> = got.records.iter().map(|r| r.outcome).collect();
        assert_eq!(
            outcomes,
            vec![Outcome::Failed, Outcome::Failed, Outcome::Ok]
        );
    }

    #[test]
    fn empty_input() {
        let got = ingest_log(&b""[..], &IngestConfig::default()).unwrap();
        assert!(got.records.is_empty());
        assert_eq!(got.rows, 0);
    }

    #[test]
    fn sessions_follow_homepage() {
        let log = format!("{HEADER}0,1,Home,200,\n1,2,Home,200,\n2,1,Browse,200,\n3,1,Home,200,\n4,2,Browse,200,\n");
        let got = ingest_log(log.as_bytes(), &IngestConfig::default()).unwrap();
        let ids: Vec<_> = got.records.iter().map(|r| r.session_id).collect();
        assert_eq!(ids, vec![0, 1, 0, 2, 1]);
    }

    #[test]
    fn bad_rows_tolerated_below_threshold() {
        let mut log = HEADER.to_string();
        for i in 0..20 {
            log.push_str(&format!("{i},1,Home,200,\n"));
        }
        log.push_str("oops,1,Home,200,\n");
        let got = ingest_log(log.as_bytes(), &IngestConfig::default()).unwrap();
        assert_eq!(got.records.len(), 20);
        assert_eq!(got.errors[0].line, 22);

        let bad = format!("{HEADER}x,1,Home,200,\n1,1,Home,200,\n");
        assert!(ingest_log(bad.as_bytes(), &IngestConfig::default()).is_err());
    }

    #[test]
    fn routes_and_prefixes() {
        let mut cfg = IngestConfig::default();
        cfg.routes.insert("/".into(), "Home".into());
        cfg.routes.insert("/servlet/Bid*".into(), "PutBid".into());
        assert_eq!(cfg.operation_for("/"), "Home");
        assert_eq!(cfg.operation_for("/servlet/BidNow?x=1"), "PutBid");
        assert_eq!(cfg.operation_for("/a/b/"), "b");
    }
}
