//! Per-request trace records and their CSV form.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Terminal outcome of one request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Ok,
    /// Served correctly after the container stalled and retried a call.
    OkAfterRetry,
    Failed,
    ConnectionRefused,
    ConnectionDropped,
}

impl Outcome {
    pub fn is_success(self) -> bool {
        matches!(self, Outcome::Ok | Outcome::OkAfterRetry)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Ok => "ok",
            Outcome::OkAfterRetry => "ok-after-retry",
            Outcome::Failed => "failed",
            Outcome::ConnectionRefused => "connection-refused",
            Outcome::ConnectionDropped => "connection-dropped",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "ok" => Outcome::Ok,
            "ok-after-retry" => Outcome::OkAfterRetry,
            "failed" => Outcome::Failed,
            "connection-refused" => Outcome::ConnectionRefused,
            "connection-dropped" => Outcome::ConnectionDropped,
            other => return Err(format!("unknown outcome `{other}`")),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RequestRecord {
    pub request_id: u64,
    pub client_id: u32,
    pub session_id: u64,
    pub operation: String,
    pub start: u64,
    pub end: u64,
    pub outcome: Outcome,
    pub retries: u32,
    pub is_db_write: bool,
}

impl RequestRecord {
    pub fn latency(&self) -> u64 {
        self.end - self.start
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    request_id: u64,
    client_id: u32,
    session_id: u64,
    operation: String,
    start_ms: u64,
    end_ms: u64,
    outcome: Outcome,
    retries: u32,
}

pub fn write_trace_csv<W: Write>(records: &[RequestRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(Row {
            request_id: r.request_id,
            client_id: r.client_id,
            session_id: r.session_id,
            operation: r.operation.clone(),
            start_ms: r.start,
            end_ms: r.end,
            outcome: r.outcome,
            retries: r.retries,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// A parsed trace plus the number of rows that could not be read.
#[derive(Debug, Default)]
pub struct LoadedTrace {
    pub records: Vec<RequestRecord>,
    pub skipped: usize,
}

/// Reads a trace CSV. Malformed rows (unparsable, or `end_ms < start_ms`)
/// are skipped and counted.
pub fn read_trace_csv<R: Read>(input: R) -> Result<LoadedTrace> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut loaded = LoadedTrace::default();
    for row in rdr.deserialize::<Row>() {
        match row {
            Ok(row) if row.end_ms >= row.start_ms => loaded.records.push(RequestRecord {
                request_id: row.request_id,
                client_id: row.client_id,
                session_id: row.session_id,
                operation: row.operation,
                start: row.start_ms,
                end: row.end_ms,
                outcome: row.outcome,
                retries: row.retries,
                is_db_write: false,
            }),
            _ => loaded.skipped += 1,
        }
    }
    Ok(loaded)
}
