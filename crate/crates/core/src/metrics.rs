//! Sessionization and goodput metrics over request traces.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::RequestRecord;

#[derive(Clone, Debug, PartialEq)]
pub struct SessionRecord {
    /// Position in the sessionized output.
    pub session_id: u64,
    pub client_id: u32,
    pub requests: Vec<RequestRecord>,
    /// Every request succeeded.
    pub successful: bool,
    /// Failed, and the client moved on to a new session afterwards.
    pub aborted: bool,
    /// Last session of its client: the trace ends before we see how it ends.
    pub censored: bool,
}

impl SessionRecord {
    /// The first failed request, if any.
    pub fn first_failure(&self) -> Option<&RequestRecord> {
        self.requests.iter().find(|r| !r.outcome.is_success())
    }
}

/// Splits a trace into per-client sessions. A new session starts at every
/// homepage request and at each client's first request. Within a client,
/// requests are ordered by start time, then id.
pub fn sessionize(trace: &[RequestRecord], homepage: &str) -> Vec<SessionRecord> {
    let mut by_client: BTreeMap<u32, Vec<&RequestRecord>> = BTreeMap::new();
    for r in trace {
        by_client.entry(r.client_id).or_default().push(r);
    }
    let mut sessions = Vec::new();
    for (client, mut reqs) in by_client {
        reqs.sort_by_key(|r| (r.start, r.request_id));
        let first_of_client = sessions.len();
        for r in reqs {
            if r.operation == homepage || sessions.len() == first_of_client {
                sessions.push(SessionRecord {
                    session_id: sessions.len() as u64,
                    client_id: client,
                    requests: Vec::new(),
                    successful: true,
                    aborted: false,
                    censored: false,
                });
            }
            let s = sessions.last_mut().expect("pushed above");
            s.successful &= r.outcome.is_success();
            s.requests.push(r.clone());
        }
        if let Some(last) = sessions.last_mut() {
            last.censored = true;
        }
    }
    for s in &mut sessions {
        s.aborted = !s.successful && !s.censored;
    }
    sessions
}

/// Completed (non-censored) sessions.
pub fn sessions_total(sessions: &[SessionRecord]) -> u64 {
    sessions.iter().filter(|s| !s.censored).count() as u64
}

/// Completed sessions in which every request succeeded.
pub fn g_ses(sessions: &[SessionRecord]) -> u64 {
    sessions
        .iter()
        .filter(|s| !s.censored && s.successful)
        .count() as u64
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Series {
    pub good: Vec<u64>,
    pub failed: Vec<u64>,
}

fn bucket_count(trace: &[RequestRecord], bucket_ms: u64, horizon_ms: u64) -> usize {
    let last_end = trace
        .iter()
        .map(|r| r.end / bucket_ms + 1)
        .max()
        .unwrap_or(0);
    (horizon_ms.div_ceil(bucket_ms)).max(last_end) as usize
}

fn check_bucket(bucket_ms: u64) -> Result<()> {
    if bucket_ms == 0 {
        return Err(Error::Scenario("bucket_ms must be positive".into()));
    }
    Ok(())
}

/// Per-bucket good/failed request counts, bucketed by end time.
pub fn raw_goodput(trace: &[RequestRecord], bucket_ms: u64) -> Result<Series> {
    check_bucket(bucket_ms)?;
    let n = bucket_count(trace, bucket_ms, 0);
    let mut series = Series {
        good: vec![0; n],
        failed: vec![0; n],
    };
    for r in trace {
        let b = (r.end / bucket_ms) as usize;
        if r.outcome.is_success() {
            series.good[b] += 1;
        } else {
            series.failed[b] += 1;
        }
    }
    Ok(series)
}

/// Session-weighted goodput: every request of a failed session counts as
/// failed in its own bucket, including requests that completed before the
/// failure happened.
pub fn g_wop(
    trace: &[RequestRecord],
    sessions: &[SessionRecord],
    bucket_ms: u64,
) -> Result<Series> {
    check_bucket(bucket_ms)?;
    let n = bucket_count(trace, bucket_ms, 0);
    let mut series = Series {
        good: vec![0; n],
        failed: vec![0; n],
    };
    for s in sessions {
        for r in &s.requests {
            let b = (r.end / bucket_ms) as usize;
            if b >= n {
                series.good.resize(b + 1, 0);
                series.failed.resize(b + 1, 0);
            }
            if s.successful {
                series.good[b] += 1;
            } else {
                series.failed[b] += 1;
            }
        }
    }
    Ok(series)
}

/// Seconds during which some request failed: the number of buckets holding
/// at least one failed request, times the bucket length.
pub fn perceived_downtime(trace: &[RequestRecord], bucket_ms: u64) -> Result<f64> {
    check_bucket(bucket_ms)?;
    let failing: std::collections::BTreeSet<u64> = trace
        .iter()
        .filter(|r| !r.outcome.is_success())
        .map(|r| r.end / bucket_ms)
        .collect();
    Ok(failing.len() as f64 * bucket_ms as f64 / 1000.0)
}

/// First-to-last failing bucket, inclusive, in seconds.
pub fn downtime_span(trace: &[RequestRecord], bucket_ms: u64) -> Result<f64> {
    check_bucket(bucket_ms)?;
    let buckets = trace
        .iter()
        .filter(|r| !r.outcome.is_success())
        .map(|r| r.end / bucket_ms);
    let (lo, hi) = buckets.fold((u64::MAX, 0), |(lo, hi), b| (lo.min(b), hi.max(b)));
    if lo == u64::MAX {
        return Ok(0.0);
    }
    Ok((hi - lo + 1) as f64 * bucket_ms as f64 / 1000.0)
}

pub fn availability(mttf_s: f64, mttr_s: f64) -> Option<f64> {
    let total = mttf_s + mttr_s;
    (mttf_s >= 0.0 && mttr_s >= 0.0 && total > 0.0).then(|| mttf_s / total)
}

/// `(reference - candidate) / reference` as a percentage; `None` when the
/// reference is zero.
pub fn improvement(reference: f64, candidate: f64) -> Option<f64> {
    (reference != 0.0).then(|| (reference - candidate) / reference * 100.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default)]
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub bucket_ms: u64,
    pub requests_total: u64,
    pub failed_requests_total: u64,
    pub raw_good: Vec<u64>,
    pub raw_failed: Vec<u64>,
    pub gwop_good: Vec<u64>,
    pub gwop_failed: Vec<u64>,
    pub aborted_sessions: Vec<u64>,
    pub aborted_sessions_per_sec: Vec<f64>,
    pub g_ses: u64,
    pub sessions_total: u64,
    pub sessions_censored: u64,
    pub perceived_downtime_s: f64,
    pub downtime_span_s: f64,
    #[serde(default)]
    pub retries_total: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mttf_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mttr_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub availability: Option<f64>,
}

impl MetricsReport {
    /// Computes every metric over `trace`. Series cover at least
    /// `horizon_ms`.
    pub fn compute(
        trace: &[RequestRecord],
        homepage: &str,
        bucket_ms: u64,
        horizon_ms: u64,
    ) -> Result<Self> {
        check_bucket(bucket_ms)?;
        let n = bucket_count(trace, bucket_ms, horizon_ms);
        let sessions = sessionize(trace, homepage);
        let mut raw = raw_goodput(trace, bucket_ms)?;
        let mut gwop = g_wop(trace, &sessions, bucket_ms)?;
        for s in [&mut raw, &mut gwop] {
            s.good.resize(n, 0);
            s.failed.resize(n, 0);
        }
        let mut aborted = vec![0u64; n];
        for s in sessions.iter().filter(|s| s.aborted) {
            let first = s.first_failure().expect("aborted sessions have a failure");
            aborted[(first.end / bucket_ms) as usize] += 1;
        }
        let per_sec = 1000.0 / bucket_ms as f64;
        Ok(MetricsReport {
            label: String::new(),
            seed: None,
            bucket_ms,
            requests_total: trace.len() as u64,
            failed_requests_total: trace.iter().filter(|r| !r.outcome.is_success()).count() as u64,
            aborted_sessions_per_sec: aborted.iter().map(|&a| a as f64 * per_sec).collect(),
            aborted_sessions: aborted,
            raw_good: raw.good,
            raw_failed: raw.failed,
            gwop_good: gwop.good,
            gwop_failed: gwop.failed,
            g_ses: g_ses(&sessions),
            sessions_total: sessions_total(&sessions),
            sessions_censored: sessions.iter().filter(|s| s.censored).count() as u64,
            perceived_downtime_s: perceived_downtime(trace, bucket_ms)?,
            downtime_span_s: downtime_span(trace, bucket_ms)?,
            retries_total: trace.iter().map(|r| u64::from(r.retries)).sum(),
            mttf_s: None,
            mttr_s: None,
            availability: None,
        })
    }

    pub fn with_availability(mut self, mttf_s: f64, mttr_s: f64) -> Self {
        self.mttf_s = Some(mttf_s);
        self.mttr_s = Some(mttr_s);
        self.availability = availability(mttf_s, mttr_s);
        self
    }

    pub fn compare(&self, candidate: &MetricsReport) -> Improvement {
        compare(self, candidate)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    /// Percent fewer failed requests than the reference.
    pub requests: Option<f64>,
    /// Percent less perceived downtime than the reference.
    pub downtime: Option<f64>,
}

pub fn compare(reference: &MetricsReport, candidate: &MetricsReport) -> Improvement {
    Improvement {
        requests: improvement(
            reference.failed_requests_total as f64,
            candidate.failed_requests_total as f64,
        ),
        downtime: improvement(
            reference.perceived_downtime_s,
            candidate.perceived_downtime_s,
        ),
    }
}

/// Writes `t,raw_good,raw_failed,gwop_good,gwop_failed,aborted_sessions`,
/// one row per bucket; `t` is the bucket start in seconds.
pub fn write_buckets_csv<W: Write>(report: &MetricsReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "t",
        "raw_good",
        "raw_failed",
        "gwop_good",
        "gwop_failed",
        "aborted_sessions",
    ])?;
    for i in 0..report.raw_good.len() {
        let t = i as f64 * report.bucket_ms as f64 / 1000.0;
        w.write_record([
            t.to_string(),
            report.raw_good[i].to_string(),
            report.raw_failed[i].to_string(),
            report.gwop_good[i].to_string(),
            report.gwop_failed[i].to_string(),
            report.aborted_sessions[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<buckets>", e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub failed_requests: u64,
    pub downtime_s: f64,
    pub requests_improvement: Option<f64>,
    pub downtime_improvement: Option<f64>,
}

/// Failed requests and downtime per report, with improvements relative to
/// the first one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub bucket_ms: u64,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_reports(reports: &[MetricsReport]) -> Result<ComparisonTable> {
    let Some(reference) = reports.first() else {
        return Err(Error::SchemaMismatch("no reports to compare".into()));
    };
    if let Some(odd) = reports.iter().find(|r| r.bucket_ms != reference.bucket_ms) {
        return Err(Error::SchemaMismatch(format!(
            "bucket_ms {} in {:?} differs from {} in {:?}",
            odd.bucket_ms, odd.label, reference.bucket_ms, reference.label
        )));
    }
    let rows = reports
        .iter()
        .map(|r| {
            let imp = compare(reference, r);
            ComparisonRow {
                label: r.label.clone(),
                failed_requests: r.failed_requests_total,
                downtime_s: r.perceived_downtime_s,
                requests_improvement: imp.requests,
                downtime_improvement: imp.downtime,
            }
        })
        .collect();
    Ok(ComparisonTable {
        bucket_ms: reference.bucket_ms,
        rows,
    })
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.0}%"));
        let width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .max()
            .unwrap_or(0)
            .max(9);
        writeln!(
            f,
            "{:<width$}  {:>15}  {:>12}  {:>12}  {:>12}",
            "technique", "failed requests", "downtime [s]", "Δ requests", "Δ downtime"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<width$}  {:>15}  {:>12}  {:>12}  {:>12}",
                r.label,
                r.failed_requests,
                r.downtime_s,
                pct(r.requests_improvement),
                pct(r.downtime_improvement)
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Outcome;
    use proptest::prelude::*;

    fn rec(
        id: u64,
        client: u32,
        op: &str,
        start: u64,
        end: u64,
        outcome: Outcome,
    ) -> RequestRecord {
        RequestRecord {
            request_id: id,
            client_id: client,
            session_id: 0,
            operation: op.into(),
            start,
            end,
            outcome,
            retries: 0,
            is_db_write: false,
        }
    }

    #[test]
    fn empty_trace() {
        assert!(sessionize(&[], "Home").is_empty());
        assert_eq!(perceived_downtime(&[], 1000).unwrap(), 0.0);
    }

    #[test]
    fn homepage_brackets_sessions() {
        let trace = vec![
            rec(0, 0, "Home", 0, 1, Outcome::Ok),
            rec(1, 0, "Browse", 1, 2, Outcome::Ok),
            rec(2, 0, "Home", 2, 3, Outcome::Ok),
            rec(3, 0, "PutBid", 3, 4, Outcome::Failed),
        ];
        let s = sessionize(&trace, "Home");
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].requests.len(), 2);
        assert!(s[0].successful);
        assert!(!s[1].successful);
        assert!(s[1].censored && !s[1].aborted);
    }

    #[test]
    fn failure_mid_session_counts_as_aborted() {
        let trace = vec![
            rec(0, 0, "Home", 0, 1, Outcome::Ok),
            rec(1, 0, "Browse", 1, 2, Outcome::Failed),
            rec(2, 0, "Home", 2, 3, Outcome::Ok),
            rec(3, 1, "Home", 0, 1500, Outcome::Ok),
            rec(4, 1, "Home", 1500, 1600, Outcome::Ok),
        ];
        let report = MetricsReport::compute(&trace, "Home", 1000, 0).unwrap();
        assert_eq!(report.aborted_sessions, vec![1, 0]);
        assert_eq!(report.sessions_total, 2);
        assert_eq!(report.g_ses, 1);
        assert_eq!(report.sessions_censored, 2);
    }

    #[test]
    fn g_ses_is_pessimistic() {
        let trace = vec![
            rec(0, 0, "Home", 0, 1, Outcome::Ok),
            rec(1, 0, "Home", 1, 2, Outcome::Ok),
            rec(2, 0, "Browse", 2, 3, Outcome::Failed),
            rec(3, 0, "Home", 3, 4, Outcome::Ok),
            rec(4, 0, "Home", 4, 5, Outcome::Ok),
        ];
        let s = sessionize(&trace, "Home");
        assert_eq!(sessions_total(&s), 3);
        assert_eq!(g_ses(&s), 2);
    }

    #[test]
    fn gwop_is_raw_without_failures() {
        let trace: Vec<_> = (0..50)
            .map(|i| {
                rec(
                    i,
                    (i % 3) as u32,
                    if i % 4 == 0 { "Home" } else { "X" },
                    i * 100,
                    i * 100 + 50,
                    Outcome::Ok,
                )
            })
            .collect();
        let s = sessionize(&trace, "Home");
        assert_eq!(
            g_wop(&trace, &s, 1000).unwrap(),
            raw_goodput(&trace, 1000).unwrap()
        );
    }

    #[test]
    fn gwop_relabels_before_onset() {
        let trace = vec![
            rec(0, 0, "Home", 95_000, 95_010, Outcome::Ok),
            rec(1, 0, "ViewItem", 97_000, 97_010, Outcome::Ok),
            rec(2, 0, "PutBid", 104_000, 104_010, Outcome::Failed),
        ];
        let s = sessionize(&trace, "Home");
        let g = g_wop(&trace, &s, 1000).unwrap();
        assert_eq!(g.failed[95], 1);
        assert_eq!(g.failed[97], 1);
        assert_eq!(g.good.iter().sum::<u64>(), 0);
    }

    #[test]
    fn downtime_counts_buckets() {
        let contiguous: Vec<_> = (10..=33)
            .map(|b| rec(b, 0, "X", b * 1000, b * 1000 + 5, Outcome::Failed))
            .collect();
        assert_eq!(perceived_downtime(&contiguous, 1000).unwrap(), 24.0);
        assert_eq!(downtime_span(&contiguous, 1000).unwrap(), 24.0);

        let sparse: Vec<_> = [3u64, 40, 90]
            .iter()
            .map(|&b| rec(b, 0, "X", b * 1000, b * 1000 + 5, Outcome::Failed))
            .collect();
        assert_eq!(perceived_downtime(&sparse, 1000).unwrap(), 3.0);
        assert_eq!(downtime_span(&sparse, 1000).unwrap(), 88.0);
    }

    #[test]
    fn improvement_percentages() {
        assert_eq!(improvement(713.0, 251.0).unwrap().round(), 65.0);
        assert_eq!(improvement(108.0, 24.0).unwrap().round(), 78.0);
        assert_eq!(improvement(5.0, 5.0), Some(0.0));
        assert_eq!(improvement(0.0, 3.0), None);
    }

    #[test]
    fn availability_formula() {
        assert_eq!(availability(99.0, 1.0), Some(0.99));
        assert_eq!(availability(0.0, 0.0), None);
    }

    #[test]
    fn comparison_rejects_mixed_buckets() {
        let trace = vec![rec(0, 0, "Home", 0, 5, Outcome::Failed)];
        let a = MetricsReport::compute(&trace, "Home", 1000, 0).unwrap();
        let b = MetricsReport::compute(&trace, "Home", 500, 0).unwrap();
        assert!(matches!(
            compare_reports(&[a.clone(), b]),
            Err(Error::SchemaMismatch(_))
        ));
        let t = compare_reports(&[a.clone(), a]).unwrap();
        assert_eq!(t.rows[1].requests_improvement, Some(0.0));
        assert!(t.to_string().contains("0%"));
    }

    #[test]
    fn buckets_csv_layout() {
        let trace = vec![rec(0, 0, "Home", 0, 1500, Outcome::Ok)];
        let report = MetricsReport::compute(&trace, "Home", 1000, 3000).unwrap();
        let mut out = Vec::new();
        write_buckets_csv(&report, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "t,raw_good,raw_failed,gwop_good,gwop_failed,aborted_sessions\n0,0,0,0,0,0\n1,1,0,1,0,0\n2,0,0,0,0,0\n"
        );
    }

    fn arb_trace() -> impl Strategy<Value = Vec<RequestRecord>> {
        prop::collection::vec(
            (0u32..4, 0usize..3, 0u64..20_000, 0u64..3000, 0u8..5),
            0..80,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (c, op, start, lat, o))| {
                    let outcome = [
                        Outcome::Ok,
                        Outcome::Ok,
                        Outcome::OkAfterRetry,
                        Outcome::Failed,
                        Outcome::ConnectionRefused,
                    ][o as usize];
                    rec(
                        i as u64,
                        c,
                        ["Home", "A", "B"][op],
                        start,
                        start + lat,
                        outcome,
                    )
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn gwop_dominates_raw(trace in arb_trace()) {
            let s = sessionize(&trace, "Home");
            let raw = raw_goodput(&trace, 1000).unwrap();
            let g = g_wop(&trace, &s, 1000).unwrap();
            prop_assert_eq!(raw.good.len(), g.good.len());
            for b in 0..raw.good.len() {
                prop_assert!(g.good[b] <= raw.good[b]);
                prop_assert!(g.failed[b] >= raw.failed[b]);
                prop_assert_eq!(g.good[b] + g.failed[b], raw.good[b] + raw.failed[b]);
            }
            prop_assert_eq!(g.good.iter().chain(&g.failed).sum::<u64>(), trace.len() as u64);
        }

        #[test]
        fn sessions_partition_each_client(trace in arb_trace()) {
            let s = sessionize(&trace, "Home");
            for client in 0..4u32 {
                let mut original: Vec<_> = trace.iter().filter(|r| r.client_id == client).cloned().collect();
                original.sort_by_key(|r| (r.start, r.request_id));
                let joined: Vec<_> = s.iter().filter(|x| x.client_id == client).flat_map(|x| x.requests.clone()).collect();
                prop_assert_eq!(joined, original);
            }
        }

        #[test]
        fn g_ses_identity(trace in arb_trace()) {
            let s = sessionize(&trace, "Home");
            let with_failure = s.iter().filter(|x| !x.censored && x.requests.iter().any(|r| !r.outcome.is_success())).count() as u64;
            prop_assert_eq!(g_ses(&s), sessions_total(&s) - with_failure);
            prop_assert!(g_ses(&s) <= sessions_total(&s));
        }
    }
}
