//! Scenario documents: what to run, and the artifacts a run produces.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faults::{FaultSpec, RecoveryPlan};
use crate::metrics::{write_buckets_csv, MetricsReport};
use crate::model::AppModel;
use crate::sim::{
    RecoveryAction, RedeployOrder, RetryPolicy, ServerLimits, SimConfig, SimOutput, Simulation,
    DEFAULT_ABANDONMENT_MS,
};
use crate::trace::write_trace_csv;
use crate::workload::{WorkloadDocument, WorkloadModel};

fn default_abandonment() -> Option<u64> {
    Some(DEFAULT_ABANDONMENT_MS)
}

fn default_bucket() -> u64 {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    #[serde(default)]
    pub name: String,
    /// Relative paths resolve against the scenario file's directory.
    pub model: PathBuf,
    pub workload: PathBuf,
    pub clients: u32,
    pub duration_ms: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// `null` disables abandonment.
    #[serde(default = "default_abandonment")]
    pub abandonment_ms: Option<u64>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub recoveries: Vec<RecoveryPlan>,
    #[serde(default = "default_bucket")]
    pub bucket_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub server: ServerLimits,
    #[serde(default)]
    pub redeploy: RedeployOrder,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mttf_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mttr_s: Option<f64>,
}

impl ScenarioDocument {
    pub fn from_json_str(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// A scenario with its documents loaded and checked.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub doc: ScenarioDocument,
    pub base_dir: PathBuf,
    pub model: AppModel,
    pub workload: WorkloadModel,
    pub actions: Vec<RecoveryAction>,
}

/// One simulated run and its metrics.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub output: SimOutput,
    pub report: MetricsReport,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc = ScenarioDocument::from_json_str(&text).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::from_document(doc, base)
    }

    pub fn from_document(doc: ScenarioDocument, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let base_dir = base_dir.into();
        if doc.clients < 1 {
            return Err(Error::Scenario("clients must be at least 1".into()));
        }
        if doc.duration_ms == 0 {
            return Err(Error::Scenario("duration_ms must be positive".into()));
        }
        if doc.bucket_ms == 0 {
            return Err(Error::Scenario("bucket_ms must be positive".into()));
        }
        if doc.abandonment_ms == Some(0) {
            return Err(Error::Scenario("abandonment_ms must be positive".into()));
        }
        doc.retry.check()?;
        let model = AppModel::load(base_dir.join(&doc.model))?;
        let index = model.index()?;
        let workload_doc = WorkloadDocument::load(base_dir.join(&doc.workload))?;
        let workload = WorkloadModel::from_document(&workload_doc, &index)?;
        for f in &doc.faults {
            f.check(&model)?;
        }
        let mut actions = Vec::new();
        for plan in &doc.recoveries {
            if let Some(a) = plan.plan(&model)? {
                actions.push(a);
            }
        }
        Ok(Scenario {
            doc,
            base_dir,
            model,
            workload,
            actions,
        })
    }

    pub fn label(&self) -> &str {
        &self.doc.name
    }

    pub fn config(&self, seed: u64) -> SimConfig {
        SimConfig {
            clients: self.doc.clients,
            duration_ms: self.doc.duration_ms,
            seed,
            retry: self.doc.retry,
            abandonment_ms: self.doc.abandonment_ms,
            server: self.doc.server,
            redeploy: self.doc.redeploy,
        }
    }

    /// Runs the scenario with `seed` in place of the document's seed.
    pub fn run_seed(&self, seed: u64) -> Result<RunResult> {
        self.run_with(seed, self.doc.bucket_ms)
    }

    pub fn run(&self) -> Result<RunResult> {
        self.run_seed(self.doc.seed)
    }

    pub fn run_with(&self, seed: u64, bucket_ms: u64) -> Result<RunResult> {
        let mut sim = Simulation::new(&self.model, &self.workload, self.config(seed))?;
        for f in &self.doc.faults {
            sim.inject(f.clone())?;
        }
        for a in &self.actions {
            sim.schedule(a.clone())?;
        }
        let output = sim.run();
        let mut report = MetricsReport::compute(
            &output.records,
            &output.homepage,
            bucket_ms,
            self.doc.duration_ms,
        )?;
        report.label = self.doc.name.clone();
        report.seed = Some(seed);
        if let (Some(f), Some(r)) = (self.doc.mttf_s, self.doc.mttr_s) {
            report = report.with_availability(f, r);
        }
        Ok(RunResult {
            seed,
            output,
            report,
        })
    }

    /// Runs `n` replicates with seeds `first_seed..first_seed + n` in
    /// parallel. Results are in seed order.
    pub fn run_replicates(
        &self,
        first_seed: u64,
        n: u64,
        bucket_ms: u64,
    ) -> Result<Vec<RunResult>> {
        (first_seed..first_seed + n)
            .into_par_iter()
            .map(|seed| self.run_with(seed, bucket_ms))
            .collect()
    }
}

/// Writes `trace.csv`, `report.json` and `buckets.csv` into `dir`.
pub fn write_artifacts(dir: &Path, result: &RunResult) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| {
        let p = dir.join(name);
        File::create(&p)
            .map(BufWriter::new)
            .map_err(|e| Error::io(p, e))
    };
    write_trace_csv(&result.output.records, create("trace.csv")?)?;
    let mut json = serde_json::to_string_pretty(&result.report)?;
    json.push('\n');
    let p = dir.join("report.json");
    std::fs::write(&p, json).map_err(|e| Error::io(p, e))?;
    write_buckets_csv(&result.report, create("buckets.csv")?)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single replicate.
    pub stddev: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Summary {
                mean: 0.0,
                stddev: 0.0,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let stddev = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Summary { mean, stddev }
    }
}

/// Mean and standard deviation of each scalar metric across replicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub label: String,
    pub seeds: Vec<u64>,
    pub metrics: BTreeMap<String, Summary>,
}

pub fn summarize(label: &str, runs: &[RunResult]) -> ReplicateSummary {
    let scalar = |f: &dyn Fn(&MetricsReport) -> f64| {
        Summary::of(&runs.iter().map(|r| f(&r.report)).collect::<Vec<_>>())
    };
    let mut metrics = BTreeMap::new();
    metrics.insert(
        "requests_total".into(),
        scalar(&|r| r.requests_total as f64),
    );
    metrics.insert(
        "failed_requests_total".into(),
        scalar(&|r| r.failed_requests_total as f64),
    );
    metrics.insert(
        "perceived_downtime_s".into(),
        scalar(&|r| r.perceived_downtime_s),
    );
    metrics.insert("downtime_span_s".into(), scalar(&|r| r.downtime_span_s));
    metrics.insert("g_ses".into(), scalar(&|r| r.g_ses as f64));
    metrics.insert(
        "sessions_total".into(),
        scalar(&|r| r.sessions_total as f64),
    );
    metrics.insert("retries_total".into(), scalar(&|r| r.retries_total as f64));
    if runs.iter().all(|r| r.report.availability.is_some()) && !runs.is_empty() {
        metrics.insert(
            "availability".into(),
            scalar(&|r| r.availability.unwrap_or(0.0)),
        );
    }
    ReplicateSummary {
        label: label.to_string(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        metrics,
    }
}
