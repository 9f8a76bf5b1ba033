use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use urbsim::error::{Error, Result};
use urbsim::ingest::{ingest_log, IngestConfig};
use urbsim::metrics::{compare_reports, MetricsReport};
use urbsim::model::AppModel;
use urbsim::scenario::{summarize, write_artifacts, Scenario};
use urbsim::trace::write_trace_csv;
use urbsim::workload::{WorkloadDocument, WorkloadModel};

/// Microreboot recovery simulator.
#[derive(Parser)]
#[command(name = "urbsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trace.csv, report.json and buckets.csv.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run N seeds starting at the scenario seed; results go to seed-<n>/
        /// subdirectories plus summary.json.
        #[arg(long, default_value_t = 1)]
        replicates: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        bucket_ms: Option<u64>,
    },
    /// Tabulate failed requests and downtime against the first report.
    Compare {
        #[arg(required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Convert an access log into a trace.
    Ingest {
        #[arg(long)]
        log: PathBuf,
        /// Classifier and routing config (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trace CSV to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check documents without running anything.
    Validate {
        #[arg(long, conflicts_with = "model")]
        scenario: Option<PathBuf>,
        #[arg(long, required_unless_present = "scenario")]
        model: Option<PathBuf>,
        #[arg(long, requires = "model")]
        workload: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run {
            scenario,
            seed,
            replicates,
            out,
            bucket_ms,
        } => run(&scenario, seed, replicates, out, bucket_ms),
        Command::Compare { reports, json } => compare(&reports, json),
        Command::Ingest { log, config, out } => ingest(&log, config.as_deref(), &out),
        Command::Validate {
            scenario,
            model,
            workload,
        } => validate(scenario.as_deref(), model.as_deref(), workload.as_deref()),
    }
}

fn run(
    path: &Path,
    seed: Option<u64>,
    replicates: u64,
    out: Option<PathBuf>,
    bucket_ms: Option<u64>,
) -> Result<()> {
    let scenario = Scenario::load(path)?;
    if replicates == 0 {
        return Err(Error::Scenario("--replicates must be at least 1".into()));
    }
    let bucket = bucket_ms.unwrap_or(scenario.doc.bucket_ms);
    if bucket == 0 {
        return Err(Error::Scenario("--bucket-ms must be positive".into()));
    }
    let out = out
        .or_else(|| {
            scenario
                .doc
                .output_dir
                .as_ref()
                .map(|d| scenario.base_dir.join(d))
        })
        .unwrap_or_else(|| PathBuf::from("out"));
    let first = seed.unwrap_or(scenario.doc.seed);

    if replicates == 1 {
        let result = scenario.run_with(first, bucket)?;
        write_artifacts(&out, &result)?;
        let r = &result.report;
        println!(
            "{}: seed {}  requests {}  failed {}  downtime {} s  g_ses {}/{}",
            name(&scenario, path),
            first,
            r.requests_total,
            r.failed_requests_total,
            r.perceived_downtime_s,
            r.g_ses,
            r.sessions_total
        );
        return Ok(());
    }

    let runs = scenario.run_replicates(first, replicates, bucket)?;
    for r in &runs {
        write_artifacts(&out.join(format!("seed-{}", r.seed)), r)?;
    }
    let summary = summarize(&name(&scenario, path), &runs);
    let p = out.join("summary.json");
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(&p, text).map_err(|e| io(&p, e))?;
    for (metric, s) in &summary.metrics {
        println!("{metric:<24} {:>12.3} ± {:.3}", s.mean, s.stddev);
    }
    Ok(())
}

fn name(scenario: &Scenario, path: &Path) -> String {
    if scenario.label().is_empty() {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    } else {
        scenario.label().to_string()
    }
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })
}

fn compare(paths: &[PathBuf], json: bool) -> Result<()> {
    let mut reports = Vec::new();
    for p in paths {
        let mut r: MetricsReport = read_json(p)?;
        if r.label.is_empty() {
            r.label = p.display().to_string();
        }
        reports.push(r);
    }
    // A lone report is compared with itself.
    if reports.len() == 1 {
        reports.push(reports[0].clone());
    }
    let table = compare_reports(&reports)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&table)?);
    } else {
        print!("{table}");
    }
    Ok(())
}

fn ingest(log: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let config: IngestConfig = match config {
        Some(p) => read_json(p)?,
        None => IngestConfig::default(),
    };
    let input = File::open(log).map_err(|e| io(log, e))?;
    let got = ingest_log(input, &config)?;
    for e in got.errors.iter().take(5) {
        eprintln!("warning: line {}: {}", e.line, e.message);
    }
    if got.errors.len() > 5 {
        eprintln!("warning: {} more unreadable rows", got.errors.len() - 5);
    }
    if got.rows == 0 {
        eprintln!("warning: {} has no rows", log.display());
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    let file = File::create(out).map_err(|e| io(out, e))?;
    write_trace_csv(&got.records, BufWriter::new(file))?;
    println!(
        "{} requests written to {}",
        got.records.len(),
        out.display()
    );
    Ok(())
}

fn validate(scenario: Option<&Path>, model: Option<&Path>, workload: Option<&Path>) -> Result<()> {
    if let Some(p) = scenario {
        let s = Scenario::load(p)?;
        println!(
            "{}: ok ({} components, {} operations, {} recovery actions)",
            p.display(),
            s.model.components.len(),
            s.model.operations.len(),
            s.actions.len()
        );
        return Ok(());
    }
    let model_path = model.expect("clap requires --model without --scenario");
    let m = AppModel::load(model_path)?;
    let index = m.index()?;
    println!("{}: ok", model_path.display());
    if let Some(w) = workload {
        WorkloadModel::from_document(&WorkloadDocument::load(w)?, &index)?;
        println!("{}: ok", w.display());
    }
    Ok(())
}
