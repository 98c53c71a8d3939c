//! Experiment reports: JSON lines, a summary, CSV and a manifest of digests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{LabError, Result};
use crate::harness::config::ExperimentKind;
use crate::norms::digest_hex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pass {
    Base,
    Refined,
}

/// One (fixture, parameter tuple) evaluation of `lhs <= C rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub pass: Pass,
    pub fixture: usize,
    pub log_res: Vec<u32>,
    pub params: BTreeMap<String, Value>,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`; `0` when both vanish, absent when only `rhs` does.
    pub ratio: Option<f64>,
}

impl Record {
    pub fn new(pass: Pass, fixture: usize, log_res: &[u32], params: BTreeMap<String, Value>, lhs: f64, rhs: f64) -> Self {
        let ratio = if lhs == 0.0 {
            Some(0.0)
        } else if rhs > 0.0 {
            Some(lhs / rhs)
        } else {
            None
        };
        Record { pass, fixture, log_res: log_res.to_vec(), params, lhs, rhs, ratio }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub base_max: f64,
    pub refined_max: f64,
    /// `refined_max / base_max - 1`.
    pub growth: f64,
    pub tolerance: f64,
    pub stable: bool,
}

impl StabilityVerdict {
    pub fn new(base_max: f64, refined_max: f64, tolerance: f64) -> Self {
        let growth = if base_max > 0.0 { refined_max / base_max - 1.0 } else if refined_max > 0.0 { f64::MAX } else { 0.0 };
        StabilityVerdict { base_max, refined_max, growth, tolerance, stable: growth <= tolerance }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub config_digest: String,
    pub environment_digest: String,
    pub records: usize,
    /// Largest base-pass ratio; absent when some ratio is infinite or there
    /// are no records.
    pub max_ratio: Option<f64>,
    pub finite: bool,
    pub stability: Option<StabilityVerdict>,
    /// Kind-specific checks (sparse invariants, weight probes, ...).
    pub checks: BTreeMap<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub summary: Summary,
    pub records: Vec<Record>,
}

/// Digest of what may legitimately change results besides the config:
/// crate version and target, not the thread count.
pub fn environment_digest() -> String {
    let env = format!("lplab {} {} {}", env!("CARGO_PKG_VERSION"), std::env::consts::ARCH, std::env::consts::OS);
    digest_hex(env.as_bytes())
}

/// Maximum of the `pass` ratios: `(max, all finite)`.
pub fn max_ratio(records: &[Record], pass: Pass) -> (Option<f64>, bool) {
    let mut finite = true;
    let mut best: Option<f64> = None;
    for r in records.iter().filter(|r| r.pass == pass) {
        match r.ratio {
            Some(v) => best = Some(best.map_or(v, |b| b.max(v))),
            None => finite = false,
        }
    }
    (if finite { best } else { None }, finite)
}

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CSV_FILE: &str = "records.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

const CSV_HEADER: [&str; 7] = ["pass", "fixture", "log_res", "params", "lhs", "rhs", "ratio"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub config_digest: String,
    pub files: Vec<ManifestEntry>,
}

fn jsonl(records: &[Record]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

fn csv_bytes(records: &[Record]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let io = |e: csv::Error| LabError::Io(std::io::Error::other(e.to_string()));
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in records {
        let pass = serde_json::to_value(r.pass)?;
        let log_res: Vec<String> = r.log_res.iter().map(u32::to_string).collect();
        w.write_record([
            pass.as_str().unwrap_or_default().to_string(),
            r.fixture.to_string(),
            log_res.join(" "),
            serde_json::to_string(&r.params)?,
            format!("{:e}", r.lhs),
            format!("{:e}", r.rhs),
            r.ratio.map_or_else(String::new, |v| format!("{v:e}")),
        ])
        .map_err(io)?;
    }
    w.into_inner().map_err(|e| LabError::Io(std::io::Error::other(e.to_string())))
}

/// Write the four report files under `dir` (created if missing).
pub fn emit_report(report: &Report, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let files: Vec<(&str, Vec<u8>)> = vec![
        (RECORDS_FILE, jsonl(&report.records)?.into_bytes()),
        (SUMMARY_FILE, (serde_json::to_string_pretty(&report.summary)? + "\n").into_bytes()),
        (CSV_FILE, csv_bytes(&report.records)?),
    ];
    let mut entries = Vec::new();
    for (name, bytes) in files {
        fs::write(dir.join(name), &bytes)?;
        entries.push(ManifestEntry { name: name.to_string(), bytes: bytes.len(), sha256: digest_hex(&bytes) });
    }
    let manifest = Manifest {
        kind: report.summary.kind,
        seed: report.summary.seed,
        config_digest: report.summary.config_digest.clone(),
        files: entries,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Parse a report written by [`emit_report`].
pub fn read_report(dir: &Path) -> Result<Report> {
    let summary: Summary = serde_json::from_str(&fs::read_to_string(dir.join(SUMMARY_FILE))?)?;
    let records = fs::read_to_string(dir.join(RECORDS_FILE))?
        .lines()
        .map(serde_json::from_str)
        .collect::<std::result::Result<Vec<Record>, _>>()?;
    Ok(Report { summary, records })
}
