//! Report envelopes, atomic writes and CSV plot data.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const TOOL: &str = "strictform";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub passed: bool,
    pub report: Value,
}

impl Envelope {
    pub fn new(command: &str, config_sha256: String, passed: bool, report: Value) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            config_sha256,
            passed,
            report,
        }
    }
}

/// Hash of the canonical serialization, so formatting of the input file
/// does not matter.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn write_envelope(path: &Path, envelope: &Envelope) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(envelope).expect("report serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_envelope(path: &Path) -> Result<Envelope, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let envelope: Envelope =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if envelope.tool != TOOL {
        return Err(CliError::Config(format!("{} is not a {TOOL} report", path.display())));
    }
    Ok(envelope)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub series: String,
}

fn decimal(v: &Value) -> Option<f64> {
    v.get("decimal").and_then(Value::as_f64)
}

fn items(v: &Value, key: &str) -> Vec<Value> {
    v.get(key).and_then(Value::as_array).cloned().unwrap_or_default()
}

fn family_id(f: &Value) -> String {
    let id: Vec<String> = items(f, "id").iter().map(|x| x.to_string()).collect();
    if id.is_empty() {
        "root".into()
    } else {
        id.join(".")
    }
}

/// Plot series of a report: per-stage changed fractions and diameters for
/// `purify`, transition and stitch data for `assemble`.
pub fn plot_points(command: &str, report: &Value) -> Vec<Point> {
    let mut points = Vec::new();
    match command {
        "purify" => {
            for stage in items(&report["pipeline"], "stages") {
                let x = stage["stage"].as_f64().unwrap_or(0.0);
                if let Some(g) = decimal(&stage["gamma"]) {
                    points.push(Point { x, y: 2.0 * g, series: "two_gamma".into() });
                }
                for f in items(&stage, "families") {
                    let id = family_id(&f);
                    if let Some(y) = decimal(&f["changed_fraction"]) {
                        points.push(Point { x, y, series: format!("changed_fraction:{id}") });
                    }
                    if let Some(y) = decimal(&f["diameter"]) {
                        points.push(Point { x, y, series: format!("diameter:{id}") });
                    }
                    if let Some(y) = decimal(&f["diameter_bound"]) {
                        points.push(Point { x, y, series: format!("diameter_bound:{id}") });
                    }
                }
            }
        }
        "assemble" => {
            for level in items(&report["kit"], "levels") {
                let x = level["k"].as_f64().unwrap_or(0.0);
                if let Some(y) = level["transition"].as_f64() {
                    points.push(Point { x, y, series: "transition".into() });
                }
                if let Some(y) = level["length"].as_f64() {
                    points.push(Point { x, y, series: "kit_length".into() });
                }
            }
            for s in items(report, "stitch") {
                let x = s["l"].as_f64().unwrap_or(0.0);
                let y = s["violations"].as_array().map_or(0, Vec::len) as f64;
                points.push(Point { x, y, series: "stitch_violations".into() });
            }
        }
        _ => {}
    }
    points
}

pub fn write_csv(path: &Path, points: &[Point]) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for p in points {
        writer.serialize(p).map_err(|e| CliError::Io(e.to_string()))?;
    }
    if points.is_empty() {
        writer.write_record(["x", "y", "series"]).map_err(|e| CliError::Io(e.to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    write_atomic(path, &bytes)
}
