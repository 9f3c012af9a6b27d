//! CSV datasets and versioned JSON documents.
//!
//! Dataset CSV header: `t,mx,my,mz,wx,wy,wz[,roll,pitch,heading]` in seconds,
//! milligauss, rad/s and radians. Values are written with 17 significant
//! digits so a read-back reproduces every `f64` exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::calmodel::{MeasurementSample, Vec3};
use crate::error::{Error, Result};
use crate::eval::{EvaluationReport, HeadingErrors};
use crate::sim::{Attitude, Dataset, MotionKind, SimulationTruth};
use crate::solver::CalibrationResult;

pub const SCHEMA_VERSION: u32 = 1;

pub const MEASUREMENT_COLUMNS: [&str; 7] = ["t", "mx", "my", "mz", "wx", "wy", "wz"];
pub const ATTITUDE_COLUMNS: [&str; 3] = ["roll", "pitch", "heading"];

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io.to_string()),
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_dataset_csv<W: Write>(out: W, d: &Dataset) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut header: Vec<&str> = MEASUREMENT_COLUMNS.to_vec();
    if let Some(att) = &d.attitude {
        if att.len() != d.samples.len() {
            return Err(Error::InvalidConfig("attitude is not aligned with samples".into()));
        }
        header.extend(ATTITUDE_COLUMNS);
    }
    w.write_record(&header).map_err(csv_error)?;
    for (i, s) in d.samples.iter().enumerate() {
        let mut row = vec![fmt(s.t), fmt(s.m.x), fmt(s.m.y), fmt(s.m.z), fmt(s.w.x), fmt(s.w.y), fmt(s.w.z)];
        if let Some(att) = &d.attitude {
            let a = att[i];
            row.extend([fmt(a.roll), fmt(a.pitch), fmt(a.heading)]);
        }
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    write_dataset_csv(BufWriter::new(File::create(path)?), d)
}

/// Parses a dataset. Extra columns are ignored; attitude columns are optional
/// but must appear together. `truth` is always `None`.
pub fn read_dataset_csv<R: Read>(input: R) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = r.headers().map_err(csv_error)?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let cols = MEASUREMENT_COLUMNS
        .iter()
        .map(|c| find(c).ok_or_else(|| Error::MissingColumn(c.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let att_cols: Vec<Option<usize>> = ATTITUDE_COLUMNS.iter().map(|c| find(c)).collect();
    let att_cols = if att_cols.iter().all(Option::is_none) {
        None
    } else {
        let cols = att_cols
            .iter()
            .zip(ATTITUDE_COLUMNS)
            .map(|(c, name)| c.ok_or_else(|| Error::MissingColumn(name.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Some(cols)
    };

    let mut samples = Vec::new();
    let mut attitude = Vec::new();
    let mut record = csv::StringRecord::new();
    while r.read_record(&mut record).map_err(csv_error)? {
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |idx: usize, name: &str| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                line,
                message: format!("column `{name}`: cannot parse {raw:?} as a number"),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse {
                    line,
                    message: format!("column `{name}`: non-finite value"),
                })
            }
        };
        let v: Vec<f64> = cols
            .iter()
            .zip(MEASUREMENT_COLUMNS)
            .map(|(&i, name)| field(i, name))
            .collect::<Result<_>>()?;
        samples.push(MeasurementSample {
            t: v[0],
            m: Vec3::new(v[1], v[2], v[3]),
            w: Vec3::new(v[4], v[5], v[6]),
        });
        if let Some(ac) = &att_cols {
            attitude.push(Attitude {
                t: v[0],
                roll: field(ac[0], "roll")?,
                pitch: field(ac[1], "pitch")?,
                heading: field(ac[2], "heading")?,
            });
        }
    }
    Ok(Dataset {
        samples,
        truth: None,
        attitude: att_cols.map(|_| attitude),
    })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    read_dataset_csv(BufReader::new(File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?))
}

/// Per-sample heading errors for external plotting.
pub fn write_heading_csv<W: Write>(out: W, h: &HeadingErrors) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["t", "true_heading_deg", "estimated_heading_deg", "error_deg"])
        .map_err(csv_error)?;
    for s in &h.samples {
        w.write_record([fmt(s.t), fmt(s.true_deg), fmt(s.estimated_deg), fmt(s.error_deg)])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Simulation truth sidecar for one Monte Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDocument {
    pub schema_version: u32,
    pub run: usize,
    pub seed: u64,
    pub calibration_kind: MotionKind,
    pub evaluation_kind: MotionKind,
    /// Requested pitch amplitude when it had to be clamped (deg).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch_clamped_from_deg: Option<f64>,
    pub truth: SimulationTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub method: String,
    #[serde(flatten)]
    pub result: CalibrationResult,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub declination_deg: f64,
    #[serde(flatten)]
    pub report: EvaluationReport,
}

/// Mean metrics of one method on one calibration kind; `None` when every run failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub method: String,
    pub kind: MotionKind,
    pub heading_rmse: Option<f64>,
    pub mag_field_std: Option<f64>,
    pub successes: usize,
    pub failures: usize,
    /// Error kind of each failed run, sorted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failure_kinds: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub schema_version: u32,
    pub runs: usize,
    pub seed: u64,
    pub evaluation_kind: MotionKind,
    /// Uncalibrated metrics on the evaluation datasets.
    pub raw_heading_rmse: f64,
    pub raw_mag_field_std: f64,
    pub cells: Vec<SummaryCell>,
}

pub fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, doc).map_err(|e| Error::Io(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Parses a JSON document after checking its `schema_version`.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    match value.get("schema_version") {
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION as u64) => {}
        found => {
            return Err(Error::SchemaVersion {
                found: found.map_or("none".into(), |v| v.to_string()),
                expected: SCHEMA_VERSION.to_string(),
            })
        }
    }
    serde_json::from_value(value).map_err(|e| Error::Parse {
        line: 0,
        message: e.to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_json(&text)
}
