//! Run output tables and their CSV export.
//!
//! | file             | columns |
//! |------------------|---------|
//! | `detections.csv` | sensor_id, source, arrival_ref_us, detected_ref_us, local_timestamp_ticks, period_index, max_amplitude_g, absorbed |
//! | `retimed.csv`    | period_index, sensor_id, raw_local_ticks, saved_counter, retimed_us, max_amplitude_g, flag, source |
//! | `estimates.csv`  | period_index, cluster_index, sensors, rupture_index, x_true_m, x_est_m, v_est_m_s, error_m, s1, s2, s3, flags, spurious |
//! | `summary.csv`    | key, value |
//!
//! Empty cells stand for absent values. Floats are written in the shortest
//! form that parses back to the same double.

use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DETECTIONS_FILE: &str = "detections.csv";
pub const RETIMED_FILE: &str = "retimed.csv";
pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("csv error in {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub sensor_id: u16,
    pub source: String,
    pub arrival_ref_us: f64,
    pub detected_ref_us: f64,
    pub local_timestamp_ticks: Option<u64>,
    /// Empty before the sensor's first sync.
    pub period_index: Option<u32>,
    pub max_amplitude_g: f64,
    pub absorbed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetimedRow {
    pub period_index: u32,
    pub sensor_id: u16,
    pub raw_local_ticks: u64,
    pub saved_counter: u64,
    pub retimed_us: Option<f64>,
    pub max_amplitude_g: f64,
    pub flag: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub period_index: u32,
    pub cluster_index: usize,
    pub sensors: usize,
    pub rupture_index: Option<usize>,
    pub x_true_m: Option<f64>,
    pub x_est_m: Option<f64>,
    pub v_est_m_s: Option<f64>,
    pub error_m: Option<f64>,
    pub s1: Option<u16>,
    pub s2: Option<u16>,
    pub s3: Option<u16>,
    pub flags: String,
    pub spurious: bool,
}

/// Run totals. Event accounting closes:
/// `detections == events_reported + events_pending_at_end + events_oversize`
/// and `events_reported == events_received + events_dropped + events_in_flight_at_end`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub detections: u64,
    pub absorbed_crossings: u64,
    pub events_reported: u64,
    pub events_pending_at_end: u64,
    pub events_oversize: u64,
    pub events_dropped: u64,
    pub events_in_flight_at_end: u64,
    pub events_received: u64,
    pub events_retimed: u64,
    pub events_flagged: u64,
    pub pre_sync_events: u64,
    pub late_events: u64,
    pub duplicate_events: u64,
    pub periods_completed: u64,
    pub periods_timed_out: u64,
    pub sync_messages: u64,
    pub sync_messages_dropped: u64,
    pub report_messages: u64,
    pub report_messages_dropped: u64,
    pub sync_diagnostics: u64,
    pub estimates: u64,
    pub spurious_estimates: u64,
    pub mean_abs_error_m: Option<f64>,
    pub max_abs_error_m: Option<f64>,
}

impl Summary {
    pub fn rows(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            ("detections", self.detections.to_string()),
            ("absorbed_crossings", self.absorbed_crossings.to_string()),
            ("events_reported", self.events_reported.to_string()),
            (
                "events_pending_at_end",
                self.events_pending_at_end.to_string(),
            ),
            ("events_oversize", self.events_oversize.to_string()),
            ("events_dropped", self.events_dropped.to_string()),
            (
                "events_in_flight_at_end",
                self.events_in_flight_at_end.to_string(),
            ),
            ("events_received", self.events_received.to_string()),
            ("events_retimed", self.events_retimed.to_string()),
            ("events_flagged", self.events_flagged.to_string()),
            ("pre_sync_events", self.pre_sync_events.to_string()),
            ("late_events", self.late_events.to_string()),
            ("duplicate_events", self.duplicate_events.to_string()),
            ("periods_completed", self.periods_completed.to_string()),
            ("periods_timed_out", self.periods_timed_out.to_string()),
            ("sync_messages", self.sync_messages.to_string()),
            (
                "sync_messages_dropped",
                self.sync_messages_dropped.to_string(),
            ),
            ("report_messages", self.report_messages.to_string()),
            (
                "report_messages_dropped",
                self.report_messages_dropped.to_string(),
            ),
            ("sync_diagnostics", self.sync_diagnostics.to_string()),
            ("estimates", self.estimates.to_string()),
            ("spurious_estimates", self.spurious_estimates.to_string()),
            ("mean_abs_error_m", opt(self.mean_abs_error_m)),
            ("max_abs_error_m", opt(self.max_abs_error_m)),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub detections: Vec<DetectionRow>,
    pub retimed: Vec<RetimedRow>,
    pub estimates: Vec<EstimateRow>,
    pub summary: Summary,
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), ExportError> {
    let csv_err = |source| ExportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(|source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub const DETECTIONS_HEADER: &[&str] = &[
    "sensor_id",
    "source",
    "arrival_ref_us",
    "detected_ref_us",
    "local_timestamp_ticks",
    "period_index",
    "max_amplitude_g",
    "absorbed",
];
pub const RETIMED_HEADER: &[&str] = &[
    "period_index",
    "sensor_id",
    "raw_local_ticks",
    "saved_counter",
    "retimed_us",
    "max_amplitude_g",
    "flag",
    "source",
];
pub const ESTIMATES_HEADER: &[&str] = &[
    "period_index",
    "cluster_index",
    "sensors",
    "rupture_index",
    "x_true_m",
    "x_est_m",
    "v_est_m_s",
    "error_m",
    "s1",
    "s2",
    "s3",
    "flags",
    "spurious",
];
pub const SUMMARY_HEADER: &[&str] = &["key", "value"];

/// Writes the four CSV tables into `dir`, creating it if needed.
pub fn export_csv(report: &RunReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, ExportError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| ExportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let paths: Vec<PathBuf> = [DETECTIONS_FILE, RETIMED_FILE, ESTIMATES_FILE, SUMMARY_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_rows(&paths[0], &report.detections, DETECTIONS_HEADER)?;
    write_rows(&paths[1], &report.retimed, RETIMED_HEADER)?;
    write_rows(&paths[2], &report.estimates, ESTIMATES_HEADER)?;
    write_rows(&paths[3], &report.summary.rows(), SUMMARY_HEADER)?;
    Ok(paths)
}

/// Reads a `retimed.csv` back.
pub fn read_retimed_csv(path: impl AsRef<Path>) -> Result<Vec<RetimedRow>, ExportError> {
    let path = path.as_ref();
    let csv_err = |source| ExportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize()
        .collect::<Result<Vec<RetimedRow>, _>>()
        .map_err(csv_err)
}
