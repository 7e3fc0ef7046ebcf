//! Byte layouts of the two protocol messages. All integers little-endian.
//!
//! Sync frame (12 bytes):
//!
//! | offset | size | field          |
//! |--------|------|----------------|
//! | 0      | 4    | magic `CASC`   |
//! | 4      | 4    | period_index   |
//! | 8      | 4    | period_T_us    |
//!
//! Sensor report (16 + 12 × n bytes):
//!
//! | offset | size | field          |
//! |--------|------|----------------|
//! | 0      | 2    | sensor_id      |
//! | 2      | 4    | period_index   |
//! | 6      | 8    | saved_counter  |
//! | 14     | 2    | event_count n  |
//! | 16+12k | 8    | timestamp      |
//! | 24+12k | 4    | amplitude mg   |

use thiserror::Error;

use crate::wave::SensorId;

pub const SYNC_MAGIC: [u8; 4] = *b"CASC";
pub const SYNC_FRAME_LEN: usize = 12;
pub const REPORT_HEADER_LEN: usize = 16;
pub const REPORT_EVENT_LEN: usize = 12;
/// Reports must fit a single datagram.
pub const MAX_REPORT_EVENTS: usize = 1000;
/// Period index carried by a report of detections made before the first
/// sync. Such events have no enclosing period and cannot be retimed.
pub const PRE_SYNC_PERIOD: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated: need {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
    #[error("declared {declared} events but buffer holds {available}")]
    EventCountMismatch { declared: usize, available: usize },
    #[error("{0} events exceed the per-report cap of {MAX_REPORT_EVENTS}")]
    TooManyEvents(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncFrame {
    pub period_index: u32,
    pub period_t_us: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ReportedEvent {
    pub local_timestamp_ticks: u64,
    pub max_amplitude_milli_g: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorReport {
    pub sensor_id: SensorId,
    pub period_index: u32,
    pub saved_counter: u64,
    pub events: Vec<ReportedEvent>,
}

impl SensorReport {
    pub fn is_pre_sync(&self) -> bool {
        self.period_index == PRE_SYNC_PERIOD
    }

    pub fn encoded_len(&self) -> usize {
        REPORT_HEADER_LEN + REPORT_EVENT_LEN * self.events.len()
    }
}

pub fn encode_sync(frame: &SyncFrame) -> [u8; SYNC_FRAME_LEN] {
    let mut out = [0u8; SYNC_FRAME_LEN];
    out[..4].copy_from_slice(&SYNC_MAGIC);
    out[4..8].copy_from_slice(&frame.period_index.to_le_bytes());
    out[8..12].copy_from_slice(&frame.period_t_us.to_le_bytes());
    out
}

pub fn decode_sync(bytes: &[u8]) -> Result<SyncFrame, WireError> {
    if bytes.len() < SYNC_FRAME_LEN {
        return Err(WireError::Truncated {
            needed: SYNC_FRAME_LEN,
            got: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != SYNC_MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if bytes.len() > SYNC_FRAME_LEN {
        return Err(WireError::TrailingBytes(bytes.len() - SYNC_FRAME_LEN));
    }
    Ok(SyncFrame {
        period_index: u32::from_le_bytes(bytes[4..8].try_into().unwrap()),
        period_t_us: u32::from_le_bytes(bytes[8..12].try_into().unwrap()),
    })
}

/// Fails only when the report holds more than [`MAX_REPORT_EVENTS`] events.
pub fn encode_report(report: &SensorReport) -> Result<Vec<u8>, WireError> {
    if report.events.len() > MAX_REPORT_EVENTS {
        return Err(WireError::TooManyEvents(report.events.len()));
    }
    let mut out = Vec::with_capacity(report.encoded_len());
    out.extend_from_slice(&report.sensor_id.0.to_le_bytes());
    out.extend_from_slice(&report.period_index.to_le_bytes());
    out.extend_from_slice(&report.saved_counter.to_le_bytes());
    out.extend_from_slice(&(report.events.len() as u16).to_le_bytes());
    for ev in &report.events {
        out.extend_from_slice(&ev.local_timestamp_ticks.to_le_bytes());
        out.extend_from_slice(&ev.max_amplitude_milli_g.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_report(bytes: &[u8]) -> Result<SensorReport, WireError> {
    if bytes.len() < REPORT_HEADER_LEN {
        return Err(WireError::Truncated {
            needed: REPORT_HEADER_LEN,
            got: bytes.len(),
        });
    }
    let sensor_id = SensorId(u16::from_le_bytes(bytes[0..2].try_into().unwrap()));
    let period_index = u32::from_le_bytes(bytes[2..6].try_into().unwrap());
    let saved_counter = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
    let declared = usize::from(u16::from_le_bytes(bytes[14..16].try_into().unwrap()));
    if declared > MAX_REPORT_EVENTS {
        return Err(WireError::TooManyEvents(declared));
    }
    let body = &bytes[REPORT_HEADER_LEN..];
    if body.len() != declared * REPORT_EVENT_LEN {
        return Err(WireError::EventCountMismatch {
            declared,
            available: body.len() / REPORT_EVENT_LEN,
        });
    }
    let events = body
        .chunks_exact(REPORT_EVENT_LEN)
        .map(|c| ReportedEvent {
            local_timestamp_ticks: u64::from_le_bytes(c[0..8].try_into().unwrap()),
            max_amplitude_milli_g: u32::from_le_bytes(c[8..12].try_into().unwrap()),
        })
        .collect();
    Ok(SensorReport {
        sensor_id,
        period_index,
        saved_counter,
        events,
    })
}
