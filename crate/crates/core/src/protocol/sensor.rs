//! Sensor side of the sync exchange.
//!
//! On every sync receipt the sensor latches and zeroes its counter, then
//! reports the latched count together with the detections stamped during
//! the period that just closed.

use crate::clock::ClockState;
use crate::wave::SensorId;

use super::wire::{ReportedEvent, SensorReport, SyncFrame, PRE_SYNC_PERIOD};

/// Sync sequence anomalies seen by a sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncDiagnostic {
    /// One or more frames between the last seen and this one never arrived.
    MissedSync { expected: u32, received: u32 },
    /// The frame index went backwards or repeated.
    Regression { last_seen: u32, received: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SyncOutcome {
    pub report: Option<SensorReport>,
    pub diagnostic: Option<SyncDiagnostic>,
    /// Detections stamped after the latched count; they moved into the new
    /// period at its first sample.
    pub carried_over: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorSyncState {
    sensor_id: SensorId,
    clock: ClockState,
    pending_events: Vec<ReportedEvent>,
    last_seen_period_index: Option<u32>,
}

impl SensorSyncState {
    pub fn new(sensor_id: SensorId, clock: ClockState) -> Self {
        Self {
            sensor_id,
            clock,
            pending_events: Vec::new(),
            last_seen_period_index: None,
        }
    }

    pub fn sensor_id(&self) -> SensorId {
        self.sensor_id
    }

    pub fn clock(&self) -> &ClockState {
        &self.clock
    }

    pub fn clock_mut(&mut self) -> &mut ClockState {
        &mut self.clock
    }

    pub fn pending_events(&self) -> &[ReportedEvent] {
        &self.pending_events
    }

    pub fn last_seen_period_index(&self) -> Option<u32> {
        self.last_seen_period_index
    }

    /// Index of the period detections are currently stamped against, or
    /// `None` before the first sync.
    pub fn open_period(&self) -> Option<u32> {
        self.last_seen_period_index
    }

    pub fn on_detection(&mut self, local_timestamp_ticks: u64, max_amplitude_milli_g: u32) {
        self.pending_events.push(ReportedEvent {
            local_timestamp_ticks,
            max_amplitude_milli_g,
        });
    }

    /// Folds a later peak into the newest pending detection. Returns false
    /// when nothing is pending.
    pub fn raise_last_amplitude(&mut self, max_amplitude_milli_g: u32) -> bool {
        match self.pending_events.last_mut() {
            Some(ev) => {
                ev.max_amplitude_milli_g = ev.max_amplitude_milli_g.max(max_amplitude_milli_g);
                true
            }
            None => false,
        }
    }

    /// Handles a sync frame. The clock must already be advanced to the
    /// receipt instant.
    pub fn on_sync(&mut self, frame: &SyncFrame) -> SyncOutcome {
        let saved = self.clock.save_and_reset().floor() as u64;

        let (stamped, late): (Vec<_>, Vec<_>) = self
            .pending_events
            .drain(..)
            .partition(|ev| ev.local_timestamp_ticks <= saved);
        let carried_over = late.len();
        // The first sample after the reset lands on counter 0.
        self.pending_events = late
            .into_iter()
            .map(|ev| ReportedEvent {
                local_timestamp_ticks: 0,
                ..ev
            })
            .collect();

        let (closing, diagnostic) = match self.last_seen_period_index {
            None => (None, None),
            Some(last) if frame.period_index <= last => (
                Some(last),
                Some(SyncDiagnostic::Regression {
                    last_seen: last,
                    received: frame.period_index,
                }),
            ),
            Some(last) if frame.period_index > last.saturating_add(1) => (
                Some(last),
                Some(SyncDiagnostic::MissedSync {
                    expected: last + 1,
                    received: frame.period_index,
                }),
            ),
            Some(last) => (Some(last), None),
        };
        self.last_seen_period_index = Some(frame.period_index);

        let report = match closing {
            Some(period_index) => Some(SensorReport {
                sensor_id: self.sensor_id,
                period_index,
                saved_counter: saved,
                events: stamped,
            }),
            // First sync ever: only detections from before it need flushing.
            None if !stamped.is_empty() => Some(SensorReport {
                sensor_id: self.sensor_id,
                period_index: PRE_SYNC_PERIOD,
                saved_counter: saved,
                events: stamped,
            }),
            None => None,
        };

        SyncOutcome {
            report,
            diagnostic,
            carried_over,
        }
    }
}
