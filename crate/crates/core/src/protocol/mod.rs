//! Sync exchange between the supervisor and its sensors.

pub mod sensor;
pub mod supervisor;
pub mod wire;

pub use sensor::{SensorSyncState, SyncDiagnostic, SyncOutcome};
pub use supervisor::{PeriodReports, ReportOutcome, SupervisorError, SupervisorState};
pub use wire::{
    decode_report, decode_sync, encode_report, encode_sync, ReportedEvent, SensorReport, SyncFrame,
    WireError, MAX_REPORT_EVENTS, PRE_SYNC_PERIOD,
};
