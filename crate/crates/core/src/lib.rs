//! Simulator and protocol library for a wireless acoustic-emission sensor
//! network that detects wire ruptures on a cable and locates them from
//! arrival-time differences.
//!
//! Sensors free-run drifting counters. A supervisor broadcasts a sync frame
//! every period; each sensor latches and resets its counter on receipt and
//! reports the detections of the period it just closed. The supervisor
//! rescales every timestamp by `T / T_i` onto its own time base, groups
//! coincident detections and locates each group from three sensors.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod clock;
pub mod localization;
pub mod montecarlo;
pub mod node;
pub mod protocol;
pub mod report;
pub mod retiming;
mod rng;
pub mod scenario;
pub mod sim;
pub mod transport;
pub mod wave;

pub use clock::{ClockError, ClockState};
pub use localization::{localize, localize_arrivals, EstimateFlag, RuptureEstimate};
pub use report::{export_csv, RunReport};
pub use retiming::{retime, RetimedEvent};
pub use scenario::{load_scenario, Scenario, ScenarioError};
pub use sim::{run, SimError};
pub use wave::{CableGeometry, RuptureEvent, SensorId};
