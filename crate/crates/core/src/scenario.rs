//! Scenario files: TOML, one table per subsystem.
//!
//! ```toml
//! seed = 7
//! run_duration_us = 3000000        # optional
//!
//! [geometry]
//! sensor_positions_m = [0, 10, 20, 30]
//! sensor_ids = [0, 1, 2, 3]        # optional, defaults to 0..n
//!
//! [clock_model]
//! drift_ppm = [37, -12, 50, -50]   # optional, defaults to all zero
//!
//! [wave_detection]                 # every field optional
//! wave_speed_m_s = 5000.0
//! threshold_g = 0.8
//! window_us = 3000.0
//! sampling_period_ticks = 4
//! attenuation_per_m = 0.0
//! detection_jitter_us = 0.0
//!
//! [sync_protocol]                  # every field optional
//! sync_period_T_us = 1000000
//! start_us = 0.0
//! coincidence_window_us = 100000.0
//!
//! [transport]                      # every field optional
//! rf_speed_m_s = 180e6
//! supervisor_position_m = 0.0
//! node_positions_m = [0, 10, 20, 30]
//! processing_latency_mean_us = 20.0
//! processing_latency_jitter_us = 1.0
//! drop_probability = 0.0
//!
//! [[ruptures]]
//! position_m = 14.0
//! time_ref_us = 1500000.0
//! peak_amplitude_g = 2.0
//!
//! [[spurious_events]]
//! sensor_id = 2
//! time_ref_us = 1700000.0
//! amplitude_g = 1.1
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::MAX_DRIFT_PPM;
use crate::retiming::DEFAULT_COINCIDENCE_WINDOW_US;
use crate::transport::{
    NetworkModel, DEFAULT_LATENCY_JITTER_US, DEFAULT_LATENCY_MEAN_US, DEFAULT_RF_SPEED_M_S,
};
use crate::wave::{
    Attenuation, CableGeometry, Detector, RuptureEvent, SensorId, DEFAULT_SAMPLING_PERIOD_TICKS,
    DEFAULT_THRESHOLD_G, DEFAULT_WAVE_SPEED_M_S, DEFAULT_WINDOW_US,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub sensor_positions_m: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor_ids: Option<Vec<u16>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClockSection {
    pub drift_ppm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveSection {
    pub wave_speed_m_s: f64,
    pub threshold_g: f64,
    pub window_us: f64,
    pub sampling_period_ticks: u64,
    pub attenuation_per_m: f64,
    /// Half-width of uniform noise added to each detection instant.
    pub detection_jitter_us: f64,
}

impl Default for WaveSection {
    fn default() -> Self {
        Self {
            wave_speed_m_s: DEFAULT_WAVE_SPEED_M_S,
            threshold_g: DEFAULT_THRESHOLD_G,
            window_us: DEFAULT_WINDOW_US,
            sampling_period_ticks: DEFAULT_SAMPLING_PERIOD_TICKS,
            attenuation_per_m: 0.0,
            detection_jitter_us: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncSection {
    #[serde(rename = "sync_period_T_us")]
    pub sync_period_t_us: u32,
    pub start_us: f64,
    pub coincidence_window_us: f64,
}

impl Default for SyncSection {
    fn default() -> Self {
        Self {
            sync_period_t_us: 1_000_000,
            start_us: 0.0,
            coincidence_window_us: DEFAULT_COINCIDENCE_WINDOW_US,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportSection {
    pub rf_speed_m_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub supervisor_position_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node_positions_m: Option<Vec<f64>>,
    pub processing_latency_mean_us: f64,
    pub processing_latency_jitter_us: f64,
    pub drop_probability: f64,
}

impl Default for TransportSection {
    fn default() -> Self {
        Self {
            rf_speed_m_s: DEFAULT_RF_SPEED_M_S,
            supervisor_position_m: None,
            node_positions_m: None,
            processing_latency_mean_us: DEFAULT_LATENCY_MEAN_US,
            processing_latency_jitter_us: DEFAULT_LATENCY_JITTER_US,
            drop_probability: 0.0,
        }
    }
}

/// Threshold crossing at one sensor that no rupture caused.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpuriousEvent {
    pub sensor_id: u16,
    pub time_ref_us: f64,
    pub amplitude_g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub geometry: GeometrySection,
    #[serde(default)]
    pub clock_model: ClockSection,
    #[serde(default)]
    pub wave_detection: WaveSection,
    #[serde(default)]
    pub sync_protocol: SyncSection,
    #[serde(default)]
    pub transport: TransportSection,
    #[serde(default)]
    pub ruptures: Vec<RuptureEvent>,
    #[serde(default)]
    pub spurious_events: Vec<SpuriousEvent>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_duration_us: Option<f64>,
}

impl Scenario {
    /// Evenly spaced sensors with default settings and no events.
    pub fn uniform(sensors: u16, spacing_m: f64) -> Self {
        Self {
            geometry: GeometrySection {
                sensor_positions_m: (0..sensors).map(|i| f64::from(i) * spacing_m).collect(),
                sensor_ids: None,
            },
            clock_model: ClockSection::default(),
            wave_detection: WaveSection::default(),
            sync_protocol: SyncSection::default(),
            transport: TransportSection::default(),
            ruptures: Vec::new(),
            spurious_events: Vec::new(),
            seed: 0,
            run_duration_us: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn sensor_ids(&self) -> Vec<SensorId> {
        match &self.geometry.sensor_ids {
            Some(ids) => ids.iter().copied().map(SensorId).collect(),
            None => (0..self.geometry.sensor_positions_m.len() as u16)
                .map(SensorId)
                .collect(),
        }
    }

    pub fn drift_of(&self, index: usize) -> f64 {
        self.clock_model
            .drift_ppm
            .get(index)
            .copied()
            .unwrap_or(0.0)
    }

    pub fn cable_geometry(&self) -> Result<CableGeometry, ScenarioError> {
        CableGeometry::new(self.sensor_ids(), self.geometry.sensor_positions_m.clone())
            .map_err(|e| ScenarioError::Invalid(vec![e.to_string()]))
    }

    pub fn detector(&self) -> Detector {
        Detector {
            threshold_g: self.wave_detection.threshold_g,
            window_us: self.wave_detection.window_us,
        }
    }

    pub fn attenuation(&self) -> Attenuation {
        match self.wave_detection.attenuation_per_m {
            a if a > 0.0 => Attenuation::Exponential { per_m: a },
            _ => Attenuation::Flat,
        }
    }

    pub fn network_model(&self) -> Result<NetworkModel, ScenarioError> {
        let geom = self.cable_geometry()?;
        let mut model = NetworkModel::for_geometry(&geom, self.seed);
        let t = &self.transport;
        model.rf_speed_m_s = t.rf_speed_m_s;
        if let Some(p) = t.supervisor_position_m {
            model.supervisor_position_m = p;
        }
        if let Some(radio) = &t.node_positions_m {
            model.node_positions_m = geom
                .ids()
                .iter()
                .copied()
                .zip(radio.iter().copied())
                .collect();
        }
        model.processing_latency_mean_us = t.processing_latency_mean_us;
        model.processing_latency_jitter_us = t.processing_latency_jitter_us;
        model.drop_probability = t.drop_probability;
        Ok(model)
    }

    pub fn period_us(&self) -> f64 {
        f64::from(self.sync_protocol.sync_period_t_us)
    }

    fn latest_event_us(&self) -> f64 {
        self.ruptures
            .iter()
            .map(|r| r.time_ref_us)
            .chain(self.spurious_events.iter().map(|s| s.time_ref_us))
            .fold(self.sync_protocol.start_us, f64::max)
    }

    /// The configured duration, or two periods past the latest event.
    pub fn run_duration(&self) -> f64 {
        self.run_duration_us
            .unwrap_or_else(|| self.latest_event_us() + 2.0 * self.period_us())
    }

    /// Collects every violated constraint rather than stopping at the first.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut problems = Vec::new();
        let n = self.geometry.sensor_positions_m.len();
        if let Err(e) = self.cable_geometry() {
            problems.push(format!("geometry: {e}"));
        }
        if n < 3 {
            problems.push(format!("geometry: need at least 3 sensors, got {n}"));
        }
        if let Some(ids) = &self.geometry.sensor_ids {
            if ids.len() != n {
                problems.push(format!(
                    "geometry.sensor_ids: {} ids for {n} positions",
                    ids.len()
                ));
            }
        }
        let drifts = &self.clock_model.drift_ppm;
        if !drifts.is_empty() && drifts.len() != n {
            problems.push(format!(
                "clock_model.drift_ppm: {} values for {n} sensors",
                drifts.len()
            ));
        }
        for (i, d) in drifts.iter().enumerate() {
            if !d.is_finite() || d.abs() > MAX_DRIFT_PPM {
                problems.push(format!(
                    "clock_model.drift_ppm[{i}]: {d} outside ±{MAX_DRIFT_PPM}"
                ));
            }
        }
        let w = &self.wave_detection;
        if !(w.wave_speed_m_s > 0.0) {
            problems.push("wave_detection.wave_speed_m_s must be positive".into());
        }
        if !(w.threshold_g > 0.0) {
            problems.push("wave_detection.threshold_g must be positive".into());
        }
        if !(w.window_us > 0.0) {
            problems.push("wave_detection.window_us must be positive".into());
        }
        if w.sampling_period_ticks == 0 {
            problems.push("wave_detection.sampling_period_ticks must be positive".into());
        }
        if !(w.attenuation_per_m >= 0.0) {
            problems.push("wave_detection.attenuation_per_m must be non-negative".into());
        }
        if !(w.detection_jitter_us >= 0.0) {
            problems.push("wave_detection.detection_jitter_us must be non-negative".into());
        }
        let s = &self.sync_protocol;
        if s.sync_period_t_us == 0 {
            problems.push("sync_protocol.sync_period_T_us must be positive".into());
        }
        if !(s.start_us >= 0.0) {
            problems.push("sync_protocol.start_us must be non-negative".into());
        }
        if !(s.coincidence_window_us > 0.0) {
            problems.push("sync_protocol.coincidence_window_us must be positive".into());
        }
        if let Some(radio) = &self.transport.node_positions_m {
            if radio.len() != n {
                problems.push(format!(
                    "transport.node_positions_m: {} values for {n} sensors",
                    radio.len()
                ));
            }
        }
        if let Ok(model) = self.network_model() {
            if let Err(e) = model.validate() {
                problems.push(format!("transport: {e}"));
            }
        }
        let (lo, hi) = match self.geometry.sensor_positions_m.as_slice() {
            [first, .., last] => (*first, *last),
            _ => (f64::NAN, f64::NAN),
        };
        for (i, r) in self.ruptures.iter().enumerate() {
            if !(r.position_m >= lo && r.position_m <= hi) {
                problems.push(format!(
                    "ruptures[{i}].position_m: {} outside cable extent [{lo}, {hi}]",
                    r.position_m
                ));
            }
            if !(r.peak_amplitude_g > 0.0) {
                problems.push(format!("ruptures[{i}].peak_amplitude_g must be positive"));
            }
            if !(r.time_ref_us >= 0.0) {
                problems.push(format!("ruptures[{i}].time_ref_us must be non-negative"));
            }
        }
        let ids = self.sensor_ids();
        for (i, e) in self.spurious_events.iter().enumerate() {
            if !ids.contains(&SensorId(e.sensor_id)) {
                problems.push(format!(
                    "spurious_events[{i}].sensor_id: unknown sensor {}",
                    e.sensor_id
                ));
            }
            if !(e.time_ref_us >= 0.0) {
                problems.push(format!(
                    "spurious_events[{i}].time_ref_us must be non-negative"
                ));
            }
        }
        if let Some(d) = self.run_duration_us {
            let latest_rupture = self
                .ruptures
                .iter()
                .map(|r| r.time_ref_us)
                .fold(0.0, f64::max);
            if !(d >= latest_rupture + self.period_us()) {
                problems.push(format!(
                    "run_duration_us: {d} does not cover the last rupture plus one full period"
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(problems))
        }
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Scenario::from_toml_str(&text)
}
