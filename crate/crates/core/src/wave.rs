//! Rupture wave propagation along the cable and threshold detection.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_WAVE_SPEED_M_S: f64 = 5000.0;
pub const DEFAULT_THRESHOLD_G: f64 = 0.8;
pub const DEFAULT_WINDOW_US: f64 = 3000.0;
/// 250 kHz sampling with 1 µs ticks.
pub const DEFAULT_SAMPLING_PERIOD_TICKS: u64 = 4;
pub const DEFAULT_SENSOR_SPACING_M: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SensorId(pub u16);

impl fmt::Display for SensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveError {
    #[error("unknown sensor {0}")]
    UnknownSensor(SensorId),
    #[error("wave speed must be positive, got {0} m/s")]
    NonPositiveSpeed(f64),
    #[error("rupture at {position_m} m is outside the cable extent [{min_m}, {max_m}]")]
    RuptureOutsideCable {
        position_m: f64,
        min_m: f64,
        max_m: f64,
    },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
}

/// Sensor positions along the cable axis, ordered by position.
#[derive(Debug, Clone, PartialEq)]
pub struct CableGeometry {
    positions_m: Vec<f64>,
    ids: Vec<SensorId>,
}

impl CableGeometry {
    pub fn new(ids: Vec<SensorId>, positions_m: Vec<f64>) -> Result<Self, WaveError> {
        if ids.len() != positions_m.len() {
            return Err(WaveError::InvalidGeometry(format!(
                "{} ids for {} positions",
                ids.len(),
                positions_m.len()
            )));
        }
        if ids.is_empty() {
            return Err(WaveError::InvalidGeometry("no sensors".into()));
        }
        if positions_m.iter().any(|p| !p.is_finite()) {
            return Err(WaveError::InvalidGeometry("non-finite position".into()));
        }
        if positions_m.windows(2).any(|w| w[1] <= w[0]) {
            return Err(WaveError::InvalidGeometry(
                "positions must be strictly increasing".into(),
            ));
        }
        let mut seen = ids.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != ids.len() {
            return Err(WaveError::InvalidGeometry("duplicate sensor id".into()));
        }
        Ok(Self { positions_m, ids })
    }

    /// `count` sensors with ids 0.. at a fixed spacing starting from 0 m.
    pub fn uniform(count: u16, spacing_m: f64) -> Result<Self, WaveError> {
        Self::new(
            (0..count).map(SensorId).collect(),
            (0..count).map(|i| f64::from(i) * spacing_m).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[SensorId] {
        &self.ids
    }

    pub fn positions_m(&self) -> &[f64] {
        &self.positions_m
    }

    pub fn index_of(&self, id: SensorId) -> Option<usize> {
        self.ids.iter().position(|&s| s == id)
    }

    pub fn position_of(&self, id: SensorId) -> Result<f64, WaveError> {
        self.index_of(id)
            .map(|i| self.positions_m[i])
            .ok_or(WaveError::UnknownSensor(id))
    }

    pub fn spacing_m(&self, a: SensorId, b: SensorId) -> Result<f64, WaveError> {
        Ok((self.position_of(b)? - self.position_of(a)?).abs())
    }

    pub fn extent_m(&self) -> (f64, f64) {
        (
            self.positions_m[0],
            self.positions_m[self.positions_m.len() - 1],
        )
    }

    pub fn contains(&self, position_m: f64) -> bool {
        let (lo, hi) = self.extent_m();
        position_m >= lo && position_m <= hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuptureEvent {
    pub position_m: f64,
    pub time_ref_us: f64,
    pub peak_amplitude_g: f64,
}

/// Amplitude decay between the break and a sensor.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Attenuation {
    #[default]
    Flat,
    /// `amplitude = peak * exp(-per_m * distance)`
    Exponential { per_m: f64 },
}

impl Attenuation {
    pub fn apply(&self, peak_g: f64, distance_m: f64) -> f64 {
        match *self {
            Attenuation::Flat => peak_g,
            Attenuation::Exponential { per_m } => peak_g * (-per_m * distance_m).exp(),
        }
    }
}

/// A sensor's threshold crossing. `local_timestamp_ticks` stays `None`
/// until the sensor's clock has stamped it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub sensor_id: SensorId,
    pub arrival_ref_us: f64,
    pub local_timestamp_ticks: Option<u64>,
    pub max_amplitude_g: f64,
}

/// Threshold and capture window of the detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detector {
    pub threshold_g: f64,
    pub window_us: f64,
}

impl Default for Detector {
    fn default() -> Self {
        Self {
            threshold_g: DEFAULT_THRESHOLD_G,
            window_us: DEFAULT_WINDOW_US,
        }
    }
}

/// Instant a wave front from `rupture` reaches `sensor_id`.
pub fn arrival_time(
    geom: &CableGeometry,
    rupture: &RuptureEvent,
    sensor_id: SensorId,
    wave_speed_m_s: f64,
) -> Result<f64, WaveError> {
    if !(wave_speed_m_s > 0.0) {
        return Err(WaveError::NonPositiveSpeed(wave_speed_m_s));
    }
    let distance = (geom.position_of(sensor_id)? - rupture.position_m).abs();
    Ok(rupture.time_ref_us + distance / wave_speed_m_s * 1e6)
}

/// Threshold test with inclusive comparison. The amplitude is taken as flat
/// over the capture window, so the window maximum is the received amplitude.
pub fn detect(
    sensor_id: SensorId,
    arrival_ref_us: f64,
    amplitude_at_sensor_g: f64,
    detector: &Detector,
) -> Option<DetectionRecord> {
    debug_assert!(detector.threshold_g > 0.0 && detector.window_us > 0.0);
    (amplitude_at_sensor_g >= detector.threshold_g).then_some(DetectionRecord {
        sensor_id,
        arrival_ref_us,
        local_timestamp_ticks: None,
        max_amplitude_g: amplitude_at_sensor_g,
    })
}

const SAMPLE_SNAP: f64 = 1e-12;

/// First sample instant at or after `arrival_local_ticks`, in counter ticks.
pub fn quantize_to_sampling(arrival_local_ticks: f64, sampling_period_ticks: u64) -> u64 {
    assert!(
        sampling_period_ticks > 0,
        "sampling period must be positive"
    );
    let period = sampling_period_ticks as f64;
    let samples = arrival_local_ticks.max(0.0) / period;
    // a crossing within float noise of a sample instant lands on that sample
    let nearest = samples.round();
    let index = if (samples - nearest).abs() <= SAMPLE_SNAP * nearest.max(1.0) {
        nearest
    } else {
        samples.ceil()
    };
    (index as u64) * sampling_period_ticks
}

/// Ground-truth detections of one rupture, in reference time.
pub fn simulate_rupture(
    geom: &CableGeometry,
    rupture: &RuptureEvent,
    wave_speed_m_s: f64,
    detector: &Detector,
    attenuation: Attenuation,
) -> Result<Vec<DetectionRecord>, WaveError> {
    if !geom.contains(rupture.position_m) {
        let (min_m, max_m) = geom.extent_m();
        return Err(WaveError::RuptureOutsideCable {
            position_m: rupture.position_m,
            min_m,
            max_m,
        });
    }
    let mut out = Vec::with_capacity(geom.len());
    for (&id, &pos) in geom.ids().iter().zip(geom.positions_m()) {
        let arrival = arrival_time(geom, rupture, id, wave_speed_m_s)?;
        let amplitude =
            attenuation.apply(rupture.peak_amplitude_g, (pos - rupture.position_m).abs());
        out.extend(detect(id, arrival, amplitude, detector));
    }
    Ok(out)
}
