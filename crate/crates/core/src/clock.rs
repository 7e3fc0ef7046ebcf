//! Drifting quartz counter of a sensor node.
//!
//! One tick is one nominal microsecond. A clock with a rate error of
//! `drift_ppm` counts `1 + drift_ppm * 1e-6` ticks per reference
//! microsecond. The fractional part of the counter is carried between
//! calls to [`ClockState::advance`]; it is only discarded by a reset.

use thiserror::Error;

/// Largest accepted absolute drift, in ppm.
pub const MAX_DRIFT_PPM: f64 = 1000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClockError {
    #[error("drift of {0} ppm is outside ±{MAX_DRIFT_PPM} ppm")]
    DriftOutOfRange(f64),
    #[error("reference duration must be non-negative, got {0} µs")]
    NegativeDuration(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockState {
    drift_ppm: f64,
    counter_ticks: f64,
    ref_time_us: f64,
    last_reset_ref_us: f64,
}

impl ClockState {
    /// A powered-on clock with a zero counter at reference time 0.
    pub fn new(drift_ppm: f64) -> Result<Self, ClockError> {
        Self::starting_at(drift_ppm, 0.0)
    }

    /// A clock whose counter starts at zero at reference time `ref_time_us`.
    pub fn starting_at(drift_ppm: f64, ref_time_us: f64) -> Result<Self, ClockError> {
        if !drift_ppm.is_finite() || drift_ppm.abs() > MAX_DRIFT_PPM {
            return Err(ClockError::DriftOutOfRange(drift_ppm));
        }
        Ok(Self {
            drift_ppm,
            counter_ticks: 0.0,
            ref_time_us,
            last_reset_ref_us: ref_time_us,
        })
    }

    pub fn drift_ppm(&self) -> f64 {
        self.drift_ppm
    }

    /// Local ticks counted per reference microsecond.
    pub fn rate(&self) -> f64 {
        1.0 + self.drift_ppm * 1e-6
    }

    /// Reference time this state corresponds to.
    pub fn ref_time_us(&self) -> f64 {
        self.ref_time_us
    }

    pub fn last_reset_ref_us(&self) -> f64 {
        self.last_reset_ref_us
    }

    /// Current counter value, fractional part included.
    pub fn read_counter(&self) -> f64 {
        self.counter_ticks
    }

    /// Whole ticks latched by the counter hardware.
    pub fn whole_ticks(&self) -> u64 {
        self.counter_ticks.floor() as u64
    }

    pub fn advance(&mut self, ref_dt_us: f64) -> Result<(), ClockError> {
        if ref_dt_us.is_nan() || ref_dt_us < 0.0 {
            return Err(ClockError::NegativeDuration(ref_dt_us));
        }
        self.counter_ticks += ref_dt_us * self.rate();
        self.ref_time_us += ref_dt_us;
        Ok(())
    }

    /// Advances to an absolute reference instant.
    pub fn advance_to(&mut self, ref_now_us: f64) -> Result<(), ClockError> {
        self.advance(ref_now_us - self.ref_time_us)
    }

    /// Counter value the clock would show at `ref_now_us` (not before the
    /// current reference time), without mutating the state.
    pub fn counter_at(&self, ref_now_us: f64) -> Result<f64, ClockError> {
        let mut probe = *self;
        probe.advance_to(ref_now_us)?;
        Ok(probe.counter_ticks)
    }

    /// Latches the counter and zeroes it in one step.
    pub fn save_and_reset(&mut self) -> f64 {
        let saved = self.counter_ticks;
        self.counter_ticks = 0.0;
        self.last_reset_ref_us = self.ref_time_us;
        saved
    }
}
