//! Localization accuracy over randomized trials of a base scenario.

use rand::Rng;

use crate::rng::keyed_rng;
use crate::scenario::Scenario;
use crate::sim::{run, SimError};
use crate::wave::RuptureEvent;

const KIND_TRIAL: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSettings {
    pub trials: u32,
    /// Half-width of the uniform detection noise, µs.
    pub jitter_us: f64,
    /// Half-width of the uniform per-sensor drift, ppm.
    pub drift_ppm: f64,
    pub seed: u64,
}

impl Default for TrialSettings {
    fn default() -> Self {
        Self {
            trials: 1000,
            jitter_us: 3.0,
            drift_ppm: 50.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub trial: u32,
    pub x_true_m: f64,
    pub x_est_m: Option<f64>,
    pub error_m: Option<f64>,
    pub flags: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSummary {
    pub outcomes: Vec<TrialOutcome>,
    /// Trials that produced no usable position.
    pub failed: usize,
    pub p50_m: f64,
    pub p99_m: f64,
    pub max_m: f64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// The trial scenario: `base` with drifts, one rupture inside the span
/// during period 1, and detection noise.
pub fn trial_scenario(base: &Scenario, settings: &TrialSettings, trial: u32) -> Scenario {
    let mut rng = keyed_rng(settings.seed, &[KIND_TRIAL, u64::from(trial)]);
    let mut s = base.clone();
    let n = s.geometry.sensor_positions_m.len();
    s.clock_model.drift_ppm = (0..n)
        .map(|_| {
            if settings.drift_ppm > 0.0 {
                rng.random_range(-settings.drift_ppm..=settings.drift_ppm)
            } else {
                0.0
            }
        })
        .collect();
    let first = s.geometry.sensor_positions_m[0];
    let last = s.geometry.sensor_positions_m[n - 1];
    let t = s.period_us();
    let x = rng.random_range(first..last);
    let at = s.sync_protocol.start_us + t + rng.random_range(0.1 * t..0.8 * t);
    s.ruptures = vec![RuptureEvent {
        position_m: x,
        time_ref_us: at,
        peak_amplitude_g: 2.0,
    }];
    s.spurious_events.clear();
    s.wave_detection.detection_jitter_us = settings.jitter_us;
    s.seed = rng.random();
    s.run_duration_us = None;
    s
}

/// Runs every trial through the full simulation. Trials without a usable
/// estimate count as infinite error in the percentiles.
pub fn run_trials(
    base: &Scenario,
    settings: &TrialSettings,
) -> Result<MonteCarloSummary, SimError> {
    let mut outcomes = Vec::with_capacity(settings.trials as usize);
    for trial in 0..settings.trials {
        let s = trial_scenario(base, settings, trial);
        let report = run(&s)?;
        let est = report.estimates.iter().find(|e| e.rupture_index == Some(0));
        outcomes.push(TrialOutcome {
            trial,
            x_true_m: s.ruptures[0].position_m,
            x_est_m: est.and_then(|e| e.x_est_m),
            error_m: est.and_then(|e| e.error_m),
            flags: est
                .map(|e| e.flags.clone())
                .unwrap_or_else(|| "NO_ESTIMATE".into()),
        });
    }
    let mut errors: Vec<f64> = outcomes
        .iter()
        .map(|o| o.error_m.unwrap_or(f64::INFINITY))
        .collect();
    errors.sort_by(f64::total_cmp);
    Ok(MonteCarloSummary {
        failed: outcomes.iter().filter(|o| o.error_m.is_none()).count(),
        p50_m: percentile(&errors, 50.0),
        p99_m: percentile(&errors, 99.0),
        max_m: errors.last().copied().unwrap_or(f64::NAN),
        outcomes,
    })
}
