//! Ratiometric retiming of sensor-local timestamps onto the supervisor's
//! period timebase, and grouping of retimed detections into clusters.
//!
//! A sensor that counted `T_i` ticks across a period of nominal length `T`
//! maps a local stamp `T_ev` to `T_ev * T / T_i`. Under constant-rate drift
//! the ratio cancels the drift exactly.

use std::cmp::Ordering;

use thiserror::Error;

use crate::protocol::{PeriodReports, SensorReport};
use crate::wave::SensorId;

pub const DEFAULT_COINCIDENCE_WINDOW_US: f64 = 100_000.0;

/// Largest accepted relative gap between the counted and nominal period.
/// Far above any accepted drift; a counter that spans a missed sync
/// lands well outside it.
pub const PERIOD_LENGTH_TOLERANCE: f64 = 0.01;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum RetimeError {
    #[error("saved counter is zero")]
    ZeroCounter,
    #[error("period length must be positive")]
    NonPositivePeriod,
    #[error("event at {event_ticks} ticks lies beyond the period count {counter_ticks}")]
    OutOfPeriod {
        event_ticks: f64,
        counter_ticks: f64,
    },
    #[error("counted {counter_ticks} ticks for a nominal period of {period_us} µs")]
    PeriodLengthMismatch { counter_ticks: f64, period_us: f64 },
    #[error("no retimed event from sensor {0}")]
    MissingSensor(SensorId),
}

/// `event_ticks * period_us / counter_ticks`.
pub fn retime(event_ticks: f64, counter_ticks: f64, period_us: f64) -> Result<f64, RetimeError> {
    if counter_ticks <= 0.0 {
        return Err(RetimeError::ZeroCounter);
    }
    if period_us <= 0.0 {
        return Err(RetimeError::NonPositivePeriod);
    }
    if event_ticks < 0.0 || event_ticks > counter_ticks {
        return Err(RetimeError::OutOfPeriod {
            event_ticks,
            counter_ticks,
        });
    }
    Ok(event_ticks * period_us / counter_ticks)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetimedEvent {
    pub sensor_id: SensorId,
    pub period_index: u32,
    /// Supervisor-reference microseconds since the period's sync, as seen by
    /// this sensor. Meaningless when `flag` is set.
    pub retimed_us: f64,
    pub raw_local_ticks: u64,
    pub saved_counter: u64,
    pub max_amplitude_g: f64,
    pub flag: Option<RetimeError>,
}

impl RetimedEvent {
    pub fn is_usable(&self) -> bool {
        self.flag.is_none()
    }
}

fn retime_report(report: &SensorReport, period_us: f64) -> impl Iterator<Item = RetimedEvent> + '_ {
    let counter = report.saved_counter as f64;
    let mismatch =
        counter > 0.0 && ((counter - period_us) / period_us).abs() > PERIOD_LENGTH_TOLERANCE;
    report.events.iter().map(move |ev| {
        let raw = ev.local_timestamp_ticks as f64;
        let result = if mismatch {
            Err(RetimeError::PeriodLengthMismatch {
                counter_ticks: counter,
                period_us,
            })
        } else {
            retime(raw, counter, period_us)
        };
        RetimedEvent {
            sensor_id: report.sensor_id,
            period_index: report.period_index,
            retimed_us: result.unwrap_or(f64::NAN),
            raw_local_ticks: ev.local_timestamp_ticks,
            saved_counter: report.saved_counter,
            max_amplitude_g: f64::from(ev.max_amplitude_milli_g) / 1000.0,
            flag: result.err(),
        }
    })
}

fn retimed_order(a: &RetimedEvent, b: &RetimedEvent) -> Ordering {
    // flagged entries (NaN) sort last
    match (a.is_usable(), b.is_usable()) {
        (true, false) => Ordering::Less,
        (false, true) => Ordering::Greater,
        _ => a
            .retimed_us
            .total_cmp(&b.retimed_us)
            .then(a.sensor_id.cmp(&b.sensor_id))
            .then(a.raw_local_ticks.cmp(&b.raw_local_ticks)),
    }
}

/// Retimes every event of one period's reports against the nominal period.
/// Output is ordered by retimed time, ties by sensor id; flagged entries
/// come last.
pub fn align_period(reports: &[SensorReport], period_us: f64) -> Vec<RetimedEvent> {
    let mut out: Vec<RetimedEvent> = reports
        .iter()
        .flat_map(|r| retime_report(r, period_us))
        .collect();
    out.sort_by(retimed_order);
    out
}

pub fn align_released(period: &PeriodReports) -> Vec<RetimedEvent> {
    align_period(&period.reports, f64::from(period.period_t_us))
}

/// `t_i - t_j` using each sensor's earliest usable event.
pub fn pairwise_dt(events: &[RetimedEvent], i: SensorId, j: SensorId) -> Result<f64, RetimeError> {
    let first = |s: SensorId| {
        events
            .iter()
            .filter(|e| e.sensor_id == s && e.is_usable())
            .map(|e| e.retimed_us)
            .min_by(f64::total_cmp)
            .ok_or(RetimeError::MissingSensor(s))
    };
    Ok(first(i)? - first(j)?)
}

/// Detections of one physical event, all within one period.
#[derive(Debug, Clone, PartialEq)]
pub struct EventCluster {
    pub period_index: u32,
    pub events: Vec<RetimedEvent>,
}

impl EventCluster {
    /// Earliest retimed instant per sensor, ordered by sensor id.
    pub fn first_arrivals(&self) -> Vec<(SensorId, f64)> {
        let mut firsts: Vec<(SensorId, f64)> = Vec::new();
        for ev in &self.events {
            match firsts.iter_mut().find(|(s, _)| *s == ev.sensor_id) {
                Some(slot) => slot.1 = slot.1.min(ev.retimed_us),
                None => firsts.push((ev.sensor_id, ev.retimed_us)),
            }
        }
        firsts.sort_by_key(|&(s, _)| s);
        firsts
    }

    pub fn start_us(&self) -> f64 {
        self.events.first().map_or(f64::NAN, |e| e.retimed_us)
    }
}

/// Greedy clustering in retimed order: an event joins the current cluster
/// when it lies within `window_us` of the cluster's first event. Flagged
/// events are skipped and events from different periods never share a cluster.
pub fn cluster_events(events: &[RetimedEvent], window_us: f64) -> Vec<EventCluster> {
    let mut usable: Vec<RetimedEvent> = events.iter().filter(|e| e.is_usable()).copied().collect();
    usable.sort_by(|a, b| {
        a.period_index
            .cmp(&b.period_index)
            .then(retimed_order(a, b))
    });
    let mut clusters: Vec<EventCluster> = Vec::new();
    for ev in usable {
        match clusters.last_mut() {
            Some(c)
                if c.period_index == ev.period_index
                    && ev.retimed_us - c.start_us() <= window_us =>
            {
                c.events.push(ev)
            }
            _ => clusters.push(EventCluster {
                period_index: ev.period_index,
                events: vec![ev],
            }),
        }
    }
    clusters
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::ReportedEvent;
    use num_rational::Ratio;
    use proptest::prelude::*;

    fn exact(ev: i128, ti: i128, t: i128) -> f64 {
        let r = Ratio::new(ev * t, ti);
        *r.numer() as f64 / *r.denom() as f64
    }

    fn report(id: u16, saved: u64, stamps: &[u64]) -> SensorReport {
        SensorReport {
            sensor_id: SensorId(id),
            period_index: 3,
            saved_counter: saved,
            events: stamps
                .iter()
                .map(|&t| ReportedEvent {
                    local_timestamp_ticks: t,
                    max_amplitude_milli_g: 1500,
                })
                .collect(),
        }
    }

    #[test]
    fn uniform_drift_maps_midpoint() {
        assert_eq!(retime(500_025.0, 1_000_050.0, 1e6).unwrap(), 500_000.0);
    }

    #[test]
    fn zero_drift_is_identity() {
        for ev in [0.0, 1.0, 123_456.0, 1e6] {
            assert_eq!(retime(ev, 1e6, 1e6).unwrap(), ev);
        }
    }

    #[test]
    fn negative_drift_matches_rational_oracle() {
        let want = exact(250_000, 999_950, 1_000_000);
        // 250,012.500625031...
        assert!((want - 250_012.500_625_031).abs() < 1e-6);
        let got = retime(250_000.0, 999_950.0, 1e6).unwrap();
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn retime_errors() {
        assert_eq!(retime(1.0, 0.0, 1e6), Err(RetimeError::ZeroCounter));
        assert!(matches!(
            retime(11.0, 10.0, 1e6),
            Err(RetimeError::OutOfPeriod { .. })
        ));
        assert_eq!(retime(1.0, 10.0, 0.0), Err(RetimeError::NonPositivePeriod));
    }

    #[test]
    fn opposite_drifts_cancel() {
        // same instant 400 ms into the period on a +50 and a -50 ppm clock
        let a = report(0, 1_000_050, &[400_020]);
        let b = report(1, 999_950, &[399_980]);
        let out = align_period(&[a, b], 1e6);
        assert_eq!(out.len(), 2);
        assert!((out[0].retimed_us - out[1].retimed_us).abs() < 0.01);
        assert!((out[0].retimed_us - 400_000.0).abs() < 0.01);
    }

    #[test]
    fn single_zero_drift_report_unchanged() {
        let out = align_period(&[report(0, 1_000_000, &[5, 700, 90_000])], 1e6);
        let got: Vec<f64> = out.iter().map(|e| e.retimed_us).collect();
        assert_eq!(got, vec![5.0, 700.0, 90_000.0]);
        assert_eq!(out[0].max_amplitude_g, 1.5);
    }

    #[test]
    fn empty_reports_give_nothing() {
        assert!(
            align_period(&[report(0, 1_000_000, &[]), report(1, 999_999, &[])], 1e6).is_empty()
        );
        assert!(align_period(&[], 1e6).is_empty());
    }

    #[test]
    fn ties_sort_by_sensor() {
        let out = align_period(
            &[report(4, 1_000_000, &[10]), report(2, 1_000_000, &[10])],
            1e6,
        );
        assert_eq!(out[0].sensor_id, SensorId(2));
    }

    #[test]
    fn bad_entries_are_flagged_not_fatal() {
        let out = align_period(
            &[
                report(0, 1_000_000, &[10, 2_000_000]),
                report(1, 0, &[1]),
                report(2, 2_000_000, &[5]),
            ],
            1e6,
        );
        assert_eq!(out.len(), 4);
        assert!(out[0].is_usable());
        assert_eq!(out.iter().filter(|e| !e.is_usable()).count(), 3);
        assert!(out
            .iter()
            .any(|e| matches!(e.flag, Some(RetimeError::PeriodLengthMismatch { .. }))));
        assert!(out.iter().any(|e| e.flag == Some(RetimeError::ZeroCounter)));
    }

    #[test]
    fn pairwise_dt_examples() {
        let out = align_period(
            &[report(0, 1_000_000, &[2800]), report(1, 1_000_000, &[800])],
            1e6,
        );
        assert_eq!(pairwise_dt(&out, SensorId(0), SensorId(1)).unwrap(), 2000.0);
        assert_eq!(
            pairwise_dt(&out, SensorId(1), SensorId(0)).unwrap(),
            -2000.0
        );
        assert_eq!(pairwise_dt(&out, SensorId(0), SensorId(0)).unwrap(), 0.0);
        assert_eq!(
            pairwise_dt(&out, SensorId(0), SensorId(9)),
            Err(RetimeError::MissingSensor(SensorId(9)))
        );
    }

    #[test]
    fn clustering_splits_on_window_and_period() {
        let mut evs = align_period(
            &[
                report(0, 1_000_000, &[1000, 500_000]),
                report(1, 1_000_000, &[1500, 650_000]),
            ],
            1e6,
        );
        let mut other = evs[0];
        other.period_index = 4;
        evs.push(other);
        let clusters = cluster_events(&evs, DEFAULT_COINCIDENCE_WINDOW_US);
        let sizes: Vec<usize> = clusters.iter().map(|c| c.events.len()).collect();
        assert_eq!(sizes, vec![2, 1, 1, 1]);
        assert_eq!(
            clusters[0].first_arrivals(),
            vec![(SensorId(0), 1000.0), (SensorId(1), 1500.0)]
        );
        assert_eq!(clusters[3].period_index, 4);
    }

    proptest! {
        #[test]
        fn monotone_in_event(ti in 1u64..10_000_000, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-6);
            let t = ti as f64;
            prop_assert!(retime(lo * t, t, 1e6).unwrap() < retime(hi * t, t, 1e6).unwrap());
        }

        #[test]
        fn scale_invariant(ev in 0u64..1_000_000, extra in 0u64..1_000_000, k in 1u64..1000) {
            let ti = ev + extra + 1;
            let base = retime(ev as f64, ti as f64, 1e6).unwrap();
            let scaled = retime((ev * k) as f64, (ti * k) as f64, 1e6).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-9 * base.max(1.0));
        }

        #[test]
        fn retimed_within_period(ti in 1u64..10_000_000, frac in 0.0f64..=1.0) {
            let ev = (frac * ti as f64).floor();
            let r = retime(ev, ti as f64, 1e6).unwrap();
            prop_assert!((0.0..=1e6 + 1.0).contains(&r));
        }
    }
}
