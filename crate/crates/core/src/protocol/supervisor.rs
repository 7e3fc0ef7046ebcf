//! Supervisor side: periodic sync broadcast and per-period report collection.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, warn};
use thiserror::Error;

use crate::wave::SensorId;

use super::wire::{SensorReport, SyncFrame};

/// Fraction of a period the supervisor waits, after broadcasting the sync
/// that closes a period, before releasing it incomplete.
pub const COMPLETION_TIMEOUT_FRACTION: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SupervisorError {
    #[error("report from sensor {0} which is not on the roster")]
    UnknownSensor(SensorId),
    #[error("sync period must be positive")]
    ZeroPeriod,
}

/// Report set of one period, released to retiming.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeriodReports {
    pub period_index: u32,
    pub period_t_us: u32,
    /// Sorted by sensor id.
    pub reports: Vec<SensorReport>,
    /// False when released by timeout with part of the roster missing.
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReportOutcome {
    Filed,
    Completed(PeriodReports),
    /// A report for this (sensor, period) was already filed; the new one is ignored.
    Duplicate,
    /// The period was already released; the report is discarded.
    Late(SensorReport),
    /// Detections from before the sensor's first sync; not retimeable.
    PreSync(SensorReport),
}

#[derive(Debug, Clone, Default)]
struct OpenPeriod {
    reports: BTreeMap<SensorId, SensorReport>,
    deadline_us: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SupervisorState {
    start_us: f64,
    period_t_us: u32,
    next_period_index: u32,
    roster: BTreeSet<SensorId>,
    open_periods: BTreeMap<u32, OpenPeriod>,
    released: BTreeSet<u32>,
}

impl SupervisorState {
    pub fn new(
        start_us: f64,
        period_t_us: u32,
        roster: impl IntoIterator<Item = SensorId>,
    ) -> Result<Self, SupervisorError> {
        if period_t_us == 0 {
            return Err(SupervisorError::ZeroPeriod);
        }
        Ok(Self {
            start_us,
            period_t_us,
            next_period_index: 0,
            roster: roster.into_iter().collect(),
            open_periods: BTreeMap::new(),
            released: BTreeSet::new(),
        })
    }

    pub fn period_t_us(&self) -> u32 {
        self.period_t_us
    }

    pub fn next_period_index(&self) -> u32 {
        self.next_period_index
    }

    pub fn roster(&self) -> &BTreeSet<SensorId> {
        &self.roster
    }

    /// Scheduled instant of broadcast `index`.
    pub fn broadcast_instant(&self, index: u32) -> f64 {
        self.start_us + f64::from(index) * f64::from(self.period_t_us)
    }

    pub fn next_broadcast_at(&self) -> f64 {
        self.broadcast_instant(self.next_period_index)
    }

    /// Emits a frame when `now_us` has reached the next scheduled broadcast.
    /// Missed schedule points are skipped, so at most one frame comes out
    /// per call and its index is the latest one due.
    pub fn tick(&mut self, now_us: f64) -> Option<SyncFrame> {
        if now_us < self.next_broadcast_at() {
            return None;
        }
        let due = ((now_us - self.start_us) / f64::from(self.period_t_us)).floor() as u32;
        let index = due.max(self.next_period_index);
        self.next_period_index = index + 1;
        if let Some(closing) = index.checked_sub(1) {
            if !self.released.contains(&closing) {
                let deadline = self.broadcast_instant(index)
                    + COMPLETION_TIMEOUT_FRACTION * f64::from(self.period_t_us);
                self.open_periods.entry(closing).or_default().deadline_us = Some(deadline);
            }
        }
        Some(SyncFrame {
            period_index: index,
            period_t_us: self.period_t_us,
        })
    }

    pub fn on_report(&mut self, report: SensorReport) -> Result<ReportOutcome, SupervisorError> {
        if !self.roster.contains(&report.sensor_id) {
            warn!("rejecting report from unknown sensor {}", report.sensor_id);
            return Err(SupervisorError::UnknownSensor(report.sensor_id));
        }
        if report.is_pre_sync() {
            debug!(
                "sensor {} flushed {} pre-sync events",
                report.sensor_id,
                report.events.len()
            );
            return Ok(ReportOutcome::PreSync(report));
        }
        let index = report.period_index;
        if self.released.contains(&index) {
            warn!(
                "late report from sensor {} for released period {index}",
                report.sensor_id
            );
            return Ok(ReportOutcome::Late(report));
        }
        let period = self.open_periods.entry(index).or_default();
        if period.reports.contains_key(&report.sensor_id) {
            warn!(
                "duplicate report from sensor {} for period {index}",
                report.sensor_id
            );
            return Ok(ReportOutcome::Duplicate);
        }
        period.reports.insert(report.sensor_id, report);
        if period.reports.len() == self.roster.len() {
            return Ok(ReportOutcome::Completed(self.release(index, true)));
        }
        Ok(ReportOutcome::Filed)
    }

    /// Releases, incomplete, every period whose deadline is at or before `now_us`.
    pub fn poll_timeouts(&mut self, now_us: f64) -> Vec<PeriodReports> {
        let expired: Vec<u32> = self
            .open_periods
            .iter()
            .filter(|(_, p)| p.deadline_us.is_some_and(|d| d <= now_us))
            .map(|(&i, _)| i)
            .collect();
        expired
            .into_iter()
            .map(|i| {
                warn!("period {i} timed out before all sensors reported");
                self.release(i, false)
            })
            .collect()
    }

    /// Earliest pending completion deadline.
    pub fn next_deadline(&self) -> Option<f64> {
        self.open_periods
            .values()
            .filter_map(|p| p.deadline_us)
            .min_by(f64::total_cmp)
    }

    /// Releases every still-open period, e.g. at the end of a run.
    pub fn drain(&mut self) -> Vec<PeriodReports> {
        let open: Vec<u32> = self.open_periods.keys().copied().collect();
        open.into_iter().map(|i| self.release(i, false)).collect()
    }

    pub fn released_count(&self) -> usize {
        self.released.len()
    }

    fn release(&mut self, index: u32, complete: bool) -> PeriodReports {
        let period = self.open_periods.remove(&index).unwrap_or_default();
        self.released.insert(index);
        PeriodReports {
            period_index: index,
            period_t_us: self.period_t_us,
            reports: period.reports.into_values().collect(),
            complete,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::wire::PRE_SYNC_PERIOD;

    const T: u32 = 1_000_000;

    fn report(id: u16, period: u32) -> SensorReport {
        SensorReport {
            sensor_id: SensorId(id),
            period_index: period,
            saved_counter: u64::from(T),
            events: vec![],
        }
    }

    fn two() -> SupervisorState {
        SupervisorState::new(0.0, T, [SensorId(0), SensorId(1)]).unwrap()
    }

    #[test]
    fn no_frame_before_schedule() {
        let mut s = SupervisorState::new(100.0, T, [SensorId(0)]).unwrap();
        assert_eq!(s.tick(99.0), None);
        assert_eq!(s.tick(100.0).unwrap().period_index, 0);
    }

    #[test]
    fn frame_at_exact_schedule_point() {
        let mut s = two();
        assert_eq!(s.tick(0.0).unwrap().period_index, 0);
        assert_eq!(s.tick(1e6).unwrap().period_index, 1);
        let f = s.tick(2e6).unwrap();
        assert_eq!(f.period_index, 2);
        assert_eq!(f.period_t_us, T);
        // fresh supervisor jumping straight to 2T
        assert_eq!(two().tick(2e6).unwrap().period_index, 2);
    }

    #[test]
    fn at_most_one_frame_per_period() {
        let mut s = two();
        assert!(s.tick(0.0).is_some());
        assert!(s.tick(10.0).is_none());
        assert!(s.tick(999_999.0).is_none());
    }

    #[test]
    fn roster_completion() {
        let mut s = two();
        assert_eq!(s.on_report(report(0, 5)).unwrap(), ReportOutcome::Filed);
        match s.on_report(report(1, 5)).unwrap() {
            ReportOutcome::Completed(p) => {
                assert_eq!(p.period_index, 5);
                assert!(p.complete);
                assert_eq!(p.reports.len(), 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn completion_is_order_independent() {
        let mut a = two();
        a.on_report(report(1, 5)).unwrap();
        let ReportOutcome::Completed(pa) = a.on_report(report(0, 5)).unwrap() else {
            panic!()
        };
        let mut b = two();
        b.on_report(report(0, 5)).unwrap();
        let ReportOutcome::Completed(pb) = b.on_report(report(1, 5)).unwrap() else {
            panic!()
        };
        assert_eq!(pa, pb);
    }

    #[test]
    fn duplicates_ignored() {
        let mut s = two();
        s.on_report(report(0, 5)).unwrap();
        assert_eq!(s.on_report(report(0, 5)).unwrap(), ReportOutcome::Duplicate);
        assert!(matches!(
            s.on_report(report(1, 5)).unwrap(),
            ReportOutcome::Completed(_)
        ));
        // after release a repeat is late, never a second completion
        assert!(matches!(
            s.on_report(report(1, 5)).unwrap(),
            ReportOutcome::Late(_)
        ));
    }

    #[test]
    fn unknown_sensor_rejected() {
        let mut s = two();
        assert_eq!(
            s.on_report(report(7, 5)),
            Err(SupervisorError::UnknownSensor(SensorId(7)))
        );
    }

    #[test]
    fn pre_sync_reports_are_not_filed() {
        let mut s = two();
        let r = report(0, PRE_SYNC_PERIOD);
        assert_eq!(s.on_report(r.clone()).unwrap(), ReportOutcome::PreSync(r));
        assert!(s.drain().is_empty());
    }

    #[test]
    fn timeout_half_period_after_closing_sync() {
        let mut s = two();
        s.tick(0.0);
        s.on_report(report(0, 0)).unwrap();
        s.tick(1e6);
        assert_eq!(s.next_deadline(), Some(1.5e6));
        assert!(s.poll_timeouts(1.4e6).is_empty());
        let out = s.poll_timeouts(1.5e6);
        assert_eq!(out.len(), 1);
        assert!(!out[0].complete);
        assert_eq!(out[0].reports.len(), 1);
        assert!(matches!(
            s.on_report(report(1, 0)).unwrap(),
            ReportOutcome::Late(_)
        ));
    }

    #[test]
    fn zero_period_rejected() {
        assert!(SupervisorState::new(0.0, 0, [SensorId(0)]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn broadcast_schedule_never_drifts(start in 0.0f64..1e6, t in 1000u32..5_000_000, steps in prop::collection::vec(1.0f64..3e5, 1..200)) {
                let mut s = SupervisorState::new(start, t, [SensorId(0)]).unwrap();
                let mut now = start;
                let mut frames = 0u64;
                let mut last: Option<u32> = None;
                // ticking at every scheduled instant and in between
                loop {
                    while s.next_broadcast_at() <= now {
                        let at = s.next_broadcast_at();
                        let f = s.tick(at).unwrap();
                        prop_assert!(last.is_none_or(|l| f.period_index > l));
                        last = Some(f.period_index);
                        frames += 1;
                    }
                    prop_assert!(s.tick(now).is_none());
                    let expected = ((now - start) / f64::from(t)).floor() as u64 + 1;
                    prop_assert_eq!(frames, expected);
                    if frames > 50 { break; }
                    match steps.get(frames as usize % steps.len()) {
                        Some(d) => now += d,
                        None => break,
                    }
                }
            }
        }
    }
}
