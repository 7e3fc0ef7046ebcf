//! Sensor and supervisor nodes: the protocol state machines plus the local
//! processing around them. The simulator and the live datagram adapter
//! drive the same nodes, so both produce identical message bytes.

use std::fmt;

use log::{debug, warn};
use rand::Rng;

use crate::clock::{ClockError, ClockState};
use crate::localization::{localize, RuptureEstimate};
use crate::protocol::{
    decode_report, PeriodReports, ReportOutcome, SensorReport, SensorSyncState, SupervisorError,
    SupervisorState, SyncFrame, SyncOutcome, WireError,
};
use crate::retiming::{align_released, cluster_events, EventCluster, RetimedEvent};
use crate::rng::keyed_rng;
use crate::scenario::{Scenario, ScenarioError};
use crate::wave::{detect, quantize_to_sampling, simulate_rupture, SensorId, WaveError};

/// Ground-truth origin of a threshold crossing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventSource {
    Rupture(usize),
    Spurious(usize),
}

impl fmt::Display for EventSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventSource::Rupture(i) => write!(f, "rupture:{i}"),
            EventSource::Spurious(i) => write!(f, "spurious:{i}"),
        }
    }
}

/// A wave front (or spurious crossing) above threshold at one sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalArrival {
    pub sensor_id: SensorId,
    /// True arrival of the front.
    pub arrival_ref_us: f64,
    /// Instant the detector fires, arrival plus detection noise.
    pub detected_ref_us: f64,
    pub amplitude_g: f64,
    pub source: EventSource,
}

const KIND_DETECTION_NOISE: u64 = 3;

/// Every above-threshold arrival a scenario produces, ordered by detection
/// instant then sensor id.
pub fn physical_arrivals(scenario: &Scenario) -> Result<Vec<PhysicalArrival>, ScenarioError> {
    let geom = scenario.cable_geometry()?;
    let detector = scenario.detector();
    let jitter = scenario.wave_detection.detection_jitter_us;
    let noise = |source_key: u64, sensor: SensorId| {
        if jitter > 0.0 {
            keyed_rng(
                scenario.seed,
                &[KIND_DETECTION_NOISE, source_key, u64::from(sensor.0)],
            )
            .random_range(-jitter..=jitter)
        } else {
            0.0
        }
    };
    let invalid = |e: WaveError| ScenarioError::Invalid(vec![e.to_string()]);

    let mut out = Vec::new();
    for (i, rupture) in scenario.ruptures.iter().enumerate() {
        let records = simulate_rupture(
            &geom,
            rupture,
            scenario.wave_detection.wave_speed_m_s,
            &detector,
            scenario.attenuation(),
        )
        .map_err(invalid)?;
        for rec in records {
            out.push(PhysicalArrival {
                sensor_id: rec.sensor_id,
                arrival_ref_us: rec.arrival_ref_us,
                detected_ref_us: (rec.arrival_ref_us + noise(i as u64, rec.sensor_id)).max(0.0),
                amplitude_g: rec.max_amplitude_g,
                source: EventSource::Rupture(i),
            });
        }
    }
    for (i, ev) in scenario.spurious_events.iter().enumerate() {
        let sensor = SensorId(ev.sensor_id);
        if let Some(rec) = detect(sensor, ev.time_ref_us, ev.amplitude_g, &detector) {
            out.push(PhysicalArrival {
                sensor_id: sensor,
                arrival_ref_us: rec.arrival_ref_us,
                detected_ref_us: rec.arrival_ref_us,
                amplitude_g: rec.max_amplitude_g,
                source: EventSource::Spurious(i),
            });
        }
    }
    out.sort_by(|a, b| {
        a.detected_ref_us
            .total_cmp(&b.detected_ref_us)
            .then(a.sensor_id.cmp(&b.sensor_id))
    });
    Ok(out)
}

pub fn to_milli_g(g: f64) -> u32 {
    (g * 1000.0).round().clamp(0.0, f64::from(u32::MAX)) as u32
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WaveOutcome {
    Stamped {
        local_timestamp_ticks: u64,
        /// `None` before the first sync.
        period_index: Option<u32>,
    },
    /// Fell inside the capture window of the previous detection.
    Absorbed,
}

/// A sensor: drifting clock, sampled detector, and the sync state machine.
#[derive(Debug, Clone)]
pub struct SensorNode {
    state: SensorSyncState,
    sampling_period_ticks: u64,
    window_us: f64,
    window_open_until: Option<f64>,
    pending_sources: Vec<EventSource>,
}

impl SensorNode {
    pub fn new(
        sensor_id: SensorId,
        drift_ppm: f64,
        sampling_period_ticks: u64,
        window_us: f64,
    ) -> Result<Self, ClockError> {
        Ok(Self {
            state: SensorSyncState::new(sensor_id, ClockState::new(drift_ppm)?),
            sampling_period_ticks,
            window_us,
            window_open_until: None,
            pending_sources: Vec::new(),
        })
    }

    pub fn for_scenario(scenario: &Scenario) -> Result<Vec<SensorNode>, ScenarioError> {
        scenario
            .sensor_ids()
            .into_iter()
            .enumerate()
            .map(|(i, id)| {
                SensorNode::new(
                    id,
                    scenario.drift_of(i),
                    scenario.wave_detection.sampling_period_ticks,
                    scenario.wave_detection.window_us,
                )
                .map_err(|e| ScenarioError::Invalid(vec![e.to_string()]))
            })
            .collect()
    }

    pub fn sensor_id(&self) -> SensorId {
        self.state.sensor_id()
    }

    pub fn state(&self) -> &SensorSyncState {
        &self.state
    }

    pub fn on_wave(
        &mut self,
        at_ref_us: f64,
        amplitude_g: f64,
        source: EventSource,
    ) -> Result<WaveOutcome, ClockError> {
        self.state.clock_mut().advance_to(at_ref_us)?;
        if self
            .window_open_until
            .is_some_and(|until| at_ref_us <= until)
        {
            self.state.raise_last_amplitude(to_milli_g(amplitude_g));
            return Ok(WaveOutcome::Absorbed);
        }
        self.window_open_until = Some(at_ref_us + self.window_us);
        let stamp = quantize_to_sampling(
            self.state.clock().read_counter(),
            self.sampling_period_ticks,
        );
        self.state.on_detection(stamp, to_milli_g(amplitude_g));
        self.pending_sources.push(source);
        Ok(WaveOutcome::Stamped {
            local_timestamp_ticks: stamp,
            period_index: self.state.open_period(),
        })
    }

    /// Handles a sync received at `at_ref_us`. The returned sources line up
    /// with the events of the emitted report.
    pub fn on_sync(
        &mut self,
        at_ref_us: f64,
        frame: &SyncFrame,
    ) -> Result<(SyncOutcome, Vec<EventSource>), ClockError> {
        self.state.clock_mut().advance_to(at_ref_us)?;
        let latch = self.state.clock().whole_ticks();
        let (reported, carried): (Vec<_>, Vec<_>) = self
            .state
            .pending_events()
            .iter()
            .map(|ev| ev.local_timestamp_ticks)
            .zip(self.pending_sources.drain(..))
            .partition(|&(stamp, _)| stamp <= latch);
        self.pending_sources = carried.into_iter().map(|(_, s)| s).collect();
        let outcome = self.state.on_sync(frame);
        if let Some(d) = outcome.diagnostic {
            warn!("sensor {}: {d:?}", self.sensor_id());
        }
        let sources = if outcome.report.is_some() {
            reported.into_iter().map(|(_, s)| s).collect()
        } else {
            Vec::new()
        };
        Ok((outcome, sources))
    }

    pub fn pending_count(&self) -> usize {
        self.state.pending_events().len()
    }
}

/// One localized cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterEstimate {
    pub period_index: u32,
    pub cluster_index: usize,
    pub cluster: EventCluster,
    pub estimate: RuptureEstimate,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SupervisorStats {
    pub reports_received: u64,
    pub events_received: u64,
    pub pre_sync_events: u64,
    pub late_events: u64,
    pub duplicate_events: u64,
    pub rejected_reports: u64,
    pub malformed_reports: u64,
    pub periods_completed: u64,
    pub periods_timed_out: u64,
}

/// The supervisor: sync schedule, report collection, retiming, clustering
/// and localization.
#[derive(Debug, Clone)]
pub struct SupervisorNode {
    state: SupervisorState,
    geometry: crate::wave::CableGeometry,
    coincidence_window_us: f64,
    retimed: Vec<RetimedEvent>,
    estimates: Vec<ClusterEstimate>,
    stats: SupervisorStats,
}

impl SupervisorNode {
    pub fn for_scenario(scenario: &Scenario) -> Result<Self, ScenarioError> {
        let geometry = scenario.cable_geometry()?;
        let state = SupervisorState::new(
            scenario.sync_protocol.start_us,
            scenario.sync_protocol.sync_period_t_us,
            geometry.ids().iter().copied(),
        )
        .map_err(|e| ScenarioError::Invalid(vec![e.to_string()]))?;
        Ok(Self {
            state,
            geometry,
            coincidence_window_us: scenario.sync_protocol.coincidence_window_us,
            retimed: Vec::new(),
            estimates: Vec::new(),
            stats: SupervisorStats::default(),
        })
    }

    pub fn state(&self) -> &SupervisorState {
        &self.state
    }

    pub fn retimed(&self) -> &[RetimedEvent] {
        &self.retimed
    }

    pub fn estimates(&self) -> &[ClusterEstimate] {
        &self.estimates
    }

    pub fn stats(&self) -> &SupervisorStats {
        &self.stats
    }

    pub fn tick(&mut self, now_us: f64) -> Option<SyncFrame> {
        self.state.tick(now_us)
    }

    pub fn on_report_bytes(&mut self, bytes: &[u8]) -> Result<(), WireError> {
        match decode_report(bytes) {
            Ok(report) => {
                self.on_report(report);
                Ok(())
            }
            Err(e) => {
                warn!("malformed report: {e}");
                self.stats.malformed_reports += 1;
                Err(e)
            }
        }
    }

    pub fn on_report(&mut self, report: SensorReport) {
        self.stats.reports_received += 1;
        let n = report.events.len() as u64;
        match self.state.on_report(report) {
            Ok(ReportOutcome::Filed) => self.stats.events_received += n,
            Ok(ReportOutcome::Completed(period)) => {
                self.stats.events_received += n;
                self.release(period);
            }
            Ok(ReportOutcome::Duplicate) => self.stats.duplicate_events += n,
            Ok(ReportOutcome::Late(_)) => self.stats.late_events += n,
            Ok(ReportOutcome::PreSync(_)) => self.stats.pre_sync_events += n,
            Err(SupervisorError::UnknownSensor(_)) | Err(SupervisorError::ZeroPeriod) => {
                self.stats.rejected_reports += 1
            }
        }
    }

    pub fn poll_timeouts(&mut self, now_us: f64) {
        for period in self.state.poll_timeouts(now_us) {
            self.release(period);
        }
    }

    /// Releases whatever is still open.
    pub fn finish(&mut self) {
        for period in self.state.drain() {
            self.release(period);
        }
    }

    fn release(&mut self, period: PeriodReports) {
        if period.complete {
            self.stats.periods_completed += 1;
        } else {
            self.stats.periods_timed_out += 1;
        }
        debug!(
            "period {} released with {} reports",
            period.period_index,
            period.reports.len()
        );
        let aligned = align_released(&period);
        for (i, cluster) in cluster_events(&aligned, self.coincidence_window_us)
            .into_iter()
            .enumerate()
        {
            let estimate = localize(&cluster, &self.geometry);
            self.estimates.push(ClusterEstimate {
                period_index: period.period_index,
                cluster_index: i,
                cluster,
                estimate,
            });
        }
        self.retimed.extend(aligned);
    }
}
