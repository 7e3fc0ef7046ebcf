//! Deterministic discrete-event run of a whole scenario: sensors, radio
//! links and supervisor driven from one [`EventQueue`].

use std::collections::HashMap;

use log::{debug, info};
use thiserror::Error;

use crate::clock::ClockError;
use crate::node::{physical_arrivals, EventSource, SensorNode, SupervisorNode, WaveOutcome};
use crate::protocol::{decode_sync, encode_report, encode_sync, WireError};
use crate::report::{DetectionRow, EstimateRow, RetimedRow, RunReport, Summary};
use crate::scenario::{Scenario, ScenarioError};
use crate::transport::{EventKind, EventQueue, NodeId, TransportError};
use crate::wave::SensorId;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Clock(#[from] ClockError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone)]
enum SimEvent {
    Broadcast,
    SyncArrives { sensor: usize, bytes: Vec<u8> },
    Wave(usize),
    ReportArrives { bytes: Vec<u8>, events: u64 },
    Timeout,
}

/// Ground truth of every reported event, keyed the way the supervisor sees it.
pub type TruthMap = HashMap<(SensorId, u32, u64), EventSource>;

/// Runs `scenario` to its run duration and collects every output table.
pub fn run(scenario: &Scenario) -> Result<RunReport, SimError> {
    scenario.validate()?;
    let model = scenario.network_model()?;
    model.validate()?;
    let mut sensors = SensorNode::for_scenario(scenario)?;
    let mut supervisor = SupervisorNode::for_scenario(scenario)?;
    let arrivals = physical_arrivals(scenario)?;
    let end_us = scenario.run_duration();
    let start_us = scenario.sync_protocol.start_us;

    let index_of: HashMap<SensorId, usize> = sensors
        .iter()
        .enumerate()
        .map(|(i, s)| (s.sensor_id(), i))
        .collect();

    let mut queue: EventQueue<SimEvent> = EventQueue::new(start_us.min(0.0));
    queue.schedule(start_us, EventKind::BroadcastTimer, 0, SimEvent::Broadcast);
    for (i, a) in arrivals.iter().enumerate() {
        queue.schedule(
            a.detected_ref_us,
            EventKind::Detection,
            a.sensor_id.0,
            SimEvent::Wave(i),
        );
    }

    let mut summary = Summary::default();
    let mut detections = Vec::new();
    let mut truth = TruthMap::new();

    while let Some(ev) = queue.pop_until(end_us) {
        let now = ev.at_us;
        match ev.payload {
            SimEvent::Broadcast => {
                if let Some(frame) = supervisor.tick(now) {
                    let bytes = encode_sync(&frame);
                    summary.sync_messages += 1;
                    let deliveries = model.broadcast(&bytes, frame.period_index, now);
                    summary.sync_messages_dropped += (sensors.len() - deliveries.len()) as u64;
                    for d in deliveries {
                        let NodeId::Sensor(id) = d.destination else {
                            continue;
                        };
                        queue.schedule(
                            d.deliver_at_us,
                            EventKind::SyncDelivery,
                            id.0,
                            SimEvent::SyncArrives {
                                sensor: index_of[&id],
                                bytes: d.message,
                            },
                        );
                    }
                    if let Some(deadline) = supervisor.state().next_deadline() {
                        queue.schedule(
                            deadline.max(now),
                            EventKind::CompletionTimeout,
                            0,
                            SimEvent::Timeout,
                        );
                    }
                }
                let next = supervisor.state().next_broadcast_at();
                queue.schedule(
                    next.max(now),
                    EventKind::BroadcastTimer,
                    0,
                    SimEvent::Broadcast,
                );
            }
            SimEvent::SyncArrives { sensor, bytes } => {
                let frame = decode_sync(&bytes)?;
                let node = &mut sensors[sensor];
                let (outcome, sources) = node.on_sync(now, &frame)?;
                if outcome.diagnostic.is_some() {
                    summary.sync_diagnostics += 1;
                }
                let Some(report) = outcome.report else {
                    continue;
                };
                let n = report.events.len() as u64;
                let encoded = match encode_report(&report) {
                    Ok(b) => b,
                    Err(WireError::TooManyEvents(_)) => {
                        summary.events_oversize += n;
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                };
                for (event, source) in report.events.iter().zip(sources) {
                    truth.insert(
                        (
                            report.sensor_id,
                            report.period_index,
                            event.local_timestamp_ticks,
                        ),
                        source,
                    );
                }
                summary.report_messages += 1;
                summary.events_reported += n;
                match model.unicast_report(encoded, report.sensor_id, frame.period_index, now)? {
                    Some(d) => queue.schedule(
                        d.deliver_at_us,
                        EventKind::ReportDelivery,
                        report.sensor_id.0,
                        SimEvent::ReportArrives {
                            bytes: d.message,
                            events: n,
                        },
                    ),
                    None => {
                        summary.report_messages_dropped += 1;
                        summary.events_dropped += n;
                    }
                }
            }
            SimEvent::Wave(i) => {
                let a = &arrivals[i];
                let node = &mut sensors[index_of[&a.sensor_id]];
                let outcome = node.on_wave(now, a.amplitude_g, a.source)?;
                let (ticks, period, absorbed) = match outcome {
                    WaveOutcome::Stamped {
                        local_timestamp_ticks,
                        period_index,
                    } => {
                        summary.detections += 1;
                        (Some(local_timestamp_ticks), period_index, false)
                    }
                    WaveOutcome::Absorbed => {
                        summary.absorbed_crossings += 1;
                        (None, None, true)
                    }
                };
                detections.push(DetectionRow {
                    sensor_id: a.sensor_id.0,
                    source: a.source.to_string(),
                    arrival_ref_us: a.arrival_ref_us,
                    detected_ref_us: a.detected_ref_us,
                    local_timestamp_ticks: ticks,
                    period_index: period,
                    max_amplitude_g: a.amplitude_g,
                    absorbed,
                });
            }
            SimEvent::ReportArrives { bytes, events } => {
                summary.events_received += events;
                // the sim only ever carries well-formed reports
                let _ = supervisor.on_report_bytes(&bytes);
            }
            SimEvent::Timeout => supervisor.poll_timeouts(now),
        }
    }

    while let Some(ev) = queue.pop() {
        if let SimEvent::ReportArrives { events, .. } = ev.payload {
            summary.events_in_flight_at_end += events;
        }
    }
    summary.events_pending_at_end = sensors.iter().map(|s| s.pending_count() as u64).sum();
    supervisor.finish();
    debug!("dispatched {} events", queue.dispatched());

    let report = collect(scenario, &supervisor, Some(&truth), detections, summary);
    info!(
        "run finished: {} estimates, mean abs error {:?} m",
        report.summary.estimates, report.summary.mean_abs_error_m
    );
    Ok(report)
}

/// Builds the output tables from a finished supervisor. Without `truth`,
/// estimates stay unmatched to ruptures.
pub fn collect(
    scenario: &Scenario,
    supervisor: &SupervisorNode,
    truth: Option<&TruthMap>,
    detections: Vec<DetectionRow>,
    mut summary: Summary,
) -> RunReport {
    let source_of = |sensor: SensorId, period: u32, ticks: u64| {
        truth.and_then(|t| t.get(&(sensor, period, ticks)).copied())
    };
    let retimed: Vec<RetimedRow> = supervisor
        .retimed()
        .iter()
        .map(|e| RetimedRow {
            period_index: e.period_index,
            sensor_id: e.sensor_id.0,
            raw_local_ticks: e.raw_local_ticks,
            saved_counter: e.saved_counter,
            retimed_us: e.is_usable().then_some(e.retimed_us),
            max_amplitude_g: e.max_amplitude_g,
            flag: e.flag.map(|f| format!("{f:?}")).unwrap_or_default(),
            source: source_of(e.sensor_id, e.period_index, e.raw_local_ticks)
                .map(|s| s.to_string())
                .unwrap_or_default(),
        })
        .collect();

    let mut estimates = Vec::new();
    for ce in supervisor.estimates() {
        let mut votes: Vec<(EventSource, usize)> = Vec::new();
        for e in &ce.cluster.events {
            if let Some(src) = source_of(e.sensor_id, e.period_index, e.raw_local_ticks) {
                match votes.iter_mut().find(|(s, _)| *s == src) {
                    Some(v) => v.1 += 1,
                    None => votes.push((src, 1)),
                }
            }
        }
        // majority, ties to the smaller source
        votes.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let majority = votes.first().map(|v| v.0);
        let rupture_index = match majority {
            Some(EventSource::Rupture(i)) => Some(i),
            _ => None,
        };
        let x_true = rupture_index.map(|i| scenario.ruptures[i].position_m);
        let est = &ce.estimate;
        let error = x_true.zip(est.x_est_m).map(|(t, x)| (x - t).abs());
        estimates.push(EstimateRow {
            period_index: ce.period_index,
            cluster_index: ce.cluster_index,
            sensors: ce.cluster.first_arrivals().len(),
            rupture_index,
            x_true_m: x_true,
            x_est_m: est.x_est_m,
            v_est_m_s: est.v_est_m_s,
            error_m: error,
            s1: est.triple.map(|t| t.s1.0),
            s2: est.triple.map(|t| t.s2.0),
            s3: est.triple.map(|t| t.s3.0),
            flags: est.flags_label(),
            spurious: matches!(majority, Some(EventSource::Spurious(_))),
        });
    }

    let stats = supervisor.stats();
    summary.events_retimed = supervisor
        .retimed()
        .iter()
        .filter(|e| e.is_usable())
        .count() as u64;
    summary.events_flagged = supervisor.retimed().len() as u64 - summary.events_retimed;
    summary.pre_sync_events = stats.pre_sync_events;
    summary.late_events = stats.late_events;
    summary.duplicate_events = stats.duplicate_events;
    summary.periods_completed = stats.periods_completed;
    summary.periods_timed_out = stats.periods_timed_out;
    summary.estimates = estimates.len() as u64;
    summary.spurious_estimates = estimates.iter().filter(|e| e.spurious).count() as u64;
    let errors: Vec<f64> = estimates.iter().filter_map(|e| e.error_m).collect();
    if !errors.is_empty() {
        summary.mean_abs_error_m = Some(errors.iter().sum::<f64>() / errors.len() as f64);
        summary.max_abs_error_m = errors.iter().copied().reduce(f64::max);
    }

    RunReport {
        detections,
        retimed,
        estimates,
        summary,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::SpuriousEvent;
    use crate::wave::RuptureEvent;

    fn canonical() -> Scenario {
        let mut s = Scenario::uniform(4, 10.0);
        s.clock_model.drift_ppm = vec![37.0, -12.0, 50.0, -50.0];
        s.transport.processing_latency_jitter_us = 0.0;
        s.ruptures.push(RuptureEvent {
            position_m: 14.0,
            time_ref_us: 1_500_000.0,
            peak_amplitude_g: 2.0,
        });
        s
    }

    #[test]
    fn canonical_rupture_within_15_cm() {
        let r = run(&canonical()).unwrap();
        assert_eq!(r.estimates.len(), 1);
        let e = &r.estimates[0];
        assert_eq!(e.rupture_index, Some(0));
        assert_eq!(e.period_index, 1);
        assert_eq!((e.s1, e.s2, e.s3), (Some(0), Some(1), Some(2)));
        assert!(e.error_m.unwrap() <= 0.15, "{e:?}");
        assert!(e.flags.is_empty());
    }

    #[test]
    fn zero_drift_fine_sampling_is_nearly_exact() {
        let mut s = canonical();
        s.clock_model.drift_ppm = vec![0.0; 4];
        s.wave_detection.sampling_period_ticks = 1;
        let r = run(&s).unwrap();
        assert!(
            r.estimates[0].error_m.unwrap() <= 5e-3,
            "{:?}",
            r.estimates[0]
        );
    }

    #[test]
    fn quiet_run_completes_every_closed_period() {
        let mut s = Scenario::uniform(4, 10.0);
        s.run_duration_us = Some(5_000_000.0);
        let r = run(&s).unwrap();
        assert_eq!(r.summary.sync_messages, 6);
        // broadcasts 1..=5 close periods 0..=4; the one closed at t=5 s is
        // still collecting reports at the end
        assert_eq!(r.summary.periods_completed, 4);
        assert_eq!(r.summary.estimates, 0);
        assert!(r.detections.is_empty());
    }

    #[test]
    fn event_accounting_closes() {
        let mut s = canonical();
        s.transport.drop_probability = 0.2;
        s.transport.processing_latency_jitter_us = 1.0;
        s.seed = 11;
        for k in 0..20 {
            s.ruptures.push(RuptureEvent {
                position_m: 3.0 + f64::from(k % 7) * 3.5,
                time_ref_us: 200_000.0 + f64::from(k) * 370_000.0,
                peak_amplitude_g: 2.0,
            });
        }
        s.spurious_events.push(SpuriousEvent {
            sensor_id: 2,
            time_ref_us: 2_050_000.0,
            amplitude_g: 1.0,
        });
        let r = run(&s).unwrap();
        let m = &r.summary;
        assert!(m.detections > 0);
        assert_eq!(
            m.detections,
            m.events_reported + m.events_pending_at_end + m.events_oversize
        );
        assert_eq!(
            m.events_reported,
            m.events_received + m.events_dropped + m.events_in_flight_at_end
        );
        assert_eq!(
            m.events_received,
            m.events_retimed
                + m.events_flagged
                + m.pre_sync_events
                + m.late_events
                + m.duplicate_events
        );
    }

    #[test]
    fn reruns_are_identical() {
        let mut s = canonical();
        s.wave_detection.detection_jitter_us = 3.0;
        s.transport.processing_latency_jitter_us = 1.0;
        s.seed = 5;
        assert_eq!(run(&s).unwrap(), run(&s).unwrap());
    }

    #[test]
    fn pre_sync_detection_is_flushed_at_first_sync() {
        let mut s = canonical();
        s.sync_protocol.start_us = 100_000.0;
        s.ruptures[0].time_ref_us = 10_000.0;
        let r = run(&s).unwrap();
        assert_eq!(r.summary.pre_sync_events, 4);
        assert_eq!(r.summary.estimates, 0);
    }
}
