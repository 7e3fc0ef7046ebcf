//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::thread;
use std::time::{Duration, Instant};

use cablesync::clock::ClockState;
use cablesync::localization::localize_arrivals;
use cablesync::montecarlo::{run_trials, TrialSettings};
use cablesync::protocol::{
    decode_report, decode_sync, encode_report, encode_sync, ReportedEvent, SensorReport, SyncFrame,
    WireError,
};
use cablesync::retiming::retime;
use cablesync::transport::live::{LiveAgent, LiveSupervisor};
use cablesync::transport::{NetworkModel, NodeId};
use cablesync::{load_scenario, sim, CableGeometry, Scenario, SensorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rf_skew() -> Outcome {
    let geom = CableGeometry::new(vec![SensorId(0), SensorId(1)], vec![0.0, 1080.0]).unwrap();
    let model = NetworkModel::for_geometry(&geom, 0);
    let d = model
        .propagation_delay(NodeId::Sensor(SensorId(0)), NodeId::Sensor(SensorId(1)))
        .unwrap();
    let rel = ((d - 6.0) / 6.0).abs();
    check(
        rel <= 1e-12,
        format!("1080 m -> {d:.9} us, relative error {rel:e}"),
    )
}

fn accuracy_envelope() -> Outcome {
    let base = Scenario::uniform(4, 10.0);
    let settings = TrialSettings {
        trials: 1000,
        jitter_us: 3.0,
        drift_ppm: 50.0,
        seed: 2024,
    };
    let started = Instant::now();
    let s = run_trials(&base, &settings).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    check(
        s.p99_m <= 0.15 && secs < 10.0,
        format!(
            "p50 {:.4} m, p99 {:.4} m, max {:.4} m, {} failed, {secs:.2} s",
            s.p50_m, s.p99_m, s.max_m, s.failed
        ),
    )
}

/// Retimed value of an event at `event_us` for a clock that receives one
/// sync at `sync_us` and the next at `next_us`.
fn retimed(
    drift: f64,
    warmup_us: f64,
    sync_us: f64,
    event_us: f64,
    next_us: f64,
    period_us: f64,
) -> f64 {
    let mut c = ClockState::new(drift).unwrap();
    c.advance_to(warmup_us).unwrap();
    c.advance_to(sync_us).unwrap();
    c.save_and_reset();
    c.advance_to(event_us).unwrap();
    let stamp = c.read_counter();
    c.advance_to(next_us).unwrap();
    let counter = c.save_and_reset();
    retime(stamp, counter, period_us).unwrap()
}

fn ratiometric_cancellation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = 1e6;
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let sync = rng.random_range(0.0..1e7);
        let event = sync + rng.random_range(0.0..t);
        let a = retimed(
            rng.random_range(-50.0..=50.0),
            sync / 2.0,
            sync,
            event,
            sync + t,
            t,
        );
        let b = retimed(
            rng.random_range(-50.0..=50.0),
            sync / 3.0,
            sync,
            event,
            sync + t,
            t,
        );
        worst = worst.max((a - b).abs());
    }
    check(
        worst <= 0.01,
        format!("worst pairwise discrepancy {worst:e} us over 10000 cases"),
    )
}

fn drift_necessity() -> Outcome {
    let mut fast = ClockState::new(50.0).unwrap();
    let mut slow = ClockState::new(-50.0).unwrap();
    fast.advance(1e6).unwrap();
    slow.advance(1e6).unwrap();
    let gap = fast.read_counter() - slow.read_counter();
    check(
        (gap - 100.0).abs() <= 0.1,
        format!("raw counters disagree by {gap:.6} us after 1 s"),
    )
}

fn exact_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_x, mut worst_v): (f64, f64) = (0.0, 0.0);
    let mut cases = 0;
    while cases < 10_000 {
        let n = rng.random_range(3..9);
        let mut positions: Vec<f64> = vec![rng.random_range(-100.0..100.0)];
        for _ in 1..n {
            let last = *positions.last().unwrap();
            positions.push(last + rng.random_range(1.0..50.0));
        }
        let span = rng.random_range(0..n - 1);
        let x = positions[span]
            + rng.random_range(0.01..0.99) * (positions[span + 1] - positions[span]);
        // the two nearest sensors must straddle the rupture
        let mut by_distance: Vec<usize> = (0..n).collect();
        by_distance.sort_by(|&a, &b| {
            (positions[a] - x)
                .abs()
                .total_cmp(&(positions[b] - x).abs())
        });
        let mut nearest = [by_distance[0], by_distance[1]];
        nearest.sort();
        if nearest != [span, span + 1] {
            continue;
        }
        cases += 1;
        let v = rng.random_range(500.0..8000.0);
        let t0 = rng.random_range(0.0..1e6);
        let geom =
            CableGeometry::new((0..n as u16).map(SensorId).collect(), positions.clone()).unwrap();
        let arrivals: Vec<(SensorId, f64)> = positions
            .iter()
            .enumerate()
            .map(|(i, p)| (SensorId(i as u16), t0 + (p - x).abs() / v * 1e6))
            .collect();
        let est = localize_arrivals(&arrivals, &geom);
        let (Some(xe), Some(ve)) = (est.x_est_m, est.v_est_m_s) else {
            return Err(format!(
                "no estimate for x = {x}, v = {v}: {}",
                est.flags_label()
            ));
        };
        let scale = x.abs().max(positions[n - 1] - positions[0]);
        worst_x = worst_x.max((xe - x).abs() / scale);
        worst_v = worst_v.max((ve - v).abs() / v);
    }
    check(
        worst_x <= 1e-9 && worst_v <= 1e-9,
        format!("worst relative error x {worst_x:e}, v {worst_v:e} over 10000 cases"),
    )
}

/// Steps a clock through many uneven increments rather than one jump.
fn brute_force_counter(c: &mut ClockState, to_us: f64, rng: &mut ChaCha8Rng) {
    let from = c.ref_time_us();
    let steps = 64;
    let mut cuts: Vec<f64> = (0..steps - 1)
        .map(|_| rng.random_range(from..=to_us))
        .collect();
    cuts.sort_by(f64::total_cmp);
    for cut in cuts {
        c.advance_to(cut).unwrap();
    }
    c.advance_to(to_us).unwrap();
}

fn receipt_skew_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let t = 1e6;
    let mut worst_margin = f64::INFINITY;
    for case in 0..1000 {
        let delta = if case == 0 {
            0.0
        } else {
            rng.random_range(0.0..=6.0)
        };
        let base_latency = 20.0;
        let sync = 1e6 * f64::from(rng.random_range(1..5u32));
        let event = sync
            + base_latency
            + delta
            + rng.random_range(0.0..t - 2.0 * delta - 2.0 * base_latency);
        let mut values = [0.0; 2];
        for v in &mut values {
            let drift = rng.random_range(-50.0..=50.0);
            let start_skew = rng.random_range(0.0..=delta);
            let end_skew = rng.random_range(0.0..=delta);
            let mut c = ClockState::new(drift).unwrap();
            brute_force_counter(&mut c, sync + base_latency + start_skew, &mut rng);
            c.save_and_reset();
            brute_force_counter(&mut c, event, &mut rng);
            let stamp = c.read_counter();
            brute_force_counter(&mut c, sync + t + base_latency + end_skew, &mut rng);
            let counter = c.save_and_reset();
            *v = retime(stamp, counter, t).unwrap();
        }
        let discrepancy = (values[0] - values[1]).abs();
        worst_margin = worst_margin.min(2.0 * delta + 0.01 - discrepancy);
    }
    check(
        worst_margin >= 0.0,
        format!("smallest margin to 2*delta + 0.01 us: {worst_margin:.6} us over 1000 cases"),
    )
}

fn live_equivalence() -> Outcome {
    let mut scenario =
        load_scenario(scenarios_dir().join("canonical.toml")).map_err(|e| e.to_string())?;
    let periods = 5;
    let loopback: SocketAddr = "127.0.0.1:0".parse().unwrap();
    let mut agents = Vec::new();
    let mut targets = Vec::new();
    for id in scenario.sensor_ids() {
        let agent = LiveAgent::bind(&scenario, id, loopback, None).map_err(|e| e.to_string())?;
        targets.push(agent.local_addr().unwrap());
        agents.push(agent);
    }
    let handles: Vec<_> = agents
        .into_iter()
        .map(|mut a| thread::spawn(move || a.run(periods, Duration::from_secs(10))))
        .collect();
    let supervisor =
        LiveSupervisor::bind(&scenario, loopback, targets).map_err(|e| e.to_string())?;
    let live = supervisor
        .run(periods, Duration::from_millis(40), Duration::from_secs(5))
        .map_err(|e| e.to_string())?;
    for h in handles {
        h.join().unwrap().map_err(|e| e.to_string())?;
    }

    scenario.run_duration_us = Some(
        scenario.sync_protocol.start_us
            + f64::from(periods) * scenario.period_us()
            + 0.5 * scenario.period_us(),
    );
    let simulated = sim::run(&scenario).map_err(|e| e.to_string())?;

    if live.estimates.len() != simulated.estimates.len() || live.estimates.is_empty() {
        return Err(format!(
            "live produced {} estimates, simulation {}",
            live.estimates.len(),
            simulated.estimates.len()
        ));
    }
    let mut worst: f64 = 0.0;
    for (l, s) in live.estimates.iter().zip(&simulated.estimates) {
        match (l.x_est_m, s.x_est_m) {
            (Some(a), Some(b)) if l.period_index == s.period_index => {
                worst = worst.max((a - b).abs())
            }
            _ => return Err(format!("estimates differ: live {l:?}, simulated {s:?}")),
        }
    }
    check(
        worst <= 0.02,
        format!(
            "{} estimate(s), largest live/sim position difference {worst:e} m, {} periods completed live",
            live.estimates.len(),
            live.summary.periods_completed
        ),
    )
}

fn codec_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10_000 {
        let frame = SyncFrame {
            period_index: rng.random(),
            period_t_us: rng.random(),
        };
        if decode_sync(&encode_sync(&frame)) != Ok(frame) {
            return Err(format!("sync frame {frame:?} did not survive"));
        }
        let n = if rng.random_bool(0.01) {
            1000
        } else {
            rng.random_range(0..40)
        };
        let report = SensorReport {
            sensor_id: SensorId(rng.random()),
            period_index: rng.random(),
            saved_counter: rng.random(),
            events: (0..n)
                .map(|_| ReportedEvent {
                    local_timestamp_ticks: rng.random(),
                    max_amplitude_milli_g: rng.random(),
                })
                .collect(),
        };
        let bytes = encode_report(&report).map_err(|e| e.to_string())?;
        if decode_report(&bytes).as_ref() != Ok(&report) {
            return Err(format!(
                "report from sensor {} did not survive",
                report.sensor_id
            ));
        }
    }
    let good = encode_report(&SensorReport {
        sensor_id: SensorId(1),
        period_index: 2,
        saved_counter: 3,
        events: vec![ReportedEvent {
            local_timestamp_ticks: 4,
            max_amplitude_milli_g: 5,
        }],
    })
    .unwrap();
    let mut bad_magic = encode_sync(&SyncFrame {
        period_index: 1,
        period_t_us: 1,
    });
    bad_magic[0] = b'X';
    let mut short_body = good.clone();
    short_body.truncate(good.len() - 4);
    let rejected = [
        matches!(
            decode_sync(&bad_magic[..7]),
            Err(WireError::Truncated { .. })
        ),
        matches!(decode_report(&good[..10]), Err(WireError::Truncated { .. })),
        matches!(decode_sync(&bad_magic), Err(WireError::BadMagic(_))),
        matches!(
            decode_report(&short_body),
            Err(WireError::EventCountMismatch { .. })
        ),
    ];
    check(
        rejected.iter().all(|&r| r),
        format!("10000 frames and reports round-trip; truncated, bad magic and count mismatch rejected: {rejected:?}"),
    )
}

fn determinism() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_cablesync");
    let scenario = scenarios_dir().join("busy.toml");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let status = Command::new(exe)
            .arg("simulate")
            .arg(&scenario)
            .arg("--out")
            .arg(d.path())
            .arg("--seed")
            .arg("99")
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!(
                "simulate failed: {}",
                String::from_utf8_lossy(&status.stderr)
            ));
        }
    }
    let mut bytes = 0;
    for name in [
        "detections.csv",
        "retimed.csv",
        "estimates.csv",
        "summary.csv",
    ] {
        let a = std::fs::read(dirs[0].path().join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dirs[1].path().join(name)).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{name} differs between runs"));
        }
        bytes += a.len();
    }
    check(
        bytes > 0,
        format!("4 CSV files, {bytes} bytes, identical across runs"),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("rf skew over 1080 m", rf_skew),
        ("localization accuracy envelope", accuracy_envelope),
        ("ratiometric cancellation", ratiometric_cancellation),
        ("drift necessity", drift_necessity),
        ("exact localization round trip", exact_round_trip),
        ("receipt skew bound", receipt_skew_bound),
        ("live mode equivalence", live_equivalence),
        ("wire codec round trip", codec_round_trip),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
