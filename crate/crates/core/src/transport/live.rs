//! Live runs over UDP. The supervisor and each sensor agent run as separate
//! processes (or threads) and exchange the real wire bytes.
//!
//! Physics stays emulated: an agent derives the reference instant of each
//! sync it receives from the frame index and the modeled link latency, and
//! replays its own scenario detections up to that instant before handling
//! the sync. Wall-clock pacing only spaces the periods out, so a live run
//! reproduces the simulated run whenever no datagram is lost.
//!
//! ```toml
//! scenario = "canonical.toml"      # relative to this file
//! periods = 3
//! pace_ms = 200
//! idle_timeout_ms = 5000
//!
//! [supervisor]
//! bind = "127.0.0.1:47802"         # also the report port
//! # sync_targets = ["127.0.0.1:47811"]   # default: every agent bind address
//! # broadcast = "255.255.255.255:47801"
//!
//! [[agents]]
//! sensor_id = 0
//! bind = "127.0.0.1:47811"
//! # supervisor = "127.0.0.1:47802"      # default: reply to the sync sender
//! ```

use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use serde::Deserialize;
use thiserror::Error;

use crate::clock::ClockError;
use crate::node::{physical_arrivals, PhysicalArrival, SensorNode, SupervisorNode};
use crate::protocol::{decode_sync, encode_report, encode_sync, WireError};
use crate::report::{RunReport, Summary};
use crate::scenario::{load_scenario, Scenario, ScenarioError};
use crate::sim::collect;
use crate::transport::{NetworkModel, TransportError};
use crate::wave::SensorId;

pub const DEFAULT_SYNC_PORT: u16 = 47801;
pub const DEFAULT_REPORT_PORT: u16 = 47802;

const MAX_DATAGRAM: usize = 65_536;
const RECV_POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Error)]
pub enum LiveError {
    #[error("socket error: {0}")]
    Io(#[from] io::Error),
    #[error("cannot read {path}: {source}")]
    ConfigIo { path: PathBuf, source: io::Error },
    #[error("invalid live config: {0}")]
    Config(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Clock(#[from] ClockError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("sensor {0} is not in the scenario")]
    UnknownSensor(SensorId),
}

fn default_periods() -> u32 {
    3
}
fn default_pace_ms() -> u64 {
    200
}
fn default_idle_timeout_ms() -> u64 {
    5000
}
fn default_supervisor_bind() -> SocketAddr {
    SocketAddr::from(([0, 0, 0, 0], DEFAULT_REPORT_PORT))
}
fn default_agent_bind() -> SocketAddr {
    SocketAddr::from(([0, 0, 0, 0], DEFAULT_SYNC_PORT))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisorEndpoint {
    #[serde(default = "default_supervisor_bind")]
    pub bind: SocketAddr,
    #[serde(default)]
    pub sync_targets: Vec<SocketAddr>,
    #[serde(default)]
    pub broadcast: Option<SocketAddr>,
}

impl Default for SupervisorEndpoint {
    fn default() -> Self {
        Self {
            bind: default_supervisor_bind(),
            sync_targets: Vec::new(),
            broadcast: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEndpoint {
    pub sensor_id: u16,
    #[serde(default = "default_agent_bind")]
    pub bind: SocketAddr,
    #[serde(default)]
    pub supervisor: Option<SocketAddr>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiveConfig {
    pub scenario: PathBuf,
    /// Periods to close. Broadcasts `0..=periods` go out.
    #[serde(default = "default_periods")]
    pub periods: u32,
    /// Wall-clock length of one period.
    #[serde(default = "default_pace_ms")]
    pub pace_ms: u64,
    #[serde(default = "default_idle_timeout_ms")]
    pub idle_timeout_ms: u64,
    #[serde(default)]
    pub supervisor: SupervisorEndpoint,
    #[serde(default)]
    pub agents: Vec<AgentEndpoint>,
}

impl LiveConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, LiveError> {
        toml::from_str(text).map_err(|e| LiveError::Config(e.to_string()))
    }

    /// Where syncs go: the broadcast address, the explicit targets, or
    /// every agent's bind address, in that order of preference.
    pub fn sync_targets(&self) -> Vec<SocketAddr> {
        if let Some(b) = self.supervisor.broadcast {
            vec![b]
        } else if !self.supervisor.sync_targets.is_empty() {
            self.supervisor.sync_targets.clone()
        } else {
            self.agents.iter().map(|a| a.bind).collect()
        }
    }

    pub fn agent(&self, sensor_id: u16) -> Option<&AgentEndpoint> {
        self.agents.iter().find(|a| a.sensor_id == sensor_id)
    }

    pub fn pace(&self) -> Duration {
        Duration::from_millis(self.pace_ms)
    }

    pub fn idle_timeout(&self) -> Duration {
        Duration::from_millis(self.idle_timeout_ms)
    }
}

/// Reads a live config and the scenario it points at.
pub fn load_live_config(path: impl AsRef<Path>) -> Result<(LiveConfig, Scenario), LiveError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| LiveError::ConfigIo {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config = LiveConfig::from_toml_str(&text)?;
    if config.scenario.is_relative() {
        if let Some(dir) = path.parent() {
            config.scenario = dir.join(&config.scenario);
        }
    }
    let scenario = load_scenario(&config.scenario)?;
    Ok((config, scenario))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AgentStats {
    pub syncs_received: u64,
    pub malformed_syncs: u64,
    pub reports_sent: u64,
    pub events_sent: u64,
    pub oversize_reports: u64,
    pub timed_out: bool,
}

/// One sensor behind a UDP socket.
pub struct LiveAgent {
    node: SensorNode,
    socket: UdpSocket,
    model: NetworkModel,
    start_us: f64,
    period_us: f64,
    arrivals: Vec<PhysicalArrival>,
    next_arrival: usize,
    supervisor: Option<SocketAddr>,
}

impl LiveAgent {
    pub fn bind(
        scenario: &Scenario,
        sensor_id: SensorId,
        bind: SocketAddr,
        supervisor: Option<SocketAddr>,
    ) -> Result<Self, LiveError> {
        let node = SensorNode::for_scenario(scenario)?
            .into_iter()
            .find(|n| n.sensor_id() == sensor_id)
            .ok_or(LiveError::UnknownSensor(sensor_id))?;
        let arrivals = physical_arrivals(scenario)?
            .into_iter()
            .filter(|a| a.sensor_id == sensor_id)
            .collect();
        let socket = UdpSocket::bind(bind)?;
        Ok(Self {
            node,
            socket,
            model: scenario.network_model()?,
            start_us: scenario.sync_protocol.start_us,
            period_us: scenario.period_us(),
            arrivals,
            next_arrival: 0,
            supervisor,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.socket.local_addr()
    }

    /// Serves syncs until frame `last_period` has been handled or no sync
    /// arrives within `idle_timeout`.
    pub fn run(
        &mut self,
        last_period: u32,
        idle_timeout: Duration,
    ) -> Result<AgentStats, LiveError> {
        let id = self.node.sensor_id();
        let mut stats = AgentStats::default();
        let mut buf = vec![0u8; MAX_DATAGRAM];
        self.socket.set_read_timeout(Some(idle_timeout))?;
        loop {
            let (n, from) = match self.socket.recv_from(&mut buf) {
                Ok(r) => r,
                Err(e)
                    if matches!(
                        e.kind(),
                        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                    ) =>
                {
                    warn!("sensor {id}: no sync for {idle_timeout:?}, stopping");
                    stats.timed_out = true;
                    return Ok(stats);
                }
                Err(e) => return Err(e.into()),
            };
            let frame = match decode_sync(&buf[..n]) {
                Ok(f) => f,
                Err(e) => {
                    warn!("sensor {id}: dropping malformed sync from {from}: {e}");
                    stats.malformed_syncs += 1;
                    continue;
                }
            };
            stats.syncs_received += 1;
            let receipt_us = self.start_us
                + f64::from(frame.period_index) * self.period_us
                + self.model.sync_latency(frame.period_index, id)?;
            while let Some(a) = self.arrivals.get(self.next_arrival) {
                if a.detected_ref_us >= receipt_us {
                    break;
                }
                self.node
                    .on_wave(a.detected_ref_us, a.amplitude_g, a.source)?;
                self.next_arrival += 1;
            }
            let (outcome, _) = self.node.on_sync(receipt_us, &frame)?;
            if let Some(report) = outcome.report {
                match encode_report(&report) {
                    Ok(bytes) => {
                        let to = self.supervisor.unwrap_or(from);
                        self.socket.send_to(&bytes, to)?;
                        stats.reports_sent += 1;
                        stats.events_sent += report.events.len() as u64;
                        debug!(
                            "sensor {id}: sent report for period {} to {to}",
                            report.period_index
                        );
                    }
                    Err(e @ WireError::TooManyEvents(_)) => {
                        warn!("sensor {id}: refusing to send report: {e}");
                        stats.oversize_reports += 1;
                    }
                    Err(e) => warn!("sensor {id}: cannot encode report: {e}"),
                }
            }
            if frame.period_index >= last_period {
                return Ok(stats);
            }
        }
    }
}

/// The supervisor behind a UDP socket that both sends syncs and receives reports.
pub struct LiveSupervisor {
    node: SupervisorNode,
    scenario: Scenario,
    socket: UdpSocket,
    targets: Vec<SocketAddr>,
}

impl LiveSupervisor {
    pub fn bind(
        scenario: &Scenario,
        bind: SocketAddr,
        targets: Vec<SocketAddr>,
    ) -> Result<Self, LiveError> {
        let socket = UdpSocket::bind(bind)?;
        socket.set_broadcast(true)?;
        Ok(Self {
            node: SupervisorNode::for_scenario(scenario)?,
            scenario: scenario.clone(),
            socket,
            targets,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.socket.local_addr()
    }

    pub fn node(&self) -> &SupervisorNode {
        &self.node
    }

    /// Broadcasts frames `0..=periods`, one per `pace`, then waits for the
    /// last closed period to complete or for `idle_timeout` of silence.
    pub fn run(
        mut self,
        periods: u32,
        pace: Duration,
        idle_timeout: Duration,
    ) -> Result<RunReport, LiveError> {
        let receiver = self.socket.try_clone()?;
        receiver.set_read_timeout(Some(RECV_POLL))?;
        let stop = Arc::new(AtomicBool::new(false));
        let (tx, rx) = mpsc::channel::<Vec<u8>>();
        let stop_flag = Arc::clone(&stop);
        let listener = thread::spawn(move || {
            let mut buf = vec![0u8; MAX_DATAGRAM];
            while !stop_flag.load(Ordering::Relaxed) {
                match receiver.recv_from(&mut buf) {
                    Ok((n, _)) => {
                        if tx.send(buf[..n].to_vec()).is_err() {
                            break;
                        }
                    }
                    Err(e)
                        if matches!(
                            e.kind(),
                            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                        ) => {}
                    Err(e) => {
                        warn!("report socket failed: {e}");
                        break;
                    }
                }
            }
        });

        let mut summary = Summary::default();
        let started = Instant::now();
        for k in 0..=periods {
            let due = started + pace * k;
            self.drain_until(&rx, due);
            let now_ref = self.node.state().broadcast_instant(k);
            self.node.poll_timeouts(now_ref);
            let Some(frame) = self.node.tick(now_ref) else {
                continue;
            };
            let bytes = encode_sync(&frame);
            for target in &self.targets {
                self.socket.send_to(&bytes, target)?;
            }
            summary.sync_messages += 1;
            info!(
                "sync {} sent to {} target(s)",
                frame.period_index,
                self.targets.len()
            );
        }

        let mut last_heard = Instant::now();
        while self.node.state().released_count() < periods as usize {
            match rx.recv_timeout(RECV_POLL) {
                Ok(bytes) => {
                    self.accept(&bytes);
                    last_heard = Instant::now();
                }
                Err(mpsc::RecvTimeoutError::Timeout) if last_heard.elapsed() < idle_timeout => {}
                Err(_) => {
                    warn!("no report for {idle_timeout:?}, closing open periods");
                    break;
                }
            }
        }
        stop.store(true, Ordering::Relaxed);
        let _ = listener.join();
        self.node.finish();
        let stats = self.node.stats();
        summary.report_messages = stats.reports_received;
        summary.events_received = stats.events_received
            + stats.pre_sync_events
            + stats.late_events
            + stats.duplicate_events;
        Ok(collect(
            &self.scenario,
            &self.node,
            None,
            Vec::new(),
            summary,
        ))
    }

    fn drain_until(&mut self, rx: &mpsc::Receiver<Vec<u8>>, until: Instant) {
        loop {
            let left = until.saturating_duration_since(Instant::now());
            let next = if left.is_zero() {
                rx.try_recv().ok()
            } else {
                rx.recv_timeout(left).ok()
            };
            match next {
                Some(bytes) => self.accept(&bytes),
                None if Instant::now() >= until => return,
                None => {}
            }
        }
    }

    fn accept(&mut self, bytes: &[u8]) {
        // malformed datagrams are logged and counted by the node
        let _ = self.node.on_report_bytes(bytes);
    }
}

/// Binds and runs the supervisor described by `config`.
pub fn run_supervisor(config: &LiveConfig, scenario: &Scenario) -> Result<RunReport, LiveError> {
    let targets = config.sync_targets();
    if targets.is_empty() {
        return Err(LiveError::Config(
            "no sync targets: list agents, sync_targets or broadcast".into(),
        ));
    }
    let sup = LiveSupervisor::bind(scenario, config.supervisor.bind, targets)?;
    sup.run(config.periods, config.pace(), config.idle_timeout())
}

/// Binds and runs agent `sensor_id` described by `config`.
pub fn run_agent(
    config: &LiveConfig,
    scenario: &Scenario,
    sensor_id: u16,
) -> Result<AgentStats, LiveError> {
    let endpoint = config.agent(sensor_id).cloned().unwrap_or(AgentEndpoint {
        sensor_id,
        bind: default_agent_bind(),
        supervisor: None,
    });
    let mut agent = LiveAgent::bind(
        scenario,
        SensorId(sensor_id),
        endpoint.bind,
        endpoint.supervisor,
    )?;
    agent.run(config.periods, config.idle_timeout())
}
