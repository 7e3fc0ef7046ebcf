use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::rng::keyed_rng;
use crate::wave::{CableGeometry, SensorId};

/// Message speed over the radio link, m/s.
pub const DEFAULT_RF_SPEED_M_S: f64 = 180e6;
pub const DEFAULT_LATENCY_MEAN_US: f64 = 20.0;
pub const DEFAULT_LATENCY_JITTER_US: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Supervisor,
    Sensor(SensorId),
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Supervisor => f.write_str("supervisor"),
            NodeId::Sensor(s) => write!(f, "sensor-{s}"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid network model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub rf_speed_m_s: f64,
    pub supervisor_position_m: f64,
    pub node_positions_m: BTreeMap<SensorId, f64>,
    /// Mean time a node takes to take note of a received message.
    pub processing_latency_mean_us: f64,
    /// Half-width of the uniform jitter around the mean.
    pub processing_latency_jitter_us: f64,
    pub drop_probability: f64,
    pub seed: u64,
}

impl NetworkModel {
    /// Radio positions equal to cable positions, supervisor at the cable start.
    pub fn for_geometry(geom: &CableGeometry, seed: u64) -> Self {
        Self {
            rf_speed_m_s: DEFAULT_RF_SPEED_M_S,
            supervisor_position_m: geom.extent_m().0,
            node_positions_m: geom
                .ids()
                .iter()
                .copied()
                .zip(geom.positions_m().iter().copied())
                .collect(),
            processing_latency_mean_us: DEFAULT_LATENCY_MEAN_US,
            processing_latency_jitter_us: DEFAULT_LATENCY_JITTER_US,
            drop_probability: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        let bad = |m: &str| Err(TransportError::InvalidModel(m.to_string()));
        if !(self.rf_speed_m_s > 0.0) {
            return bad("rf_speed_m_s must be positive");
        }
        if !(self.processing_latency_jitter_us >= 0.0) {
            return bad("jitter must be non-negative");
        }
        if !(self.processing_latency_mean_us >= self.processing_latency_jitter_us) {
            return bad("mean latency must be at least the jitter half-width");
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return bad("drop_probability must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn position_of(&self, node: NodeId) -> Result<f64, TransportError> {
        match node {
            NodeId::Supervisor => Ok(self.supervisor_position_m),
            NodeId::Sensor(s) => self
                .node_positions_m
                .get(&s)
                .copied()
                .ok_or(TransportError::UnknownNode(node)),
        }
    }

    pub fn propagation_delay(&self, from: NodeId, to: NodeId) -> Result<f64, TransportError> {
        let d = (self.position_of(to)? - self.position_of(from)?).abs();
        Ok(d / self.rf_speed_m_s * 1e6)
    }

    fn sample(&self, kind: u64, period_index: u32, node: NodeId) -> (f64, bool) {
        let node_key = match node {
            NodeId::Supervisor => u64::MAX,
            NodeId::Sensor(s) => u64::from(s.0),
        };
        let mut rng = keyed_rng(self.seed, &[kind, u64::from(period_index), node_key]);
        let jitter = if self.processing_latency_jitter_us > 0.0 {
            rng.random_range(-self.processing_latency_jitter_us..=self.processing_latency_jitter_us)
        } else {
            0.0
        };
        let dropped = self.drop_probability > 0.0 && rng.random::<f64>() < self.drop_probability;
        (self.processing_latency_mean_us + jitter, dropped)
    }

    /// Receipt delay of sync frame `period_index` at `sensor` with loss ignored.
    pub fn sync_latency(&self, period_index: u32, sensor: SensorId) -> Result<f64, TransportError> {
        let node = NodeId::Sensor(sensor);
        Ok(self.propagation_delay(NodeId::Supervisor, node)?
            + self.sample(KIND_SYNC, period_index, node).0)
    }

    /// Receipt delay of sync frame `period_index` at `sensor`, or `None`
    /// when the model drops it.
    pub fn sync_receipt_delay(
        &self,
        period_index: u32,
        sensor: SensorId,
    ) -> Result<Option<f64>, TransportError> {
        let node = NodeId::Sensor(sensor);
        let prop = self.propagation_delay(NodeId::Supervisor, node)?;
        let (latency, dropped) = self.sample(KIND_SYNC, period_index, node);
        Ok((!dropped).then_some(prop + latency))
    }

    /// One delivery per sensor that the frame reaches.
    pub fn broadcast(
        &self,
        frame: &[u8],
        period_index: u32,
        now_us: f64,
    ) -> Vec<ScheduledDelivery> {
        self.node_positions_m
            .keys()
            .filter_map(|&s| {
                let delay = self.sync_receipt_delay(period_index, s).ok()??;
                Some(ScheduledDelivery {
                    message: frame.to_vec(),
                    source: NodeId::Supervisor,
                    destination: NodeId::Sensor(s),
                    sent_at_us: now_us,
                    deliver_at_us: now_us + delay,
                })
            })
            .collect()
    }

    /// Report from `sensor` to the supervisor.
    pub fn unicast_report(
        &self,
        report: Vec<u8>,
        sensor: SensorId,
        period_index: u32,
        now_us: f64,
    ) -> Result<Option<ScheduledDelivery>, TransportError> {
        let from = NodeId::Sensor(sensor);
        let prop = self.propagation_delay(from, NodeId::Supervisor)?;
        let (latency, dropped) = self.sample(KIND_REPORT, period_index, from);
        Ok((!dropped).then_some(ScheduledDelivery {
            message: report,
            source: from,
            destination: NodeId::Supervisor,
            sent_at_us: now_us,
            deliver_at_us: now_us + prop + latency,
        }))
    }
}

const KIND_SYNC: u64 = 1;
const KIND_REPORT: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledDelivery {
    pub message: Vec<u8>,
    pub source: NodeId,
    pub destination: NodeId,
    pub sent_at_us: f64,
    pub deliver_at_us: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(positions: &[f64], jitter: f64) -> NetworkModel {
        let geom = CableGeometry::new(
            (0..positions.len() as u16).map(SensorId).collect(),
            positions.to_vec(),
        )
        .unwrap();
        let mut m = NetworkModel::for_geometry(&geom, 42);
        m.supervisor_position_m = 0.0;
        m.processing_latency_jitter_us = jitter;
        m
    }

    #[test]
    fn delay_over_1080_m_is_6_us() {
        let m = model(&[0.0, 1080.0], 0.0);
        let d = m
            .propagation_delay(NodeId::Sensor(SensorId(0)), NodeId::Sensor(SensorId(1)))
            .unwrap();
        assert!((d - 6.0).abs() <= 6.0 * 1e-12);
    }

    #[test]
    fn delay_examples() {
        let m = model(&[0.0, 300.0], 0.0);
        assert_eq!(
            m.propagation_delay(NodeId::Supervisor, NodeId::Sensor(SensorId(0)))
                .unwrap(),
            0.0
        );
        let d = m
            .propagation_delay(NodeId::Supervisor, NodeId::Sensor(SensorId(1)))
            .unwrap();
        assert!((d - 5.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            m.propagation_delay(NodeId::Supervisor, NodeId::Sensor(SensorId(9))),
            Err(TransportError::UnknownNode(NodeId::Sensor(SensorId(9))))
        );
    }

    #[test]
    fn colocated_zero_jitter_delivers_at_mean() {
        let mut m = model(&[0.0, 1e-9, 2e-9], 0.0);
        m.rf_speed_m_s = f64::INFINITY;
        let out = m.broadcast(&[1, 2, 3], 0, 100.0);
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|d| d.deliver_at_us == 120.0));
    }

    #[test]
    fn receipt_skew_of_1080_m() {
        let m = model(&[0.0, 1080.0], 0.0);
        let out = m.broadcast(&[0], 3, 0.0);
        assert!((out[1].deliver_at_us - out[0].deliver_at_us - 6.0).abs() < 1e-9);
    }

    #[test]
    fn jitter_is_reproducible() {
        let a = model(&[0.0, 10.0, 20.0], 1.0).broadcast(&[0], 7, 5.0);
        let b = model(&[0.0, 10.0, 20.0], 1.0).broadcast(&[0], 7, 5.0);
        assert_eq!(a, b);
        let c = model(&[0.0, 10.0, 20.0], 1.0).broadcast(&[0], 8, 5.0);
        assert_ne!(a, c);
        for d in &a {
            let lat = d.deliver_at_us - 5.0;
            assert!((19.0..=21.0 + 1e-6).contains(&lat));
        }
    }

    #[test]
    fn drops_follow_probability() {
        let mut m = model(&[0.0, 10.0], 0.0);
        m.drop_probability = 1.0;
        assert!(m.broadcast(&[0], 0, 0.0).is_empty());
        m.drop_probability = 0.5;
        let delivered: usize = (0..2000).map(|p| m.broadcast(&[0], p, 0.0).len()).sum();
        assert!((1800..2200).contains(&delivered), "{delivered}");
    }

    #[test]
    fn validation() {
        let mut m = model(&[0.0], 0.0);
        assert!(m.validate().is_ok());
        m.rf_speed_m_s = 0.0;
        assert!(m.validate().is_err());
    }

    proptest! {
        #[test]
        fn zero_jitter_skew_is_delay_spread(positions in prop::collection::vec(-500.0f64..500.0, 2..8), sup in -500.0f64..500.0) {
            let mut ps = positions;
            ps.sort_by(f64::total_cmp);
            ps.dedup();
            prop_assume!(ps.len() >= 2);
            let mut m = model(&ps, 0.0);
            m.supervisor_position_m = sup;
            let out = m.broadcast(&[0], 1, 1000.0);
            let times: Vec<f64> = out.iter().map(|d| d.deliver_at_us).collect();
            let skew = times.iter().cloned().fold(f64::MIN, f64::max) - times.iter().cloned().fold(f64::MAX, f64::min);
            let delays: Vec<f64> = ps.iter().map(|p| (p - sup).abs() / 180e6 * 1e6).collect();
            let spread = delays.iter().cloned().fold(f64::MIN, f64::max) - delays.iter().cloned().fold(f64::MAX, f64::min);
            prop_assert!((skew - spread).abs() < 1e-9);
            for d in &out {
                prop_assert!(d.deliver_at_us >= d.sent_at_us);
            }
        }
    }
}
