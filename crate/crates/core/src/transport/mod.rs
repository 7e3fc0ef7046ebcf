//! Message transport: the modeled radio link, the discrete-event queue and
//! the UDP adapter used for live runs.

pub mod event_loop;
pub mod live;
pub mod model;

pub use event_loop::{EventKind, EventQueue, Scheduled};
pub use model::{
    NetworkModel, NodeId, ScheduledDelivery, TransportError, DEFAULT_LATENCY_JITTER_US,
    DEFAULT_LATENCY_MEAN_US, DEFAULT_RF_SPEED_M_S,
};
