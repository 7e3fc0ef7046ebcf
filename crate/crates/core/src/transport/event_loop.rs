use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

/// Dispatch priority among events due at the same instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    SyncDelivery,
    Detection,
    ReportDelivery,
    BroadcastTimer,
    CompletionTimeout,
}

#[derive(Debug, Clone)]
pub struct Scheduled<P> {
    pub at_us: f64,
    pub kind: EventKind,
    pub node: u16,
    seq: u64,
    pub payload: P,
}

impl<P> Scheduled<P> {
    fn key(&self) -> (f64, EventKind, u16, u64) {
        (self.at_us, self.kind, self.node, self.seq)
    }
}

impl<P> PartialEq for Scheduled<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<P> Eq for Scheduled<P> {}

impl<P> PartialOrd for Scheduled<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Scheduled<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    }
}

/// Discrete-event queue. Events come out by time, then [`EventKind`], then
/// node id, then insertion order. The queue owns the simulation clock:
/// `now_us` only moves forward as events are popped.
#[derive(Debug)]
pub struct EventQueue<P> {
    heap: BinaryHeap<Reverse<Scheduled<P>>>,
    now_us: f64,
    next_seq: u64,
    dispatched: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new(0.0)
    }
}

impl<P> EventQueue<P> {
    pub fn new(start_us: f64) -> Self {
        Self {
            heap: BinaryHeap::new(),
            now_us: start_us,
            next_seq: 0,
            dispatched: 0,
        }
    }

    pub fn now_us(&self) -> f64 {
        self.now_us
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    /// # Panics
    /// When `at_us` lies before the current simulation time.
    pub fn schedule(&mut self, at_us: f64, kind: EventKind, node: u16, payload: P) {
        assert!(
            at_us >= self.now_us,
            "event at {at_us} µs scheduled in the past (now {} µs)",
            self.now_us
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Scheduled {
            at_us,
            kind,
            node,
            seq,
            payload,
        }));
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|Reverse(s)| s.at_us)
    }

    pub fn pop(&mut self) -> Option<Scheduled<P>> {
        let Reverse(next) = self.heap.pop()?;
        self.now_us = next.at_us;
        self.dispatched += 1;
        Some(next)
    }

    /// Pops the next event only if it is due at or before `limit_us`.
    pub fn pop_until(&mut self, limit_us: f64) -> Option<Scheduled<P>> {
        match self.peek_time() {
            Some(t) if t <= limit_us => self.pop(),
            _ => None,
        }
    }
}
