//! In-process publish/subscribe bus.
//!
//! Each subscriber owns a bounded FIFO queue. Publishing fans a message out to
//! every live subscriber of the topic; a full queue drops its oldest message
//! and counts the loss. Delivery is poll-based so the consumer owns its timing.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::{Arc, Mutex, RwLock, Weak};

use nalgebra::{DVector, Vector3};
use thiserror::Error;

pub const COMMAND: &str = "/command";
pub const JOINT_STATES: &str = "/joint_states";
pub const GROUND_TRUTH: &str = "/ground_truth";
pub const DIAGNOSTICS: &str = "/diagnostics";

pub const DEFAULT_QUEUE_CAPACITY: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BusError {
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("topic `{topic}` carries {expected} messages, got {got}")]
    KindMismatch { topic: String, expected: PayloadKind, got: PayloadKind },
    #[error("topic `{0}` already exists")]
    DuplicateTopic(String),
    #[error("queue capacity must be at least 1")]
    ZeroCapacity,
    #[error("subscription handle is closed")]
    DeadHandle,
    #[error("invalid {kind} payload: {reason}")]
    InvalidPayload { kind: PayloadKind, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PayloadKind {
    Command,
    JointState,
    BaseState,
    Diagnostics,
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PayloadKind::Command => "Command",
            PayloadKind::JointState => "JointState",
            PayloadKind::BaseState => "BaseState",
            PayloadKind::Diagnostics => "Diagnostics",
        };
        f.write_str(s)
    }
}

/// Measured joint positions, velocities and efforts.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub tau: DVector<f64>,
}

/// Joint set-points plus feed-forward effort.
#[derive(Debug, Clone, PartialEq)]
pub struct Command {
    pub t: f64,
    pub q_des: DVector<f64>,
    pub qd_des: DVector<f64>,
    pub tau_ffwd: DVector<f64>,
}

/// Floating-base pose and twist, world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseState {
    pub t: f64,
    pub position: Vector3<f64>,
    pub rpy: Vector3<f64>,
    pub lin: Vector3<f64>,
    pub ang: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Info,
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub t: f64,
    pub level: Level,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Command(Command),
    JointState(JointState),
    BaseState(BaseState),
    Diagnostics(Diagnostics),
}

impl Message {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Message::Command(_) => PayloadKind::Command,
            Message::JointState(_) => PayloadKind::JointState,
            Message::BaseState(_) => PayloadKind::BaseState,
            Message::Diagnostics(_) => PayloadKind::Diagnostics,
        }
    }

    pub fn t(&self) -> f64 {
        match self {
            Message::Command(m) => m.t,
            Message::JointState(m) => m.t,
            Message::BaseState(m) => m.t,
            Message::Diagnostics(m) => m.t,
        }
    }

    pub fn as_command(&self) -> Option<&Command> {
        match self {
            Message::Command(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_joint_state(&self) -> Option<&JointState> {
        match self {
            Message::JointState(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_base_state(&self) -> Option<&BaseState> {
        match self {
            Message::BaseState(s) => Some(s),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), BusError> {
        let fail = |reason: &str| Err(BusError::InvalidPayload { kind: self.kind(), reason: reason.to_string() });
        let finite = |v: &DVector<f64>| v.iter().all(|x| x.is_finite());
        match self {
            Message::Command(c) => {
                if c.q_des.len() != c.qd_des.len() || c.q_des.len() != c.tau_ffwd.len() {
                    return fail("vector lengths differ");
                }
                if !(c.t.is_finite() && finite(&c.q_des) && finite(&c.qd_des) && finite(&c.tau_ffwd)) {
                    return fail("non-finite value");
                }
            }
            Message::JointState(s) => {
                if s.q.len() != s.qd.len() || s.q.len() != s.tau.len() {
                    return fail("vector lengths differ");
                }
            }
            Message::BaseState(b) => {
                let all = [b.position, b.rpy, b.lin, b.ang];
                if !b.t.is_finite() || !all.iter().flat_map(|v| v.iter()).all(|x| x.is_finite()) {
                    return fail("non-finite value");
                }
                let pi = std::f64::consts::PI;
                if b.rpy.iter().any(|a| *a <= -pi || *a > pi) {
                    return fail("rpy outside (-pi, pi]");
                }
            }
            Message::Diagnostics(_) => {}
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
struct Queue {
    messages: VecDeque<Arc<Message>>,
    capacity: usize,
    received: u64,
    delivered: u64,
    dropped: u64,
    closed: bool,
}

struct Topic {
    kind: PayloadKind,
    capacity: usize,
    subscribers: Vec<Weak<Mutex<Queue>>>,
}

/// Counters for one subscription. `dropped == received - delivered - queued`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubscriptionStats {
    pub received: u64,
    pub delivered: u64,
    pub queued: u64,
    pub dropped: u64,
}

/// A subscriber's handle. Poll it from one consumer at a time.
pub struct Subscription {
    topic: String,
    queue: Arc<Mutex<Queue>>,
}

impl fmt::Debug for Subscription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Subscription").field("topic", &self.topic).finish()
    }
}

impl Subscription {
    pub fn topic(&self) -> &str {
        &self.topic
    }

    /// Up to `max` messages in publication order; never blocks.
    pub fn poll(&self, max: usize) -> Result<Vec<Arc<Message>>, BusError> {
        let mut q = self.queue.lock().expect("bus queue poisoned");
        if q.closed {
            return Err(BusError::DeadHandle);
        }
        let n = max.min(q.messages.len());
        let out: Vec<_> = q.messages.drain(..n).collect();
        q.delivered += out.len() as u64;
        Ok(out)
    }

    /// Everything currently queued.
    pub fn drain(&self) -> Result<Vec<Arc<Message>>, BusError> {
        self.poll(usize::MAX)
    }

    pub fn dropped(&self) -> u64 {
        self.queue.lock().expect("bus queue poisoned").dropped
    }

    pub fn stats(&self) -> SubscriptionStats {
        let q = self.queue.lock().expect("bus queue poisoned");
        SubscriptionStats { received: q.received, delivered: q.delivered, queued: q.messages.len() as u64, dropped: q.dropped }
    }

    /// Detaches from the topic; later polls fail with [`BusError::DeadHandle`].
    pub fn close(&self) {
        let mut q = self.queue.lock().expect("bus queue poisoned");
        q.closed = true;
        q.messages.clear();
    }
}

/// Cheaply clonable handle to a shared bus.
#[derive(Clone, Default)]
pub struct Bus {
    topics: Arc<RwLock<HashMap<String, Topic>>>,
}

impl fmt::Debug for Bus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let topics = self.topics.read().expect("bus poisoned");
        f.debug_struct("Bus").field("topics", &topics.keys().collect::<Vec<_>>()).finish()
    }
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    /// A bus with the four reserved topics at the given queue capacity.
    pub fn standard(capacity: usize) -> Self {
        let bus = Self::new();
        for (name, kind) in [
            (COMMAND, PayloadKind::Command),
            (JOINT_STATES, PayloadKind::JointState),
            (GROUND_TRUTH, PayloadKind::BaseState),
            (DIAGNOSTICS, PayloadKind::Diagnostics),
        ] {
            bus.create_topic(name, kind, capacity).expect("fresh bus");
        }
        bus
    }

    pub fn create_topic(&self, name: &str, kind: PayloadKind, capacity: usize) -> Result<(), BusError> {
        if capacity == 0 {
            return Err(BusError::ZeroCapacity);
        }
        let mut topics = self.topics.write().expect("bus poisoned");
        if topics.contains_key(name) {
            return Err(BusError::DuplicateTopic(name.to_string()));
        }
        topics.insert(name.to_string(), Topic { kind, capacity, subscribers: Vec::new() });
        Ok(())
    }

    pub fn topic_kind(&self, name: &str) -> Option<PayloadKind> {
        self.topics.read().expect("bus poisoned").get(name).map(|t| t.kind)
    }

    /// Receives only messages published after this call.
    pub fn subscribe(&self, topic: &str) -> Result<Subscription, BusError> {
        let mut topics = self.topics.write().expect("bus poisoned");
        let t = topics.get_mut(topic).ok_or_else(|| BusError::UnknownTopic(topic.to_string()))?;
        let queue = Arc::new(Mutex::new(Queue { capacity: t.capacity, ..Queue::default() }));
        t.subscribers.push(Arc::downgrade(&queue));
        Ok(Subscription { topic: topic.to_string(), queue })
    }

    pub fn publish(&self, topic: &str, message: Message) -> Result<(), BusError> {
        {
            let topics = self.topics.read().expect("bus poisoned");
            let t = topics.get(topic).ok_or_else(|| BusError::UnknownTopic(topic.to_string()))?;
            if t.kind != message.kind() {
                return Err(BusError::KindMismatch { topic: topic.to_string(), expected: t.kind, got: message.kind() });
            }
            message.validate()?;
            let message = Arc::new(message);
            let mut stale = false;
            for sub in &t.subscribers {
                let Some(q) = sub.upgrade() else {
                    stale = true;
                    continue;
                };
                let mut q = q.lock().expect("bus queue poisoned");
                if q.closed {
                    stale = true;
                    continue;
                }
                q.received += 1;
                if q.messages.len() == q.capacity {
                    q.messages.pop_front();
                    q.dropped += 1;
                }
                q.messages.push_back(Arc::clone(&message));
            }
            if !stale {
                return Ok(());
            }
        }
        let mut topics = self.topics.write().expect("bus poisoned");
        if let Some(t) = topics.get_mut(topic) {
            t.subscribers.retain(|w| w.upgrade().is_some_and(|q| !q.lock().expect("bus queue poisoned").closed));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use proptest::prelude::*;

    fn cmd(t: f64) -> Message {
        Message::Command(Command { t, q_des: dvector![t], qd_des: dvector![0.0], tau_ffwd: dvector![0.0] })
    }

    fn js(t: f64) -> Message {
        Message::JointState(JointState { t, q: dvector![0.0], qd: dvector![0.0], tau: dvector![0.0] })
    }

    #[test]
    fn publish_then_poll_fifo() {
        let bus = Bus::standard(DEFAULT_QUEUE_CAPACITY);
        let sub = bus.subscribe(COMMAND).unwrap();
        bus.publish(COMMAND, cmd(1.0)).unwrap();
        bus.publish(COMMAND, cmd(2.0)).unwrap();
        let got = sub.drain().unwrap();
        assert_eq!(*got[0], cmd(1.0));
        assert_eq!(*got[1], cmd(2.0));
    }

    #[test]
    fn overflow_drops_oldest() {
        let bus = Bus::standard(10);
        let sub = bus.subscribe(COMMAND).unwrap();
        for i in 1..=11 {
            bus.publish(COMMAND, cmd(i as f64)).unwrap();
        }
        let ts: Vec<f64> = sub.drain().unwrap().iter().map(|m| m.t()).collect();
        assert_eq!(ts, (2..=11).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(sub.dropped(), 1);
    }

    #[test]
    fn kind_mismatch_and_unknown_topic() {
        let bus = Bus::standard(10);
        assert!(matches!(bus.publish(COMMAND, js(0.0)), Err(BusError::KindMismatch { .. })));
        assert_eq!(bus.publish("/nope", cmd(0.0)), Err(BusError::UnknownTopic("/nope".into())));
        assert!(matches!(bus.subscribe("/nope"), Err(BusError::UnknownTopic(_))));
    }

    #[test]
    fn no_replay_for_late_subscribers() {
        let bus = Bus::standard(10);
        for i in 0..5 {
            bus.publish(COMMAND, cmd(i as f64)).unwrap();
        }
        let sub = bus.subscribe(COMMAND).unwrap();
        assert!(sub.drain().unwrap().is_empty());
    }

    #[test]
    fn fan_out_and_partial_polls() {
        let bus = Bus::standard(10);
        let a = bus.subscribe(JOINT_STATES).unwrap();
        let b = bus.subscribe(JOINT_STATES).unwrap();
        for i in 0..3 {
            bus.publish(JOINT_STATES, js(i as f64)).unwrap();
        }
        assert_eq!(b.drain().unwrap().len(), 3);
        let first = a.poll(2).unwrap();
        assert_eq!(first.iter().map(|m| m.t()).collect::<Vec<_>>(), [0.0, 1.0]);
        assert_eq!(a.poll(2).unwrap()[0].t(), 2.0);
        assert!(a.poll(5).unwrap().is_empty());
        assert_eq!(a.dropped(), 0);
    }

    #[test]
    fn closed_handle_is_dead() {
        let bus = Bus::standard(10);
        let a = bus.subscribe(COMMAND).unwrap();
        a.close();
        assert_eq!(a.poll(1), Err(BusError::DeadHandle));
        bus.publish(COMMAND, cmd(0.0)).unwrap();
    }

    #[test]
    fn rejects_non_finite_commands() {
        let bus = Bus::standard(10);
        let bad = Message::Command(Command { t: 0.0, q_des: dvector![f64::NAN], qd_des: dvector![0.0], tau_ffwd: dvector![0.0] });
        assert!(matches!(bus.publish(COMMAND, bad), Err(BusError::InvalidPayload { .. })));
    }

    #[test]
    fn concurrent_publishers_and_consumer() {
        let bus = Bus::new();
        bus.create_topic(COMMAND, PayloadKind::Command, 4000).unwrap();
        let sub = bus.subscribe(COMMAND).unwrap();
        let handles: Vec<_> = (0..4)
            .map(|p| {
                let bus = bus.clone();
                std::thread::spawn(move || {
                    for i in 0..1000 {
                        bus.publish(COMMAND, cmd((p * 1000 + i) as f64)).unwrap();
                    }
                })
            })
            .collect();
        let mut seen = Vec::new();
        while seen.len() < 4000 {
            seen.extend(sub.poll(64).unwrap().iter().map(|m| m.t() as usize));
        }
        for h in handles {
            h.join().unwrap();
        }
        // Per-publisher order survives interleaving.
        for p in 0..4 {
            let mine: Vec<usize> = seen.iter().copied().filter(|t| t / 1000 == p).collect();
            assert!(mine.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(mine.len(), 1000);
        }
    }

    proptest! {
        #[test]
        fn fifo_and_loss_accounting(capacity in 1usize..16, n in 0usize..64, polls in proptest::collection::vec(0usize..8, 0..16)) {
            let bus = Bus::new();
            bus.create_topic("/t", PayloadKind::Command, capacity).unwrap();
            let sub = bus.subscribe("/t").unwrap();
            let mut got = Vec::new();
            let mut polls = polls.into_iter();
            for i in 0..n {
                bus.publish("/t", cmd(i as f64)).unwrap();
                if let Some(k) = polls.next() {
                    got.extend(sub.poll(k).unwrap().iter().map(|m| m.t() as usize));
                }
            }
            let s = sub.stats();
            prop_assert_eq!(s.received, n as u64);
            prop_assert_eq!(s.dropped, s.received - s.delivered - s.queued);
            got.extend(sub.drain().unwrap().iter().map(|m| m.t() as usize));
            prop_assert!(got.windows(2).all(|w| w[0] < w[1]));
            if capacity >= n {
                prop_assert_eq!(got, (0..n).collect::<Vec<_>>());
            }
        }
    }
}
