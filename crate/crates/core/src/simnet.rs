//! Seeded discrete-event network with a partial-synchrony delay model and
//! per-validator Byzantine behaviours.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::consensus::LeaderSchedule;
use crate::node::{NetMessage, Timer};
use crate::primary::PrimaryMessage;
use crate::types::{Digest, SimTime, Transaction, ValidatorId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ByzantineBehavior {
    Silent,
    Delayed(u64),
    Equivocator,
    VoteWithholder,
}

impl fmt::Display for ByzantineBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ByzantineBehavior::Silent => write!(f, "silent"),
            ByzantineBehavior::Delayed(k) => write!(f, "delayed:{k}"),
            ByzantineBehavior::Equivocator => write!(f, "equivocator"),
            ByzantineBehavior::VoteWithholder => write!(f, "vote_withholder"),
        }
    }
}

impl FromStr for ByzantineBehavior {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "silent" => Ok(ByzantineBehavior::Silent),
            "equivocator" => Ok(ByzantineBehavior::Equivocator),
            "vote_withholder" => Ok(ByzantineBehavior::VoteWithholder),
            _ => match s.strip_prefix("delayed:") {
                Some(k) => k.parse().map(ByzantineBehavior::Delayed).map_err(|e| format!("bad delay factor: {e}")),
                None => Err(format!("unknown behaviour {s:?}")),
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct NetworkConfig {
    pub gst: SimTime,
    /// Bound on honest delivery once GST has passed.
    pub delta: SimTime,
    /// Delay range after GST; `max` is clamped to `delta`.
    pub latency: (SimTime, SimTime),
    pub pre_gst_delay: (SimTime, SimTime),
    /// Drop probability for messages sent before GST.
    pub drop_before_gst: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { gst: 0, delta: 200, latency: (10, 50), pre_gst_delay: (10, 2_000), drop_before_gst: 0.0, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub enum EventKind {
    Deliver { from: ValidatorId, msg: NetMessage },
    Timer(Timer),
    Client(Transaction),
}

#[derive(Clone, Debug)]
pub struct SimEvent {
    pub deliver_at: SimTime,
    pub seq: u64,
    pub dest: ValidatorId,
    pub kind: EventKind,
}

impl PartialEq for SimEvent {
    fn eq(&self, other: &Self) -> bool {
        (self.deliver_at, self.seq) == (other.deliver_at, other.seq)
    }
}

impl Eq for SimEvent {}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimEvent {
    /// Reversed so the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.deliver_at, other.seq).cmp(&(self.deliver_at, self.seq))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub from: ValidatorId,
    pub to: ValidatorId,
    pub kind: &'static str,
    pub digest: Option<Digest>,
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        let d = self.digest.map(|d| d.to_hex()).unwrap_or_else(|| "-".into());
        format!("{},{},{},{},{}", self.time, self.from.0, self.to.0, self.kind, d)
    }
}

#[derive(Clone, Debug, Default)]
pub struct NetStats {
    pub sent: u64,
    pub dropped: u64,
    pub delivered: u64,
}

pub struct Simnet {
    config: NetworkConfig,
    rng: ChaCha8Rng,
    queue: BinaryHeap<SimEvent>,
    now: SimTime,
    seq: u64,
    behaviors: BTreeMap<ValidatorId, ByzantineBehavior>,
    /// Extra outgoing latency for slow but honest validators.
    slow: BTreeMap<ValidatorId, SimTime>,
    schedule: LeaderSchedule,
    trace: Option<Vec<TraceRecord>>,
    pub stats: NetStats,
}

impl Simnet {
    pub fn new(config: NetworkConfig, schedule: LeaderSchedule) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Simnet {
            config,
            rng,
            queue: BinaryHeap::new(),
            now: 0,
            seq: 0,
            behaviors: BTreeMap::new(),
            slow: BTreeMap::new(),
            schedule,
            trace: None,
            stats: NetStats::default(),
        }
    }

    pub fn set_behavior(&mut self, id: ValidatorId, b: ByzantineBehavior) {
        self.behaviors.insert(id, b);
    }

    pub fn set_slow(&mut self, id: ValidatorId, extra: SimTime) {
        self.slow.insert(id, extra);
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> Option<&[TraceRecord]> {
        self.trace.as_deref()
    }

    pub fn record(&mut self, from: ValidatorId, to: ValidatorId, kind: &'static str, digest: Option<Digest>) {
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceRecord { time: self.now, from, to, kind, digest });
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    fn push(&mut self, deliver_at: SimTime, dest: ValidatorId, kind: EventKind) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(SimEvent { deliver_at, seq, dest, kind });
    }

    pub fn schedule_timer(&mut self, at: SimTime, dest: ValidatorId, timer: Timer) {
        self.push(at.max(self.now), dest, EventKind::Timer(timer));
    }

    pub fn inject_client(&mut self, at: SimTime, dest: ValidatorId, tx: Transaction) {
        self.push(at, dest, EventKind::Client(tx));
    }

    /// Schedules a message according to the delay model and the sender's
    /// behaviour. Returns the delivery time, or `None` if it was dropped.
    pub fn send(&mut self, from: ValidatorId, to: ValidatorId, msg: NetMessage) -> Option<SimTime> {
        self.stats.sent += 1;
        let behavior = self.behaviors.get(&from).copied();
        let Some(msg) = apply_behavior(behavior, msg, &self.schedule) else {
            self.stats.dropped += 1;
            return None;
        };
        let now = self.now;
        let mut delay = if now < self.config.gst {
            if self.config.drop_before_gst > 0.0 && self.rng.gen_bool(self.config.drop_before_gst) {
                self.stats.dropped += 1;
                return None;
            }
            let (lo, hi) = self.config.pre_gst_delay;
            self.rng.gen_range(lo..=hi.max(lo))
        } else {
            let (lo, hi) = self.config.latency;
            let hi = hi.min(self.config.delta).max(lo);
            self.rng.gen_range(lo..=hi)
        };
        delay += self.slow.get(&from).copied().unwrap_or(0);
        if let Some(ByzantineBehavior::Delayed(k)) = behavior {
            delay = delay.saturating_mul(k);
        }
        let mut at = now + delay.max(1);
        let honest = |v: &ValidatorId| !self.behaviors.contains_key(v);
        if honest(&from) && honest(&to) {
            at = at.min(now.max(self.config.gst) + self.config.delta);
        }
        self.push(at, to, EventKind::Deliver { from, msg });
        Some(at)
    }

    /// Pops the next event and advances the clock.
    pub fn next_event(&mut self) -> Option<SimEvent> {
        let ev = self.queue.pop()?;
        self.now = ev.deliver_at;
        if let EventKind::Deliver { from, msg } = &ev.kind {
            self.stats.delivered += 1;
            let (kind, digest) = (msg.kind(), msg.digest());
            self.record(*from, ev.dest, kind, digest);
        }
        Some(ev)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|e| e.deliver_at)
    }
}

/// Outgoing-message filter for a Byzantine sender. Equivocation needs the
/// sender's key, so the primary performs it; here it passes through.
pub fn apply_behavior(
    behavior: Option<ByzantineBehavior>,
    msg: NetMessage,
    schedule: &LeaderSchedule,
) -> Option<NetMessage> {
    match behavior {
        Some(ByzantineBehavior::Silent) => None,
        Some(ByzantineBehavior::VoteWithholder) => match &msg {
            NetMessage::Primary(PrimaryMessage::Vote(v))
                if v.header_round % 2 == 1 && schedule.leader(v.header_round) == v.header_author =>
            {
                None
            }
            _ => Some(msg),
        },
        _ => Some(msg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Committee;
    use crate::worker::WorkerMessage;

    fn net(config: NetworkConfig) -> Simnet {
        Simnet::new(config, LeaderSchedule::new(Committee::unit(4), 0))
    }

    fn ping() -> NetMessage {
        NetMessage::Worker { worker: 0, msg: WorkerMessage::RequestBatches(Vec::new()) }
    }

    #[test]
    fn post_gst_within_delta() {
        let mut n = net(NetworkConfig { delta: 100, latency: (1, 1_000), ..Default::default() });
        for _ in 0..1_000 {
            let at = n.send(ValidatorId(1), ValidatorId(2), ping()).unwrap();
            assert!(at <= 100);
        }
    }

    #[test]
    fn pre_gst_clamped_to_gst_plus_delta() {
        let mut n = net(NetworkConfig { gst: 5_000, delta: 100, pre_gst_delay: (10, 100_000), ..Default::default() });
        for _ in 0..1_000 {
            assert!(n.send(ValidatorId(1), ValidatorId(2), ping()).unwrap() <= 5_100);
        }
        n.set_behavior(ValidatorId(3), ByzantineBehavior::Delayed(10));
        let late = (0..200).filter_map(|_| n.send(ValidatorId(3), ValidatorId(2), ping())).max().unwrap();
        assert!(late > 5_100, "Byzantine senders get no delivery bound");
    }

    #[test]
    fn same_seed_same_schedule() {
        let run = || {
            let mut n = net(NetworkConfig { gst: 1_000, drop_before_gst: 0.3, seed: 9, ..Default::default() });
            (0..500).map(|_| n.send(ValidatorId(1), ValidatorId(2), ping())).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.iter().any(Option::is_none));
    }

    #[test]
    fn events_pop_in_time_then_seq_order() {
        let mut n = net(NetworkConfig::default());
        n.schedule_timer(50, ValidatorId(1), Timer::Tick);
        n.schedule_timer(10, ValidatorId(2), Timer::Tick);
        n.schedule_timer(10, ValidatorId(3), Timer::Tick);
        let order: Vec<ValidatorId> = std::iter::from_fn(|| n.next_event()).map(|e| e.dest).collect();
        assert_eq!(order, [ValidatorId(2), ValidatorId(3), ValidatorId(1)]);
        assert!(n.is_empty());
    }

    #[test]
    fn behaviours() {
        let schedule = LeaderSchedule::new(Committee::unit(4), 0).with_overrides([(3, ValidatorId(2))]);
        assert!(apply_behavior(Some(ByzantineBehavior::Silent), ping(), &schedule).is_none());
        assert_eq!("delayed:10".parse::<ByzantineBehavior>(), Ok(ByzantineBehavior::Delayed(10)));
        assert!("loud".parse::<ByzantineBehavior>().is_err());
    }
}
