//! Runs a scenario to completion and checks safety properties along the way.
//!
//! A run is a pure function of the scenario (including its seed): all
//! randomness comes from seeded generators and every collection iterated for
//! output is ordered.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::consensus::{Bullshark, CommittedSubDag, LeaderSchedule, Outcome};
use crate::dag_builder::DagBuilder;
use crate::execution::{EffectsLog, ExecutionConfig, FaultPlan, TxOp};
use crate::node::{CommitRecord, NodeOutput, Validator, ValidatorConfig};
use crate::primary::PrimaryConfig;
use crate::scenario::{Mode, Scenario};
use crate::simnet::{ByzantineBehavior, EventKind, NetStats, NetworkConfig, Simnet, TraceRecord};
use crate::types::{Certificate, Committee, Digest, KeyRing, Round, SimTime, Transaction, ValidatorId};
use crate::worker::WorkerConfig;

/// Safety and liveness properties checked by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Property {
    Integrity,
    Containment,
    Causality,
    ChainQuality,
    GcBound,
    CommitOnce,
    MonotoneAnchors,
    PrefixAgreement,
    EffectsAgreement,
    SafeSkip,
    Availability,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub property: Property,
    pub replica: Option<ValidatorId>,
    pub time: SimTime,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    AllSettled,
    TargetRound,
    AtRound,
    MaxTime,
    Quiescent,
    ScriptDone,
}

#[derive(Clone, Debug)]
pub struct ReplicaReport {
    pub id: ValidatorId,
    pub behavior: Option<ByzantineBehavior>,
    pub commit_log: Vec<CommitRecord>,
    pub effects: EffectsLog,
    pub aborted: BTreeSet<Digest>,
    pub parked: BTreeSet<Digest>,
    pub anchors: Vec<(Round, ValidatorId)>,
    pub skipped: Vec<(Round, ValidatorId)>,
    pub last_committed_round: Round,
    pub current_round: Round,
    pub gc_round: Round,
    pub crashes: u64,
    pub metrics: Vec<(&'static str, String)>,
}

impl ReplicaReport {
    pub fn is_honest(&self) -> bool {
        self.behavior.is_none()
    }

    fn settled(&self) -> usize {
        self.effects.len() + self.aborted.len() + self.parked.len()
    }
}

/// Everything a run produced.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub committee: Committee,
    pub schedule: LeaderSchedule,
    pub replicas: Vec<ReplicaReport>,
    pub violations: Vec<Violation>,
    pub stop: StopReason,
    pub end_time: SimTime,
    pub events: u64,
    pub net: NetStats,
    pub expected_txs: usize,
    pub trace: Vec<TraceRecord>,
    /// Every certificate stored by the first honest replica, and which of
    /// them it committed.
    pub dag: Vec<Certificate>,
    pub committed: BTreeSet<Digest>,
}

impl RunReport {
    pub fn honest(&self) -> impl Iterator<Item = &ReplicaReport> {
        self.replicas.iter().filter(|r| r.is_honest())
    }

    pub fn is_safe(&self) -> bool {
        self.violations.is_empty()
    }

    /// Whether every honest replica settled every submitted transaction.
    pub fn all_settled(&self) -> bool {
        self.honest().all(|r| r.settled() >= self.expected_txs)
    }

    pub fn min_committed_round(&self) -> Round {
        self.honest().map(|r| r.last_committed_round).min().unwrap_or(0)
    }

    /// `replica,metric,value` rows, sorted by replica then metric.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("replica,metric,value\n");
        for r in &self.replicas {
            let mut rows = r.metrics.clone();
            rows.sort();
            for (m, v) in rows {
                s.push_str(&format!("{},{m},{v}\n", r.id.0));
            }
        }
        let global = [
            ("end_time_ms", self.end_time.to_string()),
            ("events", self.events.to_string()),
            ("messages_delivered", self.net.delivered.to_string()),
            ("messages_dropped", self.net.dropped.to_string()),
            ("messages_sent", self.net.sent.to_string()),
            ("violations", self.violations.len().to_string()),
        ];
        for (m, v) in global {
            s.push_str(&format!("all,{m},{v}\n"));
        }
        s
    }
}

/// Extra controls beyond the scenario file.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Stop once the first honest replica's DAG reaches this round.
    pub stop_at_round: Option<Round>,
}

const MAX_VIOLATIONS: usize = 64;

pub fn run_scenario(scenario: &Scenario) -> RunReport {
    run_with(scenario, RunOptions::default())
}

pub fn run_with(scenario: &Scenario, options: RunOptions) -> RunReport {
    match scenario.mode {
        Mode::Simulated => Sim::new(scenario, options).run(),
        Mode::DagScript => run_script(scenario),
    }
}

/// Client transactions for a scenario, in submission order.
pub fn generate_load(scenario: &Scenario) -> Vec<Transaction> {
    let load = &scenario.load;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ 0x6c6f_6164);
    (0..load.txs)
        .map(|i| {
            let op = if rng.gen_range(0..100) < load.swap_percent {
                let a = rng.gen_range(0..load.keys.max(2));
                let mut b = rng.gen_range(0..load.keys.max(2));
                if b == a {
                    b = (a + 1) % load.keys.max(2);
                }
                TxOp::Swap { a, b }
            } else {
                let mut value = vec![0u8; load.tx_size - 9];
                rng.fill(value.as_mut_slice());
                TxOp::Write { key: rng.gen_range(0..load.keys.max(1)), value }
            };
            let fee = rng.gen_range(load.fee_min..=load.fee_max);
            Transaction::new(op.encode(), fee, i as u64)
        })
        .collect()
}

fn validator_config(scenario: &Scenario, behavior: Option<ByzantineBehavior>, faults: FaultPlan) -> ValidatorConfig {
    let p = &scenario.protocol;
    ValidatorConfig {
        primary: PrimaryConfig {
            min_digests: p.min_digests,
            max_digests: p.max_digests,
            max_header_delay: p.max_header_delay,
            gc_depth: p.gc_depth,
            leader_wait: p.leader_wait,
            ..PrimaryConfig::default()
        },
        worker: WorkerConfig { batch_size_limit: p.batch_size_limit, batch_timeout: p.batch_timeout },
        workers: scenario.workers_per_validator,
        execution: ExecutionConfig {
            max_attempts: scenario.execution.max_attempts,
            retry_interval: scenario.execution.retry_interval,
        },
        faults,
        retry_interval: scenario.retry_interval,
        equivocate: behavior == Some(ByzantineBehavior::Equivocator),
        avoid_anchors: behavior == Some(ByzantineBehavior::VoteWithholder),
    }
}

struct Sim<'a> {
    scenario: &'a Scenario,
    options: RunOptions,
    committee: Committee,
    keys: Arc<KeyRing>,
    schedule: LeaderSchedule,
    behaviors: BTreeMap<ValidatorId, ByzantineBehavior>,
    nodes: Vec<Validator>,
    net: Simnet,
    violations: Vec<Violation>,
    /// (round, author) to the certificate digest any honest replica stored.
    seen: HashMap<(Round, ValidatorId), Digest>,
    committed_once: Vec<HashSet<Digest>>,
    last_anchor: Vec<Round>,
    crashes: Vec<u64>,
    latency_ms: Vec<(u128, u64)>,
    latency_rounds: Vec<(u64, u64)>,
    first_honest: usize,
    dag: Vec<Certificate>,
    expected: usize,
    events: u64,
}

impl<'a> Sim<'a> {
    fn new(scenario: &'a Scenario, options: RunOptions) -> Self {
        let committee = scenario.committee();
        let keys = Arc::new(KeyRing::new(&committee));
        let schedule = LeaderSchedule::new(committee.clone(), scenario.seed).with_overrides(scenario.leader_overrides());
        let behaviors = scenario.byzantine();
        let load = generate_load(scenario);
        let transient: BTreeMap<Digest, u32> = scenario
            .execution
            .transient
            .iter()
            .filter_map(|[i, k]| load.get(*i as usize).map(|tx| (tx.digest(), *k as u32)))
            .collect();
        let crashes = scenario.crashes();
        let nodes: Vec<Validator> = committee
            .ids()
            .map(|id| {
                let faults = FaultPlan { transient: transient.clone(), crash_before_commit: crashes.get(&id).copied() };
                let config = validator_config(scenario, behaviors.get(&id).copied(), faults);
                Validator::new(id, committee.clone(), keys.clone(), schedule.clone(), config)
            })
            .collect();
        let mut net = Simnet::new(
            NetworkConfig {
                gst: scenario.gst,
                delta: scenario.delta,
                latency: (scenario.latency[0], scenario.latency[1]),
                pre_gst_delay: (scenario.pre_gst_delay[0], scenario.pre_gst_delay[1]),
                drop_before_gst: scenario.drop_before_gst,
                seed: scenario.seed,
            },
            schedule.clone(),
        );
        for (id, b) in &behaviors {
            net.set_behavior(*id, *b);
        }
        for (id, extra) in scenario.slow() {
            net.set_slow(id, extra);
        }
        if scenario.trace {
            net.enable_trace();
        }

        let honest: Vec<ValidatorId> = committee.ids().filter(|id| !behaviors.contains_key(id)).collect();
        let expected: BTreeSet<Digest> = load.iter().map(Transaction::digest).collect();
        if !honest.is_empty() {
            let l = &scenario.load;
            for (i, tx) in load.iter().enumerate() {
                net.inject_client(l.start + i as u64 * l.interval, honest[i % honest.len()], tx.clone());
            }
            let resubmit_at = l.start + load.len() as u64 * l.interval;
            for (j, tx) in load.iter().take(l.duplicates).enumerate() {
                net.inject_client(resubmit_at + j as u64 * l.interval, honest[(j + 1) % honest.len()], tx.clone());
            }
        }

        let n = nodes.len();
        let first_honest = nodes.iter().position(|v| !behaviors.contains_key(&v.id())).unwrap_or(0);
        Sim {
            scenario,
            options,
            committee,
            keys,
            schedule,
            behaviors,
            nodes,
            net,
            violations: Vec::new(),
            seen: HashMap::new(),
            committed_once: vec![HashSet::new(); n],
            last_anchor: vec![0; n],
            crashes: vec![0; n],
            latency_ms: vec![(0, 0); n],
            latency_rounds: vec![(0, 0); n],
            first_honest,
            dag: Vec::new(),
            expected: expected.len(),
            events: 0,
        }
    }

    fn index(&self, id: ValidatorId) -> usize {
        self.nodes.iter().position(|v| v.id() == id).expect("committee member")
    }

    fn is_honest(&self, id: ValidatorId) -> bool {
        !self.behaviors.contains_key(&id)
    }

    fn violation(&mut self, property: Property, replica: Option<ValidatorId>, detail: String) {
        if self.violations.len() < MAX_VIOLATIONS {
            let time = self.net.now();
            log::warn!("{property:?} violated at {time}: {detail}");
            self.violations.push(Violation { property, replica, time, detail });
        }
    }

    fn run(mut self) -> RunReport {
        for i in 0..self.nodes.len() {
            let out = self.nodes[i].start(0);
            let id = self.nodes[i].id();
            self.apply(id, out);
        }
        let stop = loop {
            let Some(at) = self.net.peek_time() else { break StopReason::Quiescent };
            if at > self.scenario.max_time {
                break StopReason::MaxTime;
            }
            let ev = self.net.next_event().expect("peeked");
            self.events += 1;
            let i = self.index(ev.dest);
            let now = ev.deliver_at;
            let out = match ev.kind {
                EventKind::Deliver { from, msg } => self.nodes[i].on_message(from, msg, now),
                EventKind::Timer(t) => self.nodes[i].on_timer(t, now),
                EventKind::Client(tx) => {
                    self.net.record(ev.dest, ev.dest, "SubmitTransaction", Some(tx.digest()));
                    self.nodes[i].on_client_tx(tx, now)
                }
            };
            self.apply(ev.dest, out);
            if let Some(reason) = self.should_stop() {
                break reason;
            }
        };
        self.finish(stop)
    }

    fn should_stop(&self) -> Option<StopReason> {
        let honest = || self.nodes.iter().filter(|v| self.is_honest(v.id()));
        if let Some(r) = self.options.stop_at_round {
            if self.nodes[self.first_honest].primary().dag().highest_round() >= r {
                return Some(StopReason::AtRound);
            }
        }
        if let Some(t) = self.scenario.target_round {
            if honest().all(|v| v.consensus().state.last_committed_round >= t) {
                return Some(StopReason::TargetRound);
            }
        } else if self.expected > 0 && self.options.stop_at_round.is_none() {
            let settled = |v: &Validator| {
                let e = v.executor();
                e.effects().len() + e.aborted().len() + e.parked().count()
            };
            if honest().all(|v| settled(v) >= self.expected) {
                return Some(StopReason::AllSettled);
            }
        }
        None
    }

    fn apply(&mut self, id: ValidatorId, out: NodeOutput) {
        let now = self.net.now();
        for (kind, digest) in &out.local {
            self.net.record(id, id, kind, *digest);
        }
        for (to, msg) in out.sends {
            self.net.send(id, to, msg);
        }
        for (at, timer) in out.timers {
            self.net.schedule_timer(at, id, timer);
        }
        let i = self.index(id);
        if out.crashed {
            self.crashes[i] += 1;
        }
        if !self.is_honest(id) {
            return;
        }
        for cert in &out.stored {
            self.check_certificate(id, cert);
            let gc_round = self.nodes[i].primary().dag().gc_round();
            if cert.round() < gc_round {
                self.violation(Property::GcBound, Some(id), format!("{} stored below gc round {gc_round}", cert.label()));
            }
            if i == self.first_honest {
                self.dag.push(cert.clone());
            }
        }
        for s in &out.committed {
            self.check_commit(i, s, now);
        }
        let dag = self.nodes[i].primary().dag();
        let committed = self.nodes[i].consensus().state.last_committed_round;
        let (retained, highest) = (dag.rounds_retained() as u64, dag.highest_round());
        let bound = self.scenario.protocol.gc_depth + highest.saturating_sub(committed) + 1;
        if retained > bound {
            self.violation(Property::GcBound, Some(id), format!("{retained} rounds retained, bound {bound}"));
        }
    }

    fn check_certificate(&mut self, id: ValidatorId, cert: &Certificate) {
        if cert.verify(&self.committee, &self.keys).is_err() || cert.header().digest() != cert.digest() {
            self.violation(Property::Integrity, Some(id), format!("{} fails verification", cert.label()));
        }
        match self.seen.get(&(cert.round(), cert.author())) {
            Some(d) if *d != cert.digest() => {
                self.violation(Property::Containment, Some(id), format!("two certificates for {}", cert.label()));
            }
            Some(_) => {}
            None => {
                self.seen.insert((cert.round(), cert.author()), cert.digest());
            }
        }
        if cert.round() <= 1 {
            return;
        }
        let strong: Vec<ValidatorId> = cert.header().strong_parents().map(|p| p.author).collect();
        let stake = self.committee.stake_of(&strong).unwrap_or(0);
        if stake < self.committee.quorum_threshold() {
            self.violation(Property::Causality, Some(id), format!("{} has strong-parent stake {stake}", cert.label()));
        }
        let honest: Vec<ValidatorId> = strong.into_iter().filter(|a| self.is_honest(*a)).collect();
        let honest_stake = self.committee.stake_of(&honest).unwrap_or(0);
        let byz_stake: u64 = self.behaviors.keys().map(|v| self.committee.stake(*v)).sum();
        // Only meaningful when the fault assumption holds.
        if byz_stake <= self.committee.max_faulty() && honest_stake < self.committee.validity_threshold() {
            self.violation(
                Property::ChainQuality,
                Some(id),
                format!("{} has honest parent stake {honest_stake}", cert.label()),
            );
        }
    }

    fn check_commit(&mut self, i: usize, s: &CommittedSubDag, now: SimTime) {
        let id = self.nodes[i].id();
        let leader_round = s.leader.round();
        if leader_round <= self.last_anchor[i] {
            self.violation(
                Property::MonotoneAnchors,
                Some(id),
                format!("anchor round {leader_round} after {}", self.last_anchor[i]),
            );
        }
        self.last_anchor[i] = leader_round;
        if s.leader.author() != self.schedule.leader(leader_round) {
            self.violation(Property::MonotoneAnchors, Some(id), format!("{} is not a scheduled anchor", s.leader.label()));
        }
        for cert in &s.certificates {
            if !self.committed_once[i].insert(cert.digest()) {
                self.violation(Property::CommitOnce, Some(id), format!("{} committed twice", cert.label()));
            }
            self.latency_rounds[i].0 += leader_round - cert.round();
            self.latency_rounds[i].1 += 1;
            let author = self.index(cert.author());
            for (d, w) in &cert.header().payload {
                let Some(worker) = self.nodes[author].workers().get(*w as usize) else { continue };
                let (Some(sealed), Some(batch)) = (worker.sealed_at().get(d), worker.batch(d)) else { continue };
                let count = batch.transactions.len() as u64;
                self.latency_ms[i].0 += u128::from(now.saturating_sub(*sealed)) * u128::from(count);
                self.latency_ms[i].1 += count;
            }
        }
    }

    fn finish(mut self, stop: StopReason) -> RunReport {
        let end_time = self.net.now();
        let mut replicas = Vec::with_capacity(self.nodes.len());
        for (i, v) in self.nodes.iter().enumerate() {
            let dag = v.primary().dag();
            let e = v.executor();
            let m = &v.primary().metrics;
            let ratio = |(a, b): (u128, u64)| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let committed_rounds: BTreeSet<Round> = v.commit_log().iter().map(|c| c.round).collect();
            let metrics = vec![
                ("aborted_txs", e.aborted().len().to_string()),
                ("certificates_formed", m.certificates_formed.to_string()),
                ("certificates_per_round", format!("{:.3}", v.commit_log().len() as f64 / committed_rounds.len().max(1) as f64)),
                ("committed_certs", v.commit_log().len().to_string()),
                ("committed_subdags", v.committed_anchors().len().to_string()),
                ("committed_txs", e.effects().len().to_string()),
                ("crashes", self.crashes[i].to_string()),
                ("current_round", dag.current_round().to_string()),
                ("deferred_txs", e.parked().count().to_string()),
                ("equivocations_refused", m.equivocations_refused.to_string()),
                ("exec_retries", e.retries.to_string()),
                ("fetches_sent", m.fetches_sent.to_string()),
                ("headers_proposed", m.headers_proposed.to_string()),
                ("last_committed_round", v.consensus().state.last_committed_round.to_string()),
                ("max_rounds_retained", v.max_rounds_retained().to_string()),
                ("mean_latency_ms", format!("{:.3}", ratio(self.latency_ms[i]))),
                ("mean_latency_rounds", format!("{:.3}", ratio((self.latency_rounds[i].0 as u128, self.latency_rounds[i].1)))),
                ("skipped_anchors", v.consensus().skipped().len().to_string()),
                ("votes_cast", m.votes_cast.to_string()),
            ];
            replicas.push(ReplicaReport {
                id: v.id(),
                behavior: self.behaviors.get(&v.id()).copied(),
                commit_log: v.commit_log().to_vec(),
                effects: e.effects().clone(),
                aborted: e.aborted().clone(),
                parked: e.parked().map(Transaction::digest).collect(),
                anchors: v.committed_anchors().to_vec(),
                skipped: v.consensus().skipped().to_vec(),
                last_committed_round: v.consensus().state.last_committed_round,
                current_round: dag.current_round(),
                gc_round: dag.gc_round(),
                crashes: self.crashes[i],
                metrics,
            });
        }

        // Availability: every committed payload is held by enough honest
        // workers to be retrievable.
        let honest_nodes: Vec<&Validator> = self.nodes.iter().filter(|v| !self.behaviors.contains_key(&v.id())).collect();
        let mut payloads: BTreeSet<Digest> = BTreeSet::new();
        let committed_certs: HashSet<Digest> =
            honest_nodes.iter().flat_map(|v| v.commit_log().iter().map(|c| c.digest)).collect();
        for cert in self.dag.iter().filter(|c| committed_certs.contains(&c.digest())) {
            payloads.extend(cert.header().payload.iter().map(|(d, _)| *d));
        }
        let mut unavailable = Vec::new();
        for d in &payloads {
            let holders: Vec<ValidatorId> = honest_nodes.iter().filter(|v| v.stores_batch(d)).map(|v| v.id()).collect();
            if self.committee.stake_of(&holders).unwrap_or(0) < self.committee.validity_threshold() {
                unavailable.push(*d);
            }
        }
        for d in unavailable.into_iter().take(8) {
            self.violation(Property::Availability, None, format!("batch {} held by too few honest workers", d.to_hex()));
        }

        let committed: BTreeSet<Digest> = self.nodes[self.first_honest].commit_log().iter().map(|c| c.digest).collect();
        let mut report = RunReport {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            committee: self.committee.clone(),
            schedule: self.schedule.clone(),
            replicas,
            violations: std::mem::take(&mut self.violations),
            stop,
            end_time,
            events: self.events,
            net: self.net.stats.clone(),
            expected_txs: self.expected,
            trace: self.net.trace().map(<[TraceRecord]>::to_vec).unwrap_or_default(),
            dag: std::mem::take(&mut self.dag),
            committed,
        };
        let end = check_agreement(&report);
        report.violations.extend(end);
        report
    }
}

/// End-of-run checks across honest replicas: prefix agreement of commit and
/// effects logs, and that no skipped anchor slot was committed anywhere.
pub fn check_agreement(report: &RunReport) -> Vec<Violation> {
    let mut out = Vec::new();
    let honest: Vec<&ReplicaReport> = report.honest().collect();
    let v = |property, replica: Option<ValidatorId>, detail: String| Violation {
        property,
        replica,
        time: report.end_time,
        detail,
    };
    for (a, ra) in honest.iter().enumerate() {
        for rb in &honest[a + 1..] {
            if let Some(k) = first_divergence(&ra.commit_log, &rb.commit_log, |x, y| x.digest == y.digest) {
                out.push(v(
                    Property::PrefixAgreement,
                    Some(rb.id),
                    format!("commit logs of {} and {} diverge at index {k}", ra.id, rb.id),
                ));
            }
            if let Some(k) = first_divergence(ra.effects.entries(), rb.effects.entries(), |x, y| x == y) {
                out.push(v(
                    Property::EffectsAgreement,
                    Some(rb.id),
                    format!("effects of {} and {} diverge at index {k}", ra.id, rb.id),
                ));
            }
        }
    }
    let committed: BTreeSet<(Round, ValidatorId)> = honest.iter().flat_map(|r| r.anchors.iter().copied()).collect();
    for r in &honest {
        for slot in &r.skipped {
            if committed.contains(slot) {
                out.push(v(
                    Property::SafeSkip,
                    Some(r.id),
                    format!("{} skipped the anchor at round {} that another replica committed", r.id, slot.0),
                ));
            }
        }
    }
    out
}

fn first_divergence<T>(a: &[T], b: &[T], eq: impl Fn(&T, &T) -> bool) -> Option<usize> {
    a.iter().zip(b).position(|(x, y)| !eq(x, y))
}

/// Parses a "v<author>@<round>" label.
pub fn parse_label(label: &str) -> Option<(ValidatorId, Round)> {
    let (a, r) = label.trim().trim_start_matches('v').split_once('@')?;
    Some((ValidatorId(a.parse().ok()?), r.parse().ok()?))
}

/// Feeds an explicit DAG to one ordering instance per replica, in each
/// replica's delivery order.
fn run_script(scenario: &Scenario) -> RunReport {
    let script = scenario.script.as_ref().expect("validated");
    let committee = scenario.committee();
    let schedule = LeaderSchedule::new(committee.clone(), scenario.seed).with_overrides(scenario.leader_overrides());
    let mut b = DagBuilder::with_committee(committee.clone());
    let mut by_label: BTreeMap<(ValidatorId, Round), Certificate> = BTreeMap::new();
    let mut vertices: Vec<_> = script.vertices.clone();
    vertices.sort_by_key(|v| (v.round, v.author));
    for v in &vertices {
        let cert = b.add_vertex(v.round, ValidatorId(v.author), v.parents.as_deref());
        by_label.insert((cert.author(), cert.round()), cert);
    }

    let mut violations = Vec::new();
    let mut replicas = Vec::new();
    for (key, order) in &script.deliveries {
        let id = ValidatorId(key.trim_start_matches('v').parse().expect("validated"));
        let mut bs = Bullshark::new(committee.clone(), schedule.clone(), scenario.protocol.gc_depth);
        let mut log = Vec::new();
        let mut anchors = Vec::new();
        let mut delivered: HashSet<Digest> = HashSet::new();
        let mut once: HashSet<Digest> = HashSet::new();
        for label in order {
            let Some(cert) = parse_label(label).and_then(|(a, r)| by_label.get(&(a, r))) else {
                violations.push(Violation {
                    property: Property::Integrity,
                    replica: Some(id),
                    time: 0,
                    detail: format!("unknown vertex {label:?}"),
                });
                continue;
            };
            let closed = cert.parents().iter().all(|p| p.round == 0 || delivered.contains(&p.digest));
            if !closed {
                violations.push(Violation {
                    property: Property::Causality,
                    replica: Some(id),
                    time: 0,
                    detail: format!("{label} delivered before its parents"),
                });
                continue;
            }
            delivered.insert(cert.digest());
            if let Outcome::Commit(subdags) = bs.process_certificate(cert.clone()) {
                for s in subdags {
                    anchors.push((s.leader.round(), s.leader.author()));
                    for c in &s.certificates {
                        if !once.insert(c.digest()) {
                            violations.push(Violation {
                                property: Property::CommitOnce,
                                replica: Some(id),
                                time: 0,
                                detail: format!("{} committed twice", c.label()),
                            });
                        }
                        log.push(CommitRecord {
                            index: log.len() as u64,
                            leader_round: s.leader.round(),
                            author: c.author(),
                            round: c.round(),
                            digest: c.digest(),
                        });
                    }
                }
            }
        }
        if anchors.windows(2).any(|w| w[0].0 >= w[1].0) {
            violations.push(Violation {
                property: Property::MonotoneAnchors,
                replica: Some(id),
                time: 0,
                detail: "anchor rounds not increasing".into(),
            });
        }
        let metrics = vec![
            ("committed_certs", log.len().to_string()),
            ("committed_subdags", anchors.len().to_string()),
            ("last_committed_round", bs.state.last_committed_round.to_string()),
            ("skipped_anchors", bs.skipped().len().to_string()),
        ];
        replicas.push(ReplicaReport {
            id,
            behavior: None,
            commit_log: log,
            effects: EffectsLog::default(),
            aborted: BTreeSet::new(),
            parked: BTreeSet::new(),
            anchors,
            skipped: bs.skipped().to_vec(),
            last_committed_round: bs.state.last_committed_round,
            current_round: bs.dag().highest_round(),
            gc_round: bs.state.gc_round,
            crashes: 0,
            metrics,
        });
    }
    let committed = replicas.first().map(|r| r.commit_log.iter().map(|c| c.digest).collect()).unwrap_or_default();
    let mut report = RunReport {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        committee,
        schedule,
        replicas,
        violations,
        stop: StopReason::ScriptDone,
        end_time: 0,
        events: 0,
        net: NetStats::default(),
        expected_txs: 0,
        trace: Vec::new(),
        dag: b.vertices(),
        committed,
    };
    let end = check_agreement(&report);
    report.violations.extend(end);
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke(extra: &str) -> Scenario {
        Scenario::from_toml(&format!(
            "name = \"t\"\nn = 4\nseed = 3\nmax_time = 120000\n{extra}\n[load]\ntxs = 60\ninterval = 20\n[protocol]\nmin_digests = 1\nmax_header_delay = 200\n"
        ))
        .unwrap()
    }

    #[test]
    fn honest_run_settles_everything() {
        let r = run_scenario(&smoke(""));
        assert!(r.is_safe(), "{:?}", r.violations);
        assert_eq!(r.stop, StopReason::AllSettled);
        assert!(r.all_settled());
        for rep in r.honest() {
            assert_eq!(rep.effects.len(), 60);
        }
    }

    #[test]
    fn same_seed_same_report() {
        let s = smoke("");
        let (a, b) = (run_scenario(&s), run_scenario(&s));
        assert_eq!(a.metrics_csv(), b.metrics_csv());
        assert_eq!(a.replicas[0].commit_log, b.replicas[0].commit_log);
    }

    #[test]
    fn one_silent_validator_is_tolerated() {
        let r = run_scenario(&smoke("[byzantine]\n2 = \"silent\""));
        assert!(r.is_safe(), "{:?}", r.violations);
        assert!(r.all_settled());
    }

    #[test]
    fn labels_parse() {
        assert_eq!(parse_label("v3@7"), Some((ValidatorId(3), 7)));
        assert_eq!(parse_label("x"), None);
    }
}
