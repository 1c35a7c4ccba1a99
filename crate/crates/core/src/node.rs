//! One validator: a primary, its workers, the ordering layer and the
//! executor, wired together behind a message/timer interface.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use crate::consensus::{Bullshark, CommittedSubDag, LeaderSchedule, Outcome};
use crate::execution::{ConsensusOutput, Drive, ExecutionConfig, Executor, FaultPlan};
use crate::primary::{Primary, PrimaryAction, PrimaryConfig, PrimaryMessage};
use crate::types::{Batch, Certificate, Committee, Digest, KeyRing, Round, SimTime, Transaction, ValidatorId, WorkerId};
use crate::worker::{Worker, WorkerConfig, WorkerMessage, WorkerOutput};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NetMessage {
    Primary(PrimaryMessage),
    Worker { worker: WorkerId, msg: WorkerMessage },
}

impl NetMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            NetMessage::Primary(m) => m.kind(),
            NetMessage::Worker { msg, .. } => msg.kind(),
        }
    }

    pub fn digest(&self) -> Option<Digest> {
        match self {
            NetMessage::Primary(m) => m.digest(),
            NetMessage::Worker { msg, .. } => match msg {
                WorkerMessage::ReportBatch { digest, .. } | WorkerMessage::BatchAck(digest) => Some(*digest),
                WorkerMessage::RequestBatches(ds) => ds.first().copied(),
                WorkerMessage::BatchList(bs) => bs.first().map(Batch::digest),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Timer {
    Tick,
    Seal(WorkerId),
    Propose,
    ExecRetry,
}

#[derive(Clone, Debug)]
pub struct ValidatorConfig {
    pub primary: PrimaryConfig,
    pub worker: WorkerConfig,
    pub workers: u32,
    pub execution: ExecutionConfig,
    pub faults: FaultPlan,
    pub retry_interval: SimTime,
    pub equivocate: bool,
    pub avoid_anchors: bool,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        ValidatorConfig {
            primary: PrimaryConfig::default(),
            worker: WorkerConfig::default(),
            workers: 1,
            execution: ExecutionConfig::default(),
            faults: FaultPlan::default(),
            retry_interval: 500,
            equivocate: false,
            avoid_anchors: false,
        }
    }
}

/// One line of the commit log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommitRecord {
    pub index: u64,
    pub leader_round: Round,
    pub author: ValidatorId,
    pub round: Round,
    pub digest: Digest,
}

impl CommitRecord {
    pub fn to_line(&self) -> String {
        format!("{},{},{},{},{}", self.index, self.leader_round, self.author.0, self.round, self.digest.to_hex())
    }
}

/// Everything a handler asks the outside world to do.
#[derive(Debug, Default)]
pub struct NodeOutput {
    pub sends: Vec<(ValidatorId, NetMessage)>,
    pub timers: Vec<(SimTime, Timer)>,
    /// Intra-validator hand-offs, for the trace: (kind, digest).
    pub local: Vec<(&'static str, Option<Digest>)>,
    /// Certificates newly stored in the primary's DAG.
    pub stored: Vec<Certificate>,
    pub committed: Vec<CommittedSubDag>,
    /// Injected execution crash fired.
    pub crashed: bool,
}

pub struct Validator {
    id: ValidatorId,
    config: ValidatorConfig,
    primary: Primary,
    workers: Vec<Worker>,
    consensus: Bullshark,
    executor: Executor,
    next_worker: usize,
    /// Committed sub-DAGs waiting for batches we do not hold yet.
    awaiting_batches: VecDeque<CommittedSubDag>,
    /// Durable log of every output, replayed after a crash.
    outputs: Vec<ConsensusOutput>,
    exec_cursor: usize,
    exec_blocked_until: Option<SimTime>,
    commit_log: Vec<CommitRecord>,
    commit_times: BTreeMap<Digest, SimTime>,
    committed_anchors: Vec<(Round, ValidatorId)>,
    max_rounds_retained: usize,
}

impl Validator {
    pub fn new(id: ValidatorId, committee: Committee, keys: Arc<KeyRing>, schedule: LeaderSchedule, config: ValidatorConfig) -> Self {
        let mut primary = Primary::new(id, committee.clone(), keys, config.primary.clone(), schedule.clone());
        primary.set_equivocate(config.equivocate);
        primary.set_avoid_anchors(config.avoid_anchors);
        let workers = (0..config.workers).map(|w| Worker::new(id, w, committee.clone(), config.worker.clone())).collect();
        let consensus = Bullshark::new(committee, schedule, config.primary.gc_depth);
        let executor = Executor::new(config.execution.clone(), config.faults.clone());
        Validator {
            id,
            config,
            primary,
            workers,
            consensus,
            executor,
            next_worker: 0,
            awaiting_batches: VecDeque::new(),
            outputs: Vec::new(),
            exec_cursor: 0,
            exec_blocked_until: None,
            commit_log: Vec::new(),
            commit_times: BTreeMap::new(),
            committed_anchors: Vec::new(),
            max_rounds_retained: 0,
        }
    }

    pub fn id(&self) -> ValidatorId {
        self.id
    }

    pub fn primary(&self) -> &Primary {
        &self.primary
    }

    pub fn workers(&self) -> &[Worker] {
        &self.workers
    }

    pub fn consensus(&self) -> &Bullshark {
        &self.consensus
    }

    pub fn executor(&self) -> &Executor {
        &self.executor
    }

    pub fn commit_log(&self) -> &[CommitRecord] {
        &self.commit_log
    }

    pub fn commit_time(&self, cert: &Digest) -> Option<SimTime> {
        self.commit_times.get(cert).copied()
    }

    pub fn committed_anchors(&self) -> &[(Round, ValidatorId)] {
        &self.committed_anchors
    }

    pub fn max_rounds_retained(&self) -> usize {
        self.max_rounds_retained
    }

    pub fn stores_batch(&self, digest: &Digest) -> bool {
        self.workers.iter().any(|w| w.stored(digest))
    }

    /// Initial timers.
    pub fn start(&mut self, now: SimTime) -> NodeOutput {
        let mut out = NodeOutput::default();
        out.timers.push((now + self.config.retry_interval, Timer::Tick));
        out.timers.push((self.primary.propose_deadline().max(now), Timer::Propose));
        out
    }

    /// A client submission; routed round-robin over this validator's workers.
    pub fn on_client_tx(&mut self, tx: Transaction, now: SimTime) -> NodeOutput {
        let mut out = NodeOutput::default();
        let w = self.next_worker % self.workers.len();
        self.next_worker += 1;
        let worker = &mut self.workers[w];
        let was_empty = worker.pending_len() == 0;
        if let Err(e) = worker.validate_tx(tx, now) {
            log::debug!("{}: rejected transaction: {e}", self.id);
            return out;
        }
        if was_empty {
            if let Some(t) = worker.seal_deadline() {
                out.timers.push((t, Timer::Seal(w as WorkerId)));
            }
        }
        self.seal(w, now, &mut out);
        self.after_event(now, &mut out);
        out
    }

    fn seal(&mut self, w: usize, now: SimTime, out: &mut NodeOutput) {
        let mut wout = Vec::new();
        while let Some(batch) = self.workers[w].seal_batch(now) {
            self.workers[w].broadcast_batch(&batch, &mut wout);
        }
        if let Some(t) = self.workers[w].seal_deadline() {
            if t > now {
                out.timers.push((t, Timer::Seal(w as WorkerId)));
            }
        }
        self.handle_worker_outputs(w as WorkerId, wout, now, out);
    }

    pub fn on_message(&mut self, from: ValidatorId, msg: NetMessage, now: SimTime) -> NodeOutput {
        let mut out = NodeOutput::default();
        match msg {
            NetMessage::Worker { worker, msg } => {
                let Some(w) = self.workers.get_mut(worker as usize) else { return out };
                let mut wout = Vec::new();
                match msg {
                    WorkerMessage::ReportBatch { digest, batch } => {
                        if let Err(e) = w.handle_report_batch(digest, batch, from, &mut wout) {
                            log::debug!("{}: batch from {from} rejected: {e}", self.id);
                        }
                    }
                    WorkerMessage::BatchAck(d) => {
                        w.quorum_wait_ack(d, from, &mut wout);
                    }
                    WorkerMessage::RequestBatches(ds) => {
                        let batches = w.handle_request_batches(&ds);
                        if !batches.is_empty() {
                            wout.push(WorkerOutput::Send { to: from, msg: WorkerMessage::BatchList(batches) });
                        }
                    }
                    WorkerMessage::BatchList(bs) => {
                        w.handle_batch_list(bs, &mut wout);
                    }
                }
                self.handle_worker_outputs(worker, wout, now, &mut out);
            }
            NetMessage::Primary(m) => {
                let mut actions = Vec::new();
                let stored = self.primary.handle_message(from, m, &mut actions);
                self.handle_primary_actions(actions, now, &mut out);
                self.deliver_to_consensus(stored, now, &mut out);
            }
        }
        self.after_event(now, &mut out);
        out
    }

    pub fn on_timer(&mut self, timer: Timer, now: SimTime) -> NodeOutput {
        let mut out = NodeOutput::default();
        match timer {
            Timer::Tick => {
                for w in 0..self.workers.len() {
                    let mut wout = Vec::new();
                    self.workers[w].tick(&mut wout);
                    self.handle_worker_outputs(w as WorkerId, wout, now, &mut out);
                }
                let mut actions = Vec::new();
                self.primary.tick(&mut actions);
                self.handle_primary_actions(actions, now, &mut out);
                self.request_awaited_batches(&mut out);
                out.timers.push((now + self.config.retry_interval, Timer::Tick));
            }
            Timer::Seal(w) => self.seal(w as usize, now, &mut out),
            Timer::Propose => {}
            Timer::ExecRetry => {
                if self.exec_blocked_until.is_some_and(|t| t <= now) {
                    self.exec_blocked_until = None;
                }
            }
        }
        self.after_event(now, &mut out);
        out
    }

    fn handle_worker_outputs(&mut self, worker: WorkerId, wout: Vec<WorkerOutput>, now: SimTime, out: &mut NodeOutput) {
        let mut actions = Vec::new();
        let mut batch_arrived = false;
        for o in wout {
            match o {
                WorkerOutput::Send { to, msg } => out.sends.push((to, NetMessage::Worker { worker, msg })),
                WorkerOutput::ReportOwnBatch { digest, worker } => {
                    out.local.push(("ReportOwnBatch", Some(digest)));
                    self.primary.on_own_batch(digest, worker);
                }
                WorkerOutput::ReportOthersBatch { digest, .. } => {
                    out.local.push(("ReportOthersBatch", Some(digest)));
                    self.primary.on_others_batch(digest, &mut actions);
                    batch_arrived = true;
                }
            }
        }
        self.handle_primary_actions(actions, now, out);
        if batch_arrived {
            self.release_awaited(now, out);
        }
    }

    fn handle_primary_actions(&mut self, actions: Vec<PrimaryAction>, now: SimTime, out: &mut NodeOutput) {
        for a in actions {
            match a {
                PrimaryAction::Send { to, msg } => out.sends.push((to, NetMessage::Primary(msg))),
                PrimaryAction::Synchronize { worker, digests, source } => {
                    out.local.push(("Synchronize", digests.first().copied()));
                    let Some(w) = self.workers.get_mut(worker as usize) else { continue };
                    let mut wout = Vec::new();
                    w.handle_synchronize(&digests, source, &mut wout);
                    self.handle_worker_outputs(worker, wout, now, out);
                }
            }
        }
    }

    /// Proposes if a trigger fired, and keeps the delay timer armed.
    fn try_propose(&mut self, now: SimTime, out: &mut NodeOutput) {
        let mut actions = Vec::new();
        let (header, stored) = self.primary.try_propose(now, &mut actions);
        if header.is_some() {
            out.timers.push((self.primary.propose_deadline(), Timer::Propose));
        }
        self.handle_primary_actions(actions, now, out);
        self.deliver_to_consensus(stored, now, out);
    }

    fn deliver_to_consensus(&mut self, stored: Vec<Certificate>, now: SimTime, out: &mut NodeOutput) {
        for cert in stored {
            out.stored.push(cert.clone());
            if let Outcome::Commit(subdags) = self.consensus.process_certificate(cert) {
                for s in subdags {
                    self.record_commit(&s, now);
                    out.committed.push(s.clone());
                    self.awaiting_batches.push_back(s);
                }
                self.primary.garbage_collect(self.consensus.state.last_committed_round);
            }
        }
        self.release_awaited(now, out);
    }

    fn record_commit(&mut self, s: &CommittedSubDag, now: SimTime) {
        self.committed_anchors.push((s.leader.round(), s.leader.author()));
        for c in &s.certificates {
            self.commit_log.push(CommitRecord {
                index: self.commit_log.len() as u64,
                leader_round: s.leader.round(),
                author: c.author(),
                round: c.round(),
                digest: c.digest(),
            });
            self.commit_times.insert(c.digest(), now);
        }
    }

    fn find_batch(&self, digest: &Digest, worker: WorkerId) -> Option<&Batch> {
        self.workers.get(worker as usize).and_then(|w| w.batch(digest))
    }

    /// Moves committed sub-DAGs whose batches are all local into the
    /// durable output log, in commit order.
    fn release_awaited(&mut self, now: SimTime, out: &mut NodeOutput) {
        while let Some(front) = self.awaiting_batches.front() {
            let mut batches = Vec::new();
            let mut complete = true;
            for cert in &front.certificates {
                let mut list = Vec::new();
                for (d, w) in &cert.header().payload {
                    match self.find_batch(d, *w) {
                        Some(b) => list.push(b.clone()),
                        None => complete = false,
                    }
                }
                batches.push((cert.digest(), list));
            }
            if !complete {
                break;
            }
            let sub_dag = self.awaiting_batches.pop_front().expect("front exists");
            self.outputs.push(ConsensusOutput { sub_dag, batches });
        }
        self.run_executor(now, out);
    }

    fn request_awaited_batches(&mut self, out: &mut NodeOutput) {
        let mut wanted: BTreeMap<WorkerId, (BTreeSet<Digest>, ValidatorId)> = BTreeMap::new();
        for s in &self.awaiting_batches {
            for cert in &s.certificates {
                for (d, w) in &cert.header().payload {
                    if self.find_batch(d, *w).is_none() {
                        wanted.entry(*w).or_insert_with(|| (BTreeSet::new(), cert.author())).0.insert(*d);
                    }
                }
            }
        }
        for (worker, (digests, source)) in wanted {
            let Some(w) = self.workers.get_mut(worker as usize) else { continue };
            let digests: Vec<Digest> = digests.into_iter().collect();
            out.local.push(("Synchronize", digests.first().copied()));
            let mut wout = Vec::new();
            w.handle_synchronize(&digests, source, &mut wout);
            for o in wout {
                if let WorkerOutput::Send { to, msg } = o {
                    out.sends.push((to, NetMessage::Worker { worker, msg }));
                }
            }
        }
    }

    fn run_executor(&mut self, now: SimTime, out: &mut NodeOutput) {
        if self.exec_blocked_until.is_some() {
            return;
        }
        loop {
            if self.executor.is_idle() {
                let Some(next) = self.outputs.get(self.exec_cursor) else { return };
                self.exec_cursor += 1;
                if let Err(e) = self.executor.begin(next) {
                    log::debug!("{}: {e}", self.id);
                    continue;
                }
            }
            match self.executor.drive(now) {
                Drive::Idle => {}
                Drive::RetryAt(t) => {
                    self.exec_blocked_until = Some(t);
                    out.timers.push((t, Timer::ExecRetry));
                    return;
                }
                Drive::Crashed => {
                    out.crashed = true;
                    self.executor.recover();
                    let handled = self.executor.last_handled_round();
                    self.exec_cursor =
                        self.outputs.iter().position(|o| o.leader_round() > handled).unwrap_or(self.outputs.len());
                }
            }
        }
    }

    fn after_event(&mut self, now: SimTime, out: &mut NodeOutput) {
        self.try_propose(now, out);
        self.run_executor(now, out);
        self.max_rounds_retained = self.max_rounds_retained.max(self.primary.dag().rounds_retained());
    }
}
