//! Post-consensus execution: deduplicate committed transactions, order them
//! by fee, lock their objects, run them with bounded retries and commit the
//! effects atomically.
//!
//! Transactions use a tiny object model. A payload is one of
//!
//! ```text
//! 0x01 | key: u64 BE | value bytes...   write `value` to object `key`
//! 0x02 | a: u64 BE   | b: u64 BE        swap the values of two existing objects
//! ```
//!
//! so the smallest valid payload is nine bytes.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::consensus::CommittedSubDag;
use crate::types::{digest_of, Batch, Digest, Encoder, Round, SimTime, Transaction};

const OP_WRITE: u8 = 0x01;
const OP_SWAP: u8 = 0x02;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TxOp {
    Write { key: u64, value: Vec<u8> },
    Swap { a: u64, b: u64 },
}

impl TxOp {
    pub fn parse(payload: &[u8]) -> Option<TxOp> {
        let (&tag, rest) = payload.split_first()?;
        let key = |b: &[u8]| -> Option<u64> { Some(u64::from_be_bytes(b.get(..8)?.try_into().ok()?)) };
        match tag {
            OP_WRITE => Some(TxOp::Write { key: key(rest)?, value: rest[8..].to_vec() }),
            OP_SWAP if rest.len() == 16 => {
                let (a, b) = (key(rest)?, key(&rest[8..])?);
                (a != b).then_some(TxOp::Swap { a, b })
            }
            _ => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            TxOp::Write { key, value } => {
                let mut v = vec![OP_WRITE];
                v.extend_from_slice(&key.to_be_bytes());
                v.extend_from_slice(value);
                v
            }
            TxOp::Swap { a, b } => {
                let mut v = vec![OP_SWAP];
                v.extend_from_slice(&a.to_be_bytes());
                v.extend_from_slice(&b.to_be_bytes());
                v
            }
        }
    }

    /// Objects touched, in global lock order.
    pub fn objects(&self) -> Vec<ObjectId> {
        let mut ids = match self {
            TxOp::Write { key, .. } => vec![ObjectId::from_key(*key)],
            TxOp::Swap { a, b } => vec![ObjectId::from_key(*a), ObjectId::from_key(*b)],
        };
        ids.sort();
        ids
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectId(pub Digest);

impl ObjectId {
    pub fn from_key(key: u64) -> Self {
        let mut enc = Encoder::new(b"object");
        enc.u64(key);
        ObjectId(digest_of(&enc.finish()))
    }
}

impl fmt::Debug for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "obj:{:?}", self.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ObjectStore {
    objects: BTreeMap<ObjectId, (u64, Vec<u8>)>,
}

impl ObjectStore {
    pub fn get(&self, id: &ObjectId) -> Option<&(u64, Vec<u8>)> {
        self.objects.get(id)
    }

    pub fn version(&self, id: &ObjectId) -> u64 {
        self.objects.get(id).map_or(0, |(v, _)| *v)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ObjectId, &(u64, Vec<u8>))> {
        self.objects.iter()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EffectsEntry {
    pub tx: Digest,
    pub inputs: Vec<(ObjectId, u64)>,
    pub outputs: Vec<(ObjectId, u64)>,
}

impl EffectsEntry {
    /// `tx_hex,obj:ver;obj:ver,obj:ver;obj:ver`
    pub fn to_line(&self) -> String {
        let fmt = |vs: &[(ObjectId, u64)]| {
            vs.iter().map(|(o, v)| format!("{}:{}", o.0.to_hex(), v)).collect::<Vec<_>>().join(";")
        };
        format!("{},{},{}", self.tx.to_hex(), fmt(&self.inputs), fmt(&self.outputs))
    }
}

/// Append-only; at most one entry per transaction digest.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EffectsLog {
    entries: Vec<EffectsEntry>,
    index: HashMap<Digest, usize>,
}

impl EffectsLog {
    pub fn get(&self, tx: &Digest) -> Option<&EffectsEntry> {
        self.index.get(tx).map(|i| &self.entries[*i])
    }

    pub fn contains(&self, tx: &Digest) -> bool {
        self.index.contains_key(tx)
    }

    pub fn entries(&self) -> &[EffectsEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn append(&mut self, entry: EffectsEntry) -> bool {
        if self.index.contains_key(&entry.tx) {
            return false;
        }
        self.index.insert(entry.tx, self.entries.len());
        self.entries.push(entry);
        true
    }

    pub fn to_lines(&self) -> String {
        self.entries.iter().map(|e| e.to_line() + "\n").collect()
    }
}

/// A committed sub-DAG together with the batches its certificates reference.
#[derive(Clone, Debug)]
pub struct ConsensusOutput {
    pub sub_dag: CommittedSubDag,
    pub batches: Vec<(Digest, Vec<Batch>)>,
}

impl ConsensusOutput {
    pub fn leader_round(&self) -> Round {
        self.sub_dag.leader.round()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExecError {
    #[error("output for leader round {0} already handled")]
    StaleLeaderRound(Round),
}

#[derive(Clone, Debug)]
pub struct ExecutionConfig {
    /// Total attempts per transaction before it is aborted.
    pub max_attempts: u32,
    pub retry_interval: SimTime,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        ExecutionConfig { max_attempts: 10, retry_interval: 1_000 }
    }
}

/// Injected execution faults. Identical on every replica, so outcomes stay
/// deterministic.
#[derive(Clone, Debug, Default)]
pub struct FaultPlan {
    /// Number of leading attempts that fail transiently, per transaction.
    pub transient: BTreeMap<Digest, u32>,
    /// Crash right before the atomic commit of the n-th transaction (0-based).
    pub crash_before_commit: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExecOutcome {
    Effects(Effects),
    Retry,
    PermanentFailure,
}

/// Effects computed under held locks, not yet applied.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Effects {
    pub entry: EffectsEntry,
    writes: Vec<(ObjectId, Vec<u8>)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Drive {
    /// Nothing ready; the current output (if any) is fully handled.
    Idle,
    /// Blocked on a transient failure until the given time.
    RetryAt(SimTime),
    /// Injected crash fired; volatile state must be rebuilt with
    /// [`Executor::recover`] and unhandled outputs replayed.
    Crashed,
}

/// Per-object FIFO queues. The front of a queue holds the lock; a
/// transaction is runnable once it is at the front of every queue it joined.
#[derive(Debug, Default)]
struct LockTable {
    queues: BTreeMap<ObjectId, VecDeque<Digest>>,
}

impl LockTable {
    fn holder(&self, obj: &ObjectId) -> Option<Digest> {
        self.queues.get(obj).and_then(|q| q.front().copied())
    }

    fn holds_all(&self, tx: &Digest, objects: &[ObjectId]) -> bool {
        objects.iter().all(|o| self.holder(o).as_ref() == Some(tx))
    }

    /// Removes `tx` from its queues and returns the new front of each.
    fn release(&mut self, tx: &Digest, objects: &[ObjectId]) -> Vec<Digest> {
        let mut fronts = Vec::new();
        for obj in objects {
            if let Some(q) = self.queues.get_mut(obj) {
                q.retain(|d| d != tx);
                match q.front() {
                    Some(next) => fronts.push(*next),
                    None => {
                        self.queues.remove(obj);
                    }
                }
            }
        }
        fronts
    }
}

/// State that survives a crash.
#[derive(Clone, Debug, Default)]
struct Durable {
    store: ObjectStore,
    effects: EffectsLog,
    aborted: BTreeSet<Digest>,
    /// Transactions waiting for an input object to be created.
    parked: Vec<Transaction>,
    last_handled_round: Round,
}

#[derive(Debug)]
struct Live {
    tx: Transaction,
    objects: Vec<ObjectId>,
    seq: u64,
}

#[derive(Debug)]
pub struct Executor {
    durable: Durable,
    config: ExecutionConfig,
    faults: FaultPlan,
    locks: LockTable,
    live: HashMap<Digest, Live>,
    ready: BTreeMap<u64, Digest>,
    next_seq: u64,
    attempts: HashMap<Digest, u32>,
    current: Option<Round>,
    commits: usize,
    crashed_once: bool,
    pub retries: u64,
}

impl Executor {
    pub fn new(config: ExecutionConfig, faults: FaultPlan) -> Self {
        Executor {
            durable: Durable::default(),
            config,
            faults,
            locks: LockTable::default(),
            live: HashMap::new(),
            ready: BTreeMap::new(),
            next_seq: 0,
            attempts: HashMap::new(),
            current: None,
            commits: 0,
            crashed_once: false,
            retries: 0,
        }
    }

    pub fn effects(&self) -> &EffectsLog {
        &self.durable.effects
    }

    pub fn store(&self) -> &ObjectStore {
        &self.durable.store
    }

    pub fn aborted(&self) -> &BTreeSet<Digest> {
        &self.durable.aborted
    }

    pub fn parked(&self) -> impl Iterator<Item = &Transaction> {
        self.durable.parked.iter()
    }

    pub fn last_handled_round(&self) -> Round {
        self.durable.last_handled_round
    }

    pub fn is_idle(&self) -> bool {
        self.current.is_none()
    }

    pub fn lock_holder(&self, id: &ObjectId) -> Option<Digest> {
        self.locks.holder(id)
    }

    /// Whether the transaction reached a final state on this replica:
    /// executed, aborted, or deferred on a missing object.
    pub fn is_settled(&self, tx: &Digest) -> bool {
        self.durable.effects.contains(tx)
            || self.durable.aborted.contains(tx)
            || self.durable.parked.iter().any(|t| t.digest() == *tx)
    }

    /// Filters one committed output down to the transactions that still
    /// need executing, in commit order.
    pub fn handle_consensus_output(&mut self, output: &ConsensusOutput) -> Result<Vec<Transaction>, ExecError> {
        let round = output.leader_round();
        if round <= self.durable.last_handled_round {
            return Err(ExecError::StaleLeaderRound(round));
        }
        let parked: HashSet<Digest> = self.durable.parked.iter().map(Transaction::digest).collect();
        let mut seen = HashSet::new();
        let mut fresh = Vec::new();
        for (_, batches) in &output.batches {
            for batch in batches {
                for tx in &batch.transactions {
                    let d = tx.digest();
                    if !seen.insert(d) {
                        continue;
                    }
                    if self.durable.effects.contains(&d) || self.durable.aborted.contains(&d) || parked.contains(&d) {
                        continue;
                    }
                    fresh.push(tx.clone());
                }
            }
        }
        Ok(fresh)
    }

    /// Joins each transaction to the queues of its objects, in object id
    /// order. Returns the transactions that became ready.
    pub fn enqueue(&mut self, txs: Vec<Transaction>) -> Vec<Digest> {
        let mut became_ready = Vec::new();
        for tx in txs {
            let d = tx.digest();
            if self.live.contains_key(&d) || self.durable.effects.contains(&d) {
                continue;
            }
            let objects = objects_of(&tx);
            for obj in &objects {
                self.locks.queues.entry(*obj).or_default().push_back(d);
            }
            let seq = self.next_seq;
            self.next_seq += 1;
            self.live.insert(d, Live { tx, objects, seq });
            self.check_ready(d, &mut became_ready);
        }
        became_ready
    }

    fn check_ready(&mut self, tx: Digest, became_ready: &mut Vec<Digest>) {
        let Some(live) = self.live.get(&tx) else { return };
        if !self.locks.holds_all(&tx, &live.objects) || self.ready.contains_key(&live.seq) {
            return;
        }
        let available = match TxOp::parse(&live.tx.payload) {
            Some(TxOp::Swap { .. }) => live.objects.iter().all(|o| self.durable.store.get(o).is_some()),
            _ => true,
        };
        if available {
            self.ready.insert(live.seq, tx);
            became_ready.push(tx);
        } else {
            let live = self.live.remove(&tx).expect("live tx");
            if !self.durable.parked.iter().any(|t| t.digest() == tx) {
                self.durable.parked.push(live.tx);
            }
            for next in self.locks.release(&tx, &live.objects) {
                self.check_ready(next, became_ready);
            }
        }
    }

    /// Idempotent: a transaction whose effects are already written returns
    /// those effects unchanged.
    pub fn try_execute_immediately(&mut self, tx: &Digest) -> ExecOutcome {
        if let Some(entry) = self.durable.effects.get(tx) {
            return ExecOutcome::Effects(Effects { entry: entry.clone(), writes: Vec::new() });
        }
        let Some(live) = self.live.get(tx) else {
            return ExecOutcome::PermanentFailure;
        };
        let attempt = {
            let a = self.attempts.entry(*tx).or_insert(0);
            *a += 1;
            *a
        };
        let failing = self.faults.transient.get(tx).copied().unwrap_or(0);
        if attempt <= failing {
            if attempt >= self.config.max_attempts {
                return ExecOutcome::PermanentFailure;
            }
            self.retries += 1;
            return ExecOutcome::Retry;
        }
        let store = &self.durable.store;
        let inputs: Vec<(ObjectId, u64)> = live.objects.iter().map(|o| (*o, store.version(o))).collect();
        let writes = match TxOp::parse(&live.tx.payload) {
            Some(TxOp::Write { key, value }) => vec![(ObjectId::from_key(key), value)],
            Some(TxOp::Swap { a, b }) => {
                let (oa, ob) = (ObjectId::from_key(a), ObjectId::from_key(b));
                let va = store.get(&oa).map(|(_, v)| v.clone()).unwrap_or_default();
                let vb = store.get(&ob).map(|(_, v)| v.clone()).unwrap_or_default();
                let mut w = vec![(oa, vb), (ob, va)];
                w.sort_by_key(|(o, _)| *o);
                w
            }
            None => return ExecOutcome::PermanentFailure,
        };
        let outputs = writes.iter().map(|(o, _)| (*o, store.version(o) + 1)).collect();
        ExecOutcome::Effects(Effects { entry: EffectsEntry { tx: *tx, inputs, outputs }, writes })
    }

    /// The atomic point: log the effects, apply the writes, release locks.
    /// Returns transactions that became ready.
    pub fn commit_certificate(&mut self, tx: &Digest, effects: Effects) -> Vec<Digest> {
        if self.durable.effects.append(effects.entry.clone()) {
            for ((obj, value), (_, version)) in effects.writes.into_iter().zip(&effects.entry.outputs) {
                self.durable.store.objects.insert(obj, (*version, value));
            }
        }
        self.finish(tx)
    }

    fn finish(&mut self, tx: &Digest) -> Vec<Digest> {
        let mut became_ready = Vec::new();
        self.attempts.remove(tx);
        self.durable.parked.retain(|t| t.digest() != *tx);
        if let Some(live) = self.live.remove(tx) {
            self.ready.remove(&live.seq);
            for next in self.locks.release(tx, &live.objects) {
                self.check_ready(next, &mut became_ready);
            }
        }
        became_ready
    }

    fn abort(&mut self, tx: &Digest) -> Vec<Digest> {
        self.durable.aborted.insert(*tx);
        self.finish(tx)
    }

    /// Re-enqueues parked transactions whose inputs now all exist. They
    /// stay in the durable parked list until they commit.
    fn unpark(&mut self) -> bool {
        let store = &self.durable.store;
        let live = &self.live;
        let now_ok: Vec<Transaction> = self
            .durable
            .parked
            .iter()
            .filter(|t| !live.contains_key(&t.digest()))
            .filter(|t| objects_of(t).iter().all(|o| store.get(o).is_some()))
            .cloned()
            .collect();
        !now_ok.is_empty() && !self.enqueue(now_ok).is_empty()
    }

    /// Deterministic transaction order within one output: fee descending,
    /// then digest ascending.
    pub fn order_transactions(mut txs: Vec<Transaction>) -> Vec<Transaction> {
        txs.sort_by_cached_key(|t| (std::cmp::Reverse(t.gas_fee), t.digest()));
        txs
    }

    /// Starts handling an output: filter, order, enqueue.
    pub fn begin(&mut self, output: &ConsensusOutput) -> Result<(), ExecError> {
        let fresh = self.handle_consensus_output(output)?;
        let ordered = Self::order_transactions(fresh);
        self.current = Some(output.leader_round());
        self.enqueue(ordered);
        Ok(())
    }

    /// Runs ready transactions serially until blocked or drained.
    pub fn drive(&mut self, now: SimTime) -> Drive {
        loop {
            let Some((_, tx)) = self.ready.first_key_value().map(|(s, d)| (*s, *d)) else {
                if self.current.is_some() && self.unpark() {
                    continue;
                }
                break;
            };
            match self.try_execute_immediately(&tx) {
                ExecOutcome::Effects(effects) => {
                    if self.faults.crash_before_commit == Some(self.commits) && !self.crashed_once {
                        self.crashed_once = true;
                        return Drive::Crashed;
                    }
                    self.commits += 1;
                    self.commit_certificate(&tx, effects);
                }
                ExecOutcome::Retry => return Drive::RetryAt(now + self.config.retry_interval),
                ExecOutcome::PermanentFailure => {
                    log::debug!("aborting {tx:?} after {} attempts", self.config.max_attempts);
                    self.abort(&tx);
                }
            }
        }
        if let Some(round) = self.current.take() {
            debug_assert!(self.live.is_empty(), "serial driver leaves no waiters behind");
            self.durable.last_handled_round = round;
        }
        Drive::Idle
    }

    /// Drops everything not yet durably committed.
    pub fn recover(&mut self) {
        self.locks = LockTable::default();
        self.live.clear();
        self.ready.clear();
        self.attempts.clear();
        self.current = None;
    }
}

fn objects_of(tx: &Transaction) -> Vec<ObjectId> {
    TxOp::parse(&tx.payload).map(|op| op.objects()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::CommittedSubDag;
    use crate::dag_builder::DagBuilder;
    use crate::types::ValidatorId;

    fn write(key: u64, val: u8, fee: u64) -> Transaction {
        Transaction::new(TxOp::Write { key, value: vec![val; 3] }.encode(), fee, 1)
    }

    fn swap(a: u64, b: u64, fee: u64) -> Transaction {
        Transaction::new(TxOp::Swap { a, b }.encode(), fee, 1)
    }

    fn output(round: Round, txs: Vec<Transaction>) -> ConsensusOutput {
        let mut b = DagBuilder::new(4);
        let leader = b.add_vertex(round, ValidatorId(1), None);
        let batch = Batch::new(txs, ValidatorId(1), 0).unwrap();
        ConsensusOutput {
            sub_dag: CommittedSubDag { leader: leader.clone(), certificates: vec![leader.clone()], commit_index: round },
            batches: vec![(leader.digest(), vec![batch])],
        }
    }

    fn run(exec: &mut Executor, out: &ConsensusOutput) {
        exec.begin(out).unwrap();
        let mut now = 0;
        loop {
            match exec.drive(now) {
                Drive::Idle => break,
                Drive::RetryAt(t) => now = t,
                Drive::Crashed => panic!("unexpected crash"),
            }
        }
    }

    #[test]
    fn payload_parsing() {
        let w = TxOp::Write { key: 7, value: vec![1, 2] };
        assert_eq!(TxOp::parse(&w.encode()), Some(w));
        let s = TxOp::Swap { a: 1, b: 2 };
        assert_eq!(TxOp::parse(&s.encode()), Some(s));
        assert_eq!(TxOp::parse(&TxOp::Swap { a: 1, b: 1 }.encode()), None);
        assert_eq!(TxOp::parse(&[0x02; 12]), None);
        assert_eq!(TxOp::parse(&[0x01; 8]), None);
        assert_eq!(TxOp::parse(&[]), None);
    }

    #[test]
    fn fee_order() {
        let txs = vec![write(1, 0, 5), write(2, 0, 9), write(3, 0, 1)];
        let fees: Vec<u64> = Executor::order_transactions(txs).iter().map(|t| t.gas_fee).collect();
        assert_eq!(fees, vec![9, 5, 1]);

        let eq = vec![write(1, 0, 4), write(2, 0, 4), write(3, 0, 4)];
        let ordered = Executor::order_transactions(eq.clone());
        let mut digests: Vec<Digest> = eq.iter().map(Transaction::digest).collect();
        digests.sort();
        assert_eq!(ordered.iter().map(Transaction::digest).collect::<Vec<_>>(), digests);
    }

    #[test]
    fn fee_order_is_replica_independent() {
        use rand::{seq::SliceRandom, Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let txs: Vec<Transaction> = (0..100).map(|i| write(i, 0, rng.gen_range(0..10))).collect();
        let mut shuffled = txs.clone();
        shuffled.shuffle(&mut rng);
        assert_eq!(Executor::order_transactions(txs), Executor::order_transactions(shuffled));
    }

    #[test]
    fn output_filtering() {
        let mut exec = Executor::new(ExecutionConfig::default(), FaultPlan::default());
        let a = write(1, 1, 1);
        let out1 = output(3, vec![a.clone(), a.clone(), write(2, 1, 1)]);
        assert_eq!(exec.handle_consensus_output(&out1).unwrap().len(), 2);
        run(&mut exec, &out1);
        assert_eq!(exec.effects().len(), 2);

        let out2 = output(5, vec![a.clone(), write(3, 1, 1)]);
        let fresh = exec.handle_consensus_output(&out2).unwrap();
        assert_eq!(fresh, vec![write(3, 1, 1)]);
        assert_eq!(exec.handle_consensus_output(&out1), Err(ExecError::StaleLeaderRound(3)));
    }

    #[test]
    fn disjoint_ready_shared_waits() {
        let mut exec = Executor::new(ExecutionConfig::default(), FaultPlan::default());
        let (a, b, c) = (write(1, 1, 1), write(1, 2, 1), write(2, 3, 1));
        let ready = exec.enqueue(vec![a.clone(), b.clone(), c.clone()]);
        assert_eq!(ready, vec![a.digest(), c.digest()]);
        let obj = ObjectId::from_key(1);
        assert_eq!(exec.lock_holder(&obj), Some(a.digest()));

        let ExecOutcome::Effects(fx) = exec.try_execute_immediately(&a.digest()) else { panic!() };
        let woke = exec.commit_certificate(&a.digest(), fx);
        assert_eq!(woke, vec![b.digest()]);
        assert_eq!(exec.lock_holder(&obj), Some(b.digest()));
        let ExecOutcome::Effects(fx) = exec.try_execute_immediately(&b.digest()) else { panic!() };
        exec.commit_certificate(&b.digest(), fx);
        assert_eq!(exec.lock_holder(&obj), None);
        assert_eq!(exec.store().version(&obj), 2);
    }

    #[test]
    fn missing_object_parks_until_created() {
        let mut exec = Executor::new(ExecutionConfig::default(), FaultPlan::default());
        let s = swap(10, 11, 9);
        run(&mut exec, &output(1, vec![s.clone()]));
        assert!(exec.effects().is_empty());
        assert_eq!(exec.parked().count(), 1);
        assert!(exec.is_settled(&s.digest()));
        run(&mut exec, &output(3, vec![write(10, 1, 1), write(11, 2, 1)]));
        assert!(exec.effects().contains(&s.digest()));
        assert_eq!(exec.parked().count(), 0);
        let (v, val) = exec.store().get(&ObjectId::from_key(10)).unwrap();
        assert_eq!((*v, val.clone()), (2, vec![2; 3]));

        let never = swap(50, 51, 1);
        run(&mut exec, &output(5, vec![never.clone()]));
        assert_eq!(exec.parked().map(Transaction::digest).collect::<Vec<_>>(), vec![never.digest()]);
    }

    #[test]
    fn execution_is_idempotent() {
        let mut exec = Executor::new(ExecutionConfig::default(), FaultPlan::default());
        let a = write(1, 1, 1);
        run(&mut exec, &output(1, vec![a.clone()]));
        let before = exec.store().clone();
        let ExecOutcome::Effects(fx) = exec.try_execute_immediately(&a.digest()) else { panic!() };
        assert_eq!(&fx.entry, exec.effects().get(&a.digest()).unwrap());
        exec.commit_certificate(&a.digest(), fx);
        assert_eq!(exec.store(), &before);
        assert_eq!(exec.effects().len(), 1);
    }

    fn with_failures(n: u32) -> (Executor, Transaction) {
        let a = write(1, 1, 1);
        let mut faults = FaultPlan::default();
        faults.transient.insert(a.digest(), n);
        (Executor::new(ExecutionConfig::default(), faults), a)
    }

    #[test]
    fn transient_failures_retry_at_one_second() {
        let (mut exec, a) = with_failures(3);
        exec.begin(&output(1, vec![a.clone()])).unwrap();
        assert_eq!(exec.drive(0), Drive::RetryAt(1_000));
        assert_eq!(exec.drive(1_000), Drive::RetryAt(2_000));
        assert_eq!(exec.drive(2_000), Drive::RetryAt(3_000));
        assert_eq!(exec.drive(3_000), Drive::Idle);
        assert_eq!(exec.effects().len(), 1);
        assert_eq!(exec.retries, 3);
    }

    #[test]
    fn nine_failures_commit_ten_abort() {
        let (mut exec, a) = with_failures(9);
        run(&mut exec, &output(1, vec![a.clone()]));
        assert!(exec.effects().contains(&a.digest()));

        let (mut exec, a) = with_failures(10);
        run(&mut exec, &output(1, vec![a.clone()]));
        assert!(exec.effects().is_empty());
        assert!(exec.aborted().contains(&a.digest()));
        assert_eq!(exec.lock_holder(&ObjectId::from_key(1)), None);
    }

    #[test]
    fn crash_and_replay_matches_uninterrupted() {
        let outs: Vec<ConsensusOutput> = (0..3)
            .map(|i| output(2 * i + 1, (0..5).map(|k| write(k % 3, (i * 5 + k) as u8, k)).collect()))
            .collect();
        let mut clean = Executor::new(ExecutionConfig::default(), FaultPlan::default());
        for o in &outs {
            run(&mut clean, o);
        }

        let faults = FaultPlan { crash_before_commit: Some(7), ..Default::default() };
        let mut crashy = Executor::new(ExecutionConfig::default(), faults);
        let mut i = 0;
        let mut crashed = false;
        while i < outs.len() {
            crashy.begin(&outs[i]).unwrap();
            match crashy.drive(0) {
                Drive::Idle => i += 1,
                Drive::Crashed => {
                    crashed = true;
                    // nothing of the in-flight transaction leaked into the store
                    assert_eq!(crashy.effects().len(), 7);
                    crashy.recover();
                    i = outs.iter().position(|o| o.leader_round() > crashy.last_handled_round()).unwrap();
                }
                Drive::RetryAt(_) => unreachable!(),
            }
        }
        assert!(crashed);
        assert_eq!(crashy.effects(), clean.effects());
        assert_eq!(crashy.store(), clean.store());
    }
}
