//! Worker-side mempool: batch client transactions, replicate batches to peer
//! workers, wait for a stake quorum of acknowledgements, then hand the digest
//! to the local primary.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::execution::TxOp;
use crate::types::{Batch, Committee, Digest, SimTime, Transaction, ValidatorId, WorkerId, MIN_TX_SIZE};

#[derive(Clone, Debug)]
pub struct WorkerConfig {
    pub batch_size_limit: usize,
    pub batch_timeout: SimTime,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        WorkerConfig { batch_size_limit: 8, batch_timeout: 100 }
    }
}

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
pub enum TxRejection {
    #[error("payload shorter than {MIN_TX_SIZE} bytes")]
    TooSmall,
    #[error("payload is not a recognised operation")]
    Malformed,
}

/// Worker-to-worker traffic. Workers only talk to the peer worker with the
/// same [`WorkerId`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WorkerMessage {
    ReportBatch { digest: Digest, batch: Batch },
    BatchAck(Digest),
    RequestBatches(Vec<Digest>),
    BatchList(Vec<Batch>),
}

impl WorkerMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            WorkerMessage::ReportBatch { .. } => "ReportBatch",
            WorkerMessage::BatchAck(_) => "BatchAck",
            WorkerMessage::RequestBatches(_) => "RequestBatches",
            WorkerMessage::BatchList(_) => "BatchList",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WorkerOutput {
    Send { to: ValidatorId, msg: WorkerMessage },
    /// Quorum-acknowledged batch of our own, for the proposer.
    ReportOwnBatch { digest: Digest, worker: WorkerId },
    /// Batch received from a peer and stored.
    ReportOthersBatch { digest: Digest, worker: WorkerId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AckStatus {
    QuorumComplete,
    StillWaiting,
    /// Unknown or already confirmed digest.
    Ignored,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BatchRejection {
    #[error("batch digest mismatch")]
    DigestMismatch,
    #[error("batch author {author} does not match sender {sender}")]
    WrongAuthor { author: ValidatorId, sender: ValidatorId },
}

#[derive(Debug)]
struct QuorumWaiter {
    ackers: BTreeSet<ValidatorId>,
}

#[derive(Debug)]
struct PendingSync {
    attempts: u32,
}

#[derive(Debug)]
pub struct Worker {
    own: ValidatorId,
    id: WorkerId,
    committee: Committee,
    config: WorkerConfig,
    pending_txs: Vec<Transaction>,
    pending_since: Option<SimTime>,
    batch_store: BTreeMap<Digest, Batch>,
    waiting: BTreeMap<Digest, QuorumWaiter>,
    syncing: BTreeMap<Digest, PendingSync>,
    sealed_at: BTreeMap<Digest, SimTime>,
}

impl Worker {
    pub fn new(own: ValidatorId, id: WorkerId, committee: Committee, config: WorkerConfig) -> Self {
        Worker {
            own,
            id,
            committee,
            config,
            pending_txs: Vec::new(),
            pending_since: None,
            batch_store: BTreeMap::new(),
            waiting: BTreeMap::new(),
            syncing: BTreeMap::new(),
            sealed_at: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> WorkerId {
        self.id
    }

    pub fn pending_len(&self) -> usize {
        self.pending_txs.len()
    }

    /// Time at which the current buffer should be sealed by timeout.
    pub fn seal_deadline(&self) -> Option<SimTime> {
        self.pending_since.map(|t| t + self.config.batch_timeout)
    }

    pub fn stored(&self, digest: &Digest) -> bool {
        self.batch_store.contains_key(digest)
    }

    pub fn batch(&self, digest: &Digest) -> Option<&Batch> {
        self.batch_store.get(digest)
    }

    pub fn batches(&self) -> impl Iterator<Item = (&Digest, &Batch)> {
        self.batch_store.iter()
    }

    pub fn sealed_at(&self) -> &BTreeMap<Digest, SimTime> {
        &self.sealed_at
    }

    pub fn is_syncing(&self) -> bool {
        !self.syncing.is_empty()
    }

    /// Checks a client transaction and buffers it when accepted. Duplicates
    /// are accepted; execution drops them.
    pub fn validate_tx(&mut self, tx: Transaction, now: SimTime) -> Result<(), TxRejection> {
        if tx.payload.len() < MIN_TX_SIZE {
            return Err(TxRejection::TooSmall);
        }
        if TxOp::parse(&tx.payload).is_none() {
            return Err(TxRejection::Malformed);
        }
        if self.pending_txs.is_empty() {
            self.pending_since = Some(now);
        }
        self.pending_txs.push(tx);
        Ok(())
    }

    /// Seals a batch when the buffer is full or the oldest buffered
    /// transaction has waited `batch_timeout`.
    pub fn seal_batch(&mut self, now: SimTime) -> Option<Batch> {
        if self.pending_txs.is_empty() {
            self.pending_since = None;
            return None;
        }
        let full = self.pending_txs.len() >= self.config.batch_size_limit;
        let expired = self.pending_since.is_some_and(|t| now >= t + self.config.batch_timeout);
        if !full && !expired {
            return None;
        }
        let take = self.pending_txs.len().min(self.config.batch_size_limit);
        let txs: Vec<Transaction> = self.pending_txs.drain(..take).collect();
        self.pending_since = if self.pending_txs.is_empty() { None } else { Some(now) };
        let batch = Batch::new(txs, self.own, self.id).expect("non-empty by construction");
        let digest = batch.digest();
        self.batch_store.insert(digest, batch.clone());
        self.sealed_at.insert(digest, now);
        Some(batch)
    }

    /// Sends a freshly sealed batch to every peer worker and starts waiting
    /// for acknowledgements. Our own stake counts toward the quorum.
    pub fn broadcast_batch(&mut self, batch: &Batch, out: &mut Vec<WorkerOutput>) -> BTreeSet<ValidatorId> {
        let digest = batch.digest();
        let peers: BTreeSet<ValidatorId> = self.committee.ids().filter(|v| *v != self.own).collect();
        for peer in &peers {
            out.push(WorkerOutput::Send {
                to: *peer,
                msg: WorkerMessage::ReportBatch { digest, batch: batch.clone() },
            });
        }
        self.waiting.insert(digest, QuorumWaiter { ackers: BTreeSet::new() });
        // A lone validator already holds a quorum.
        self.check_quorum(digest, out);
        peers
    }

    pub fn quorum_wait_ack(&mut self, digest: Digest, acker: ValidatorId, out: &mut Vec<WorkerOutput>) -> AckStatus {
        let Some(waiter) = self.waiting.get_mut(&digest) else {
            return AckStatus::Ignored;
        };
        if !self.committee.contains(acker) || acker == self.own {
            return AckStatus::StillWaiting;
        }
        waiter.ackers.insert(acker);
        self.check_quorum(digest, out)
    }

    fn check_quorum(&mut self, digest: Digest, out: &mut Vec<WorkerOutput>) -> AckStatus {
        let Some(waiter) = self.waiting.get(&digest) else {
            return AckStatus::Ignored;
        };
        let stake = self.committee.stake(self.own)
            + waiter.ackers.iter().map(|v| self.committee.stake(*v)).sum::<u64>();
        if stake >= self.committee.quorum_threshold() {
            self.waiting.remove(&digest);
            out.push(WorkerOutput::ReportOwnBatch { digest, worker: self.id });
            AckStatus::QuorumComplete
        } else {
            AckStatus::StillWaiting
        }
    }

    /// Stores a peer's batch after recomputing its digest and acknowledges it.
    pub fn handle_report_batch(
        &mut self,
        claimed: Digest,
        batch: Batch,
        sender: ValidatorId,
        out: &mut Vec<WorkerOutput>,
    ) -> Result<Digest, BatchRejection> {
        if batch.author != sender {
            return Err(BatchRejection::WrongAuthor { author: batch.author, sender });
        }
        let digest = batch.digest();
        if digest != claimed {
            return Err(BatchRejection::DigestMismatch);
        }
        self.store_foreign(digest, batch, out);
        out.push(WorkerOutput::Send { to: sender, msg: WorkerMessage::BatchAck(digest) });
        Ok(digest)
    }

    fn store_foreign(&mut self, digest: Digest, batch: Batch, out: &mut Vec<WorkerOutput>) {
        self.syncing.remove(&digest);
        if self.batch_store.contains_key(&digest) {
            return;
        }
        self.batch_store.insert(digest, batch);
        out.push(WorkerOutput::ReportOthersBatch { digest, worker: self.id });
    }

    pub fn handle_request_batches(&self, digests: &[Digest]) -> Vec<Batch> {
        digests.iter().filter_map(|d| self.batch_store.get(d).cloned()).collect()
    }

    /// Batches returned for a synchronisation request.
    pub fn handle_batch_list(&mut self, batches: Vec<Batch>, out: &mut Vec<WorkerOutput>) -> usize {
        let mut stored = 0;
        for batch in batches {
            let digest = batch.digest();
            // Only accept what we asked for.
            if self.syncing.contains_key(&digest) {
                self.store_foreign(digest, batch, out);
                stored += 1;
            }
        }
        stored
    }

    /// The primary needs these batches. Asks the hinted holder first; the
    /// retry path in [`Worker::tick`] widens to every peer.
    pub fn handle_synchronize(&mut self, digests: &[Digest], source: ValidatorId, out: &mut Vec<WorkerOutput>) -> Vec<Digest> {
        let mut missing = Vec::new();
        for d in digests {
            if self.batch_store.contains_key(d) {
                continue;
            }
            if self.syncing.contains_key(d) {
                continue;
            }
            self.syncing.insert(*d, PendingSync { attempts: 0 });
            missing.push(*d);
        }
        if !missing.is_empty() {
            let target = if source == self.own { None } else { Some(source) };
            match target {
                Some(to) => out.push(WorkerOutput::Send { to, msg: WorkerMessage::RequestBatches(missing.clone()) }),
                None => self.request_from_all(&missing, out),
            }
        }
        missing
    }

    fn request_from_all(&self, digests: &[Digest], out: &mut Vec<WorkerOutput>) {
        for peer in self.committee.ids().filter(|v| *v != self.own) {
            out.push(WorkerOutput::Send { to: peer, msg: WorkerMessage::RequestBatches(digests.to_vec()) });
        }
    }

    /// Periodic retransmission: re-send unacknowledged batches and retry
    /// outstanding synchronisation against all peers.
    pub fn tick(&mut self, out: &mut Vec<WorkerOutput>) {
        for (digest, waiter) in &self.waiting {
            let batch = &self.batch_store[digest];
            for peer in self.committee.ids().filter(|v| *v != self.own && !waiter.ackers.contains(v)) {
                out.push(WorkerOutput::Send {
                    to: peer,
                    msg: WorkerMessage::ReportBatch { digest: *digest, batch: batch.clone() },
                });
            }
        }
        if self.syncing.is_empty() {
            return;
        }
        let mut retry = Vec::new();
        for (d, s) in self.syncing.iter_mut() {
            s.attempts += 1;
            retry.push(*d);
        }
        self.request_from_all(&retry, out);
    }
}
