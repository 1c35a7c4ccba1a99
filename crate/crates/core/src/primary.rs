//! The primary: proposes headers, votes on peers' headers, turns vote quorums
//! into certificates and keeps the local DAG causally complete.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::sync::Arc;

use thiserror::Error;

use crate::consensus::{weak_link_candidates, LeaderSchedule};
use crate::dag::{DagState, Insert};
use crate::types::{
    CertRef, Certificate, CertificateError, Committee, Digest, Header, HeaderError, KeyRing, Round, Signer, SimTime,
    ValidatorId, Vote, WorkerId,
};

#[derive(Clone, Debug)]
pub struct PrimaryConfig {
    pub min_digests: usize,
    pub max_digests: usize,
    pub max_header_delay: SimTime,
    pub gc_depth: Round,
    pub deferred_limit: usize,
    /// Cap on certificates returned for one fetch request.
    pub fetch_limit: usize,
    /// Hold back size-triggered headers at vote rounds until the anchor
    /// arrives or the header delay runs out.
    pub leader_wait: bool,
}

impl Default for PrimaryConfig {
    fn default() -> Self {
        PrimaryConfig {
            min_digests: 32,
            max_digests: 1_000,
            max_header_delay: 1_000,
            gc_depth: 50,
            deferred_limit: 10_000,
            fetch_limit: 1_000,
            leader_wait: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PrimaryMessage {
    Header(Header),
    Vote(Vote),
    Certificate(Certificate),
    /// Re-solicits a vote for a header that is not yet certified.
    RequestVote(Header),
    FetchCertificates { wanted: Vec<CertRef>, from_round: Round, to_round: Round },
    CertificateRange { certificates: Vec<Certificate>, gc_round: Round },
}

impl PrimaryMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            PrimaryMessage::Header(_) => "Header",
            PrimaryMessage::Vote(_) => "Vote",
            PrimaryMessage::Certificate(_) => "Certificate",
            PrimaryMessage::RequestVote(_) => "RequestVote",
            PrimaryMessage::FetchCertificates { .. } => "FetchCertificates",
            PrimaryMessage::CertificateRange { .. } => "CertificateRange",
        }
    }

    pub fn digest(&self) -> Option<Digest> {
        match self {
            PrimaryMessage::Header(h) | PrimaryMessage::RequestVote(h) => Some(h.digest()),
            PrimaryMessage::Vote(v) => Some(v.header_digest),
            PrimaryMessage::Certificate(c) => Some(c.digest()),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PrimaryAction {
    Send { to: ValidatorId, msg: PrimaryMessage },
    /// Ask our own worker to fetch batches, trying `source` first.
    Synchronize { worker: WorkerId, digests: Vec<Digest>, source: ValidatorId },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VoteRejection {
    #[error("header below the GC round")]
    BelowGc,
    #[error(transparent)]
    Malformed(#[from] HeaderError),
    #[error("already voted for {0:?} at this author and round")]
    Equivocation(Digest),
    #[error("waiting for parents or batches")]
    Deferred,
}

#[derive(Debug, PartialEq, Eq)]
pub enum CertStatus {
    /// Inserted together with any deferred descendants it unblocked, in
    /// insertion order.
    Stored(Vec<Certificate>),
    Deferred,
    Duplicate,
    BelowGc,
    Rejected(CertificateError),
    /// A different certificate exists for the same (round, author).
    Conflict(Digest),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AggregateError {
    #[error("vote for another header")]
    Foreign,
    #[error("bad signature from {0}")]
    BadSignature(ValidatorId),
}

#[derive(Debug)]
pub struct Proposer {
    staged: VecDeque<(Digest, WorkerId)>,
    staged_set: HashSet<Digest>,
    included: HashSet<Digest>,
    last_header_ts: SimTime,
    last_round: Round,
}

impl Proposer {
    fn new() -> Self {
        Proposer {
            staged: VecDeque::new(),
            staged_set: HashSet::new(),
            included: HashSet::new(),
            last_header_ts: 0,
            last_round: 0,
        }
    }

    /// Queues a digest once; digests already proposed are ignored.
    pub fn stage_digest(&mut self, digest: Digest, worker: WorkerId) -> bool {
        if self.included.contains(&digest) || !self.staged_set.insert(digest) {
            return false;
        }
        self.staged.push_back((digest, worker));
        true
    }

    pub fn staged(&self) -> usize {
        self.staged.len()
    }

    pub fn last_round(&self) -> Round {
        self.last_round
    }

    fn take(&mut self, max: usize) -> Vec<(Digest, WorkerId)> {
        let n = max.min(self.staged.len());
        let payload: Vec<_> = self.staged.drain(..n).collect();
        for (d, _) in &payload {
            self.staged_set.remove(d);
            self.included.insert(*d);
        }
        payload
    }
}

#[derive(Debug)]
pub struct VoteAggregator {
    header: Header,
    digest: Digest,
    votes: Vec<Vote>,
    voters: BTreeSet<ValidatorId>,
    certified: bool,
}

impl VoteAggregator {
    pub fn new(header: Header) -> Self {
        let digest = header.digest();
        VoteAggregator { header, digest, votes: Vec::new(), voters: BTreeSet::new(), certified: false }
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    pub fn voters(&self) -> &BTreeSet<ValidatorId> {
        &self.voters
    }

    pub fn is_certified(&self) -> bool {
        self.certified
    }

    /// Adds a vote; returns the certificate the first time stake reaches
    /// quorum.
    pub fn aggregate_vote(
        &mut self,
        vote: Vote,
        committee: &Committee,
        keys: &KeyRing,
    ) -> Result<Option<Certificate>, AggregateError> {
        if vote.header_digest != self.digest || vote.header_author != self.header.author || vote.header_round != self.header.round {
            return Err(AggregateError::Foreign);
        }
        if !keys.verify(vote.voter, &self.digest, &vote.signature) {
            return Err(AggregateError::BadSignature(vote.voter));
        }
        if !self.voters.insert(vote.voter) {
            return Ok(None);
        }
        self.votes.push(vote);
        if self.certified || !committee.quorum_reached(&self.voters).unwrap_or(false) {
            return Ok(None);
        }
        self.certified = true;
        let cert = Certificate::new(self.header.clone(), self.votes.clone(), committee, keys)
            .expect("votes were checked one by one");
        Ok(Some(cert))
    }
}

#[derive(Clone, Debug, Default)]
pub struct PrimaryMetrics {
    pub headers_proposed: u64,
    pub votes_cast: u64,
    pub certificates_formed: u64,
    pub equivocations_refused: u64,
    pub deferred_evicted: u64,
    pub fetches_sent: u64,
}

type DeferKey = (Round, ValidatorId, Digest);

pub struct Primary {
    id: ValidatorId,
    committee: Committee,
    keys: Arc<KeyRing>,
    signer: Signer,
    config: PrimaryConfig,
    schedule: LeaderSchedule,
    dag: DagState,
    proposer: Proposer,
    aggregators: BTreeMap<Digest, VoteAggregator>,
    voted: BTreeMap<(Round, ValidatorId), Digest>,
    pending_headers: BTreeMap<(Round, ValidatorId, Digest), Header>,
    deferred: BTreeMap<DeferKey, Certificate>,
    deferred_fifo: VecDeque<DeferKey>,
    known_batches: HashSet<Digest>,
    equivocate: bool,
    avoid_anchors: bool,
    last_tick_round: Round,
    stalled_ticks: u32,
    pub metrics: PrimaryMetrics,
}

impl Primary {
    pub fn new(
        id: ValidatorId,
        committee: Committee,
        keys: Arc<KeyRing>,
        config: PrimaryConfig,
        schedule: LeaderSchedule,
    ) -> Self {
        let signer = keys.signer(id).expect("primary must be a committee member");
        let dag = DagState::new(&committee);
        Primary {
            id,
            committee,
            keys,
            signer,
            config,
            schedule,
            dag,
            proposer: Proposer::new(),
            aggregators: BTreeMap::new(),
            voted: BTreeMap::new(),
            pending_headers: BTreeMap::new(),
            deferred: BTreeMap::new(),
            deferred_fifo: VecDeque::new(),
            known_batches: HashSet::new(),
            equivocate: false,
            avoid_anchors: false,
            last_tick_round: 0,
            stalled_ticks: 0,
            metrics: PrimaryMetrics::default(),
        }
    }

    /// Byzantine mode: send two different headers per round to the two
    /// halves of the committee.
    pub fn set_equivocate(&mut self, on: bool) {
        self.equivocate = on;
    }

    /// Byzantine mode: leave the anchor out of our parents whenever the
    /// rest of the previous round still forms a quorum.
    pub fn set_avoid_anchors(&mut self, on: bool) {
        self.avoid_anchors = on;
    }

    pub fn id(&self) -> ValidatorId {
        self.id
    }

    pub fn dag(&self) -> &DagState {
        &self.dag
    }

    pub fn proposer(&self) -> &Proposer {
        &self.proposer
    }

    pub fn deferred_len(&self) -> usize {
        self.deferred.len()
    }

    /// When the delay trigger next fires.
    pub fn propose_deadline(&self) -> SimTime {
        self.proposer.last_header_ts + self.config.max_header_delay
    }

    fn peers(&self) -> Vec<ValidatorId> {
        self.committee.ids().filter(|v| *v != self.id).collect()
    }

    fn broadcast(&self, msg: PrimaryMessage, out: &mut Vec<PrimaryAction>) {
        for to in self.peers() {
            out.push(PrimaryAction::Send { to, msg: msg.clone() });
        }
    }

    /// Our own worker sealed a batch and a quorum stored it.
    pub fn on_own_batch(&mut self, digest: Digest, worker: WorkerId) {
        self.known_batches.insert(digest);
        self.proposer.stage_digest(digest, worker);
    }

    /// Our worker stored a peer's batch; headers waiting on it may now get a vote.
    pub fn on_others_batch(&mut self, digest: Digest, out: &mut Vec<PrimaryAction>) {
        if self.known_batches.insert(digest) {
            self.retry_pending_headers(out);
        }
    }

    pub fn try_propose(&mut self, now: SimTime, out: &mut Vec<PrimaryAction>) -> (Option<Header>, Vec<Certificate>) {
        let round = self.dag.current_round();
        if round <= self.proposer.last_round {
            return (None, Vec::new());
        }
        let mut parents: Vec<CertRef> = self.dag.round(round - 1).map(Certificate::reference).collect();
        let anchor_round = round.is_multiple_of(2) && round >= 2;
        let anchor = anchor_round.then(|| self.schedule.leader(round - 1));
        if self.avoid_anchors {
            if let Some(leader) = anchor {
                let rest: Vec<ValidatorId> = parents.iter().map(|p| p.author).filter(|a| *a != leader).collect();
                if self.committee.quorum_reached(&rest).unwrap_or(false) {
                    parents.retain(|p| p.author != leader);
                }
            }
        }
        let delay_fired = now >= self.propose_deadline();
        let mut size_fired = self.proposer.staged() >= self.config.min_digests;
        if self.config.leader_wait {
            if let Some(leader) = anchor {
                size_fired &= self.dag.get_at(round - 1, leader).is_some();
            }
        }
        if !size_fired && !delay_fired {
            return (None, Vec::new());
        }
        parents.extend(weak_link_candidates(&self.dag, round, &parents));
        let payload = self.proposer.take(self.config.max_digests);
        let header = Header::new(self.id, round, payload, parents, now);
        self.proposer.last_round = round;
        self.proposer.last_header_ts = now;
        self.metrics.headers_proposed += 1;
        self.voted.insert((round, self.id), header.digest());

        let mut certs = Vec::new();
        if self.equivocate {
            let mut alt = header.clone();
            alt.created_ts += 1;
            let peers = self.peers();
            let (first, second) = peers.split_at(peers.len() / 2);
            for to in first {
                out.push(PrimaryAction::Send { to: *to, msg: PrimaryMessage::Header(header.clone()) });
            }
            for to in second {
                out.push(PrimaryAction::Send { to: *to, msg: PrimaryMessage::Header(alt.clone()) });
            }
            certs.extend(self.start_aggregator(alt, out));
        } else {
            self.broadcast(PrimaryMessage::Header(header.clone()), out);
        }
        certs.extend(self.start_aggregator(header.clone(), out));
        (Some(header), certs)
    }

    fn start_aggregator(&mut self, header: Header, out: &mut Vec<PrimaryAction>) -> Vec<Certificate> {
        let digest = header.digest();
        let vote = Vote::new(&header, &self.signer);
        self.aggregators.insert(digest, VoteAggregator::new(header));
        self.handle_vote(vote, out)
    }

    /// Checks a peer's header and returns our vote for it.
    pub fn verify_and_vote(&mut self, header: Header, out: &mut Vec<PrimaryAction>) -> Result<Vote, VoteRejection> {
        if header.round < self.dag.gc_round() {
            return Err(VoteRejection::BelowGc);
        }
        header.check_structure(&self.committee)?;
        let digest = header.digest();
        let slot = (header.round, header.author);
        if let Some(prev) = self.voted.get(&slot) {
            if *prev != digest {
                self.metrics.equivocations_refused += 1;
                return Err(VoteRejection::Equivocation(*prev));
            }
            return Ok(Vote::new(&header, &self.signer));
        }
        let key = (header.round, header.author, digest);
        let missing_parents: Vec<CertRef> =
            header.parents.iter().filter(|p| p.round >= self.dag.gc_round() && !self.dag.contains(&p.digest)).copied().collect();
        let missing_batches: Vec<(Digest, WorkerId)> =
            header.payload.iter().filter(|(d, _)| !self.known_batches.contains(d)).copied().collect();
        if !missing_parents.is_empty() || !missing_batches.is_empty() {
            if !self.pending_headers.contains_key(&key) {
                if !missing_parents.is_empty() {
                    self.metrics.fetches_sent += 1;
                    let msg = PrimaryMessage::FetchCertificates { wanted: missing_parents, from_round: 0, to_round: 0 };
                    out.push(PrimaryAction::Send { to: header.author, msg });
                }
                let mut by_worker: BTreeMap<WorkerId, Vec<Digest>> = BTreeMap::new();
                for (d, w) in missing_batches {
                    by_worker.entry(w).or_default().push(d);
                }
                for (worker, digests) in by_worker {
                    out.push(PrimaryAction::Synchronize { worker, digests, source: header.author });
                }
                self.pending_headers.insert(key, header);
            }
            return Err(VoteRejection::Deferred);
        }
        self.pending_headers.remove(&key);
        self.voted.insert(slot, digest);
        self.metrics.votes_cast += 1;
        Ok(Vote::new(&header, &self.signer))
    }

    fn retry_pending_headers(&mut self, out: &mut Vec<PrimaryAction>) {
        let ready: Vec<Header> = self
            .pending_headers
            .values()
            .filter(|h| {
                h.parents.iter().all(|p| p.round < self.dag.gc_round() || self.dag.contains(&p.digest))
                    && h.payload.iter().all(|(d, _)| self.known_batches.contains(d))
            })
            .cloned()
            .collect();
        for h in ready {
            let author = h.author;
            if let Ok(vote) = self.verify_and_vote(h, out) {
                out.push(PrimaryAction::Send { to: author, msg: PrimaryMessage::Vote(vote) });
            }
        }
    }

    fn handle_vote(&mut self, vote: Vote, out: &mut Vec<PrimaryAction>) -> Vec<Certificate> {
        let Some(agg) = self.aggregators.get_mut(&vote.header_digest) else { return Vec::new() };
        match agg.aggregate_vote(vote, &self.committee, &self.keys) {
            Ok(Some(cert)) => {
                self.metrics.certificates_formed += 1;
                self.broadcast(PrimaryMessage::Certificate(cert.clone()), out);
                match self.process_incoming_certificate(cert, self.id, out) {
                    CertStatus::Stored(certs) => certs,
                    _ => Vec::new(),
                }
            }
            Ok(None) => Vec::new(),
            Err(e) => {
                log::debug!("{}: dropping vote: {e}", self.id);
                Vec::new()
            }
        }
    }

    /// Verifies a certificate and inserts it once its history is present.
    pub fn process_incoming_certificate(
        &mut self,
        cert: Certificate,
        from: ValidatorId,
        out: &mut Vec<PrimaryAction>,
    ) -> CertStatus {
        let digest = cert.digest();
        let key = (cert.round(), cert.author(), digest);
        if self.dag.contains(&digest) || self.deferred.contains_key(&key) {
            return CertStatus::Duplicate;
        }
        if cert.round() < self.dag.gc_round() {
            return CertStatus::BelowGc;
        }
        if let Err(e) = cert.verify(&self.committee, &self.keys) {
            return CertStatus::Rejected(e);
        }
        let missing = self.dag.missing_parents(&cert);
        if !missing.is_empty() {
            self.defer(key, cert);
            self.metrics.fetches_sent += 1;
            let msg = PrimaryMessage::FetchCertificates { wanted: missing, from_round: 0, to_round: 0 };
            if from != self.id {
                out.push(PrimaryAction::Send { to: from, msg: msg.clone() });
            }
            if key.1 != from && key.1 != self.id {
                out.push(PrimaryAction::Send { to: key.1, msg });
            }
            return CertStatus::Deferred;
        }
        match self.dag.insert(cert.clone()) {
            Insert::Inserted => {}
            Insert::Duplicate => return CertStatus::Duplicate,
            Insert::BelowGc => return CertStatus::BelowGc,
            Insert::Conflict(other) => return CertStatus::Conflict(other),
        }
        let mut stored = vec![cert];
        self.drain_deferred(&mut stored);
        self.dag.try_advance_round(&self.committee);
        self.retry_pending_headers(out);
        CertStatus::Stored(stored)
    }

    fn defer(&mut self, key: DeferKey, cert: Certificate) {
        if self.deferred.len() >= self.config.deferred_limit {
            while let Some(old) = self.deferred_fifo.pop_front() {
                if self.deferred.remove(&old).is_some() {
                    self.metrics.deferred_evicted += 1;
                    break;
                }
            }
        }
        self.deferred.insert(key, cert);
        self.deferred_fifo.push_back(key);
    }

    /// Inserts deferred certificates whose parents are now all present.
    fn drain_deferred(&mut self, stored: &mut Vec<Certificate>) {
        loop {
            let ready: Vec<DeferKey> =
                self.deferred.iter().filter(|(_, c)| self.dag.missing_parents(c).is_empty()).map(|(k, _)| *k).collect();
            if ready.is_empty() {
                return;
            }
            for key in ready {
                let cert = self.deferred.remove(&key).expect("listed above");
                match self.dag.insert(cert.clone()) {
                    Insert::Inserted => stored.push(cert),
                    other => log::debug!("{}: deferred {} not inserted: {other:?}", self.id, cert.label()),
                }
            }
        }
    }

    pub fn handle_fetch_certificates(&self, wanted: &[CertRef], from_round: Round, to_round: Round) -> PrimaryMessage {
        let mut certificates: Vec<Certificate> = wanted.iter().filter_map(|r| self.dag.get(&r.digest)).cloned().collect();
        let mut seen: HashSet<Digest> = certificates.iter().map(Certificate::digest).collect();
        let from = from_round.max(self.dag.gc_round());
        if from_round <= to_round {
            for r in from..=to_round.min(self.dag.highest_round()) {
                certificates.extend(self.dag.round(r).filter(|c| seen.insert(c.digest())).cloned());
            }
        }
        certificates.truncate(self.config.fetch_limit);
        certificates.sort_by_key(|c| (c.round(), c.author()));
        PrimaryMessage::CertificateRange { certificates, gc_round: self.dag.gc_round() }
    }

    /// Dispatches one network message. Returns certificates newly inserted
    /// into the DAG, in causal order, for the ordering layer.
    pub fn handle_message(&mut self, from: ValidatorId, msg: PrimaryMessage, out: &mut Vec<PrimaryAction>) -> Vec<Certificate> {
        match msg {
            PrimaryMessage::Header(h) | PrimaryMessage::RequestVote(h) => {
                if h.author != from {
                    return Vec::new();
                }
                match self.verify_and_vote(h, out) {
                    Ok(vote) => out.push(PrimaryAction::Send { to: from, msg: PrimaryMessage::Vote(vote) }),
                    Err(e) => log::trace!("{}: no vote: {e}", self.id),
                }
                Vec::new()
            }
            PrimaryMessage::Vote(v) => {
                if v.voter != from {
                    return Vec::new();
                }
                self.handle_vote(v, out)
            }
            PrimaryMessage::Certificate(c) => self.on_certificate(c, from, out),
            PrimaryMessage::FetchCertificates { wanted, from_round, to_round } => {
                let reply = self.handle_fetch_certificates(&wanted, from_round, to_round);
                out.push(PrimaryAction::Send { to: from, msg: reply });
                Vec::new()
            }
            PrimaryMessage::CertificateRange { certificates, .. } => {
                let mut stored = Vec::new();
                for c in certificates {
                    stored.extend(self.on_certificate(c, from, out));
                }
                stored
            }
        }
    }

    fn on_certificate(&mut self, cert: Certificate, from: ValidatorId, out: &mut Vec<PrimaryAction>) -> Vec<Certificate> {
        match self.process_incoming_certificate(cert, from, out) {
            CertStatus::Stored(certs) => certs,
            CertStatus::Conflict(d) => {
                log::warn!("{}: conflicting certificate against {d:?}", self.id);
                Vec::new()
            }
            _ => Vec::new(),
        }
    }

    /// Periodic recovery: re-request votes, chase missing parents, and pull
    /// recent rounds from peers when our round has not moved.
    pub fn tick(&mut self, out: &mut Vec<PrimaryAction>) {
        let last = self.proposer.last_round;
        let uncertified: Vec<(Header, BTreeSet<ValidatorId>)> = self
            .aggregators
            .values()
            .filter(|a| !a.is_certified() && a.header().round == last)
            .map(|a| (a.header().clone(), a.voters().clone()))
            .collect();
        for (h, voters) in uncertified {
            for to in self.peers().into_iter().filter(|p| !voters.contains(p)) {
                out.push(PrimaryAction::Send { to, msg: PrimaryMessage::RequestVote(h.clone()) });
            }
        }

        if !self.deferred.is_empty() {
            let mut wanted: BTreeSet<CertRef> = BTreeSet::new();
            for c in self.deferred.values() {
                wanted.extend(self.dag.missing_parents(c).into_iter().filter(|p| {
                    !self.deferred.contains_key(&(p.round, p.author, p.digest))
                }));
            }
            let wanted: Vec<CertRef> = wanted.into_iter().take(self.config.fetch_limit).collect();
            if !wanted.is_empty() {
                self.metrics.fetches_sent += 1;
                self.broadcast(PrimaryMessage::FetchCertificates { wanted, from_round: 0, to_round: 0 }, out);
            }
        }

        let round = self.dag.current_round();
        if round == self.last_tick_round {
            self.stalled_ticks += 1;
        } else {
            self.stalled_ticks = 0;
            self.last_tick_round = round;
        }
        if self.stalled_ticks >= 2 {
            self.metrics.fetches_sent += 1;
            let from_round = round.saturating_sub(1).max(self.dag.gc_round());
            self.broadcast(PrimaryMessage::FetchCertificates { wanted: Vec::new(), from_round, to_round: Round::MAX }, out);
        }
    }

    /// Applies the ordering layer's GC horizon.
    pub fn garbage_collect(&mut self, committed_round: Round) {
        if self.dag.garbage_collect(committed_round, self.config.gc_depth).is_none() {
            return;
        }
        let gc = self.dag.gc_round();
        self.voted = self.voted.split_off(&(gc, ValidatorId(0)));
        self.aggregators.retain(|_, a| a.header().round >= gc);
        self.pending_headers = self.pending_headers.split_off(&(gc, ValidatorId(0), Digest([0; 32])));
        self.deferred = self.deferred.split_off(&(gc, ValidatorId(0), Digest([0; 32])));
        self.deferred_fifo.retain(|k| k.0 >= gc);
    }
}
