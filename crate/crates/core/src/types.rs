//! Protocol data model shared by every layer: committees, digests, batches,
//! headers, votes and certificates, plus the quorum arithmetic.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub type Round = u64;
pub type Stake = u64;
pub type WorkerId = u32;
pub type ClientId = u64;
/// Simulated milliseconds.
pub type SimTime = u64;

/// Epoch changes are not modelled.
pub const EPOCH: u64 = 0;

/// Smallest payload a worker will accept.
pub const MIN_TX_SIZE: usize = 9;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ValidatorId(pub u32);

impl fmt::Display for ValidatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl fmt::Debug for ValidatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", hex::encode(&self.0[..4]))
    }
}

/// SHA-256 over already-serialized content.
pub fn digest_of(content: &[u8]) -> Digest {
    Digest(Sha256::digest(content).into())
}

/// Canonical byte encoding: fields in declaration order, integers big-endian,
/// variable-length fields prefixed with a u32 length.
#[derive(Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new(tag: &[u8]) -> Self {
        let mut enc = Encoder { buf: Vec::with_capacity(128) };
        enc.bytes(tag);
        enc
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
        self
    }

    pub fn digest(&mut self, d: &Digest) -> &mut Self {
        self.buf.extend_from_slice(&d.0);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CommitteeError {
    #[error("committee has no validators")]
    Empty,
    #[error("validator {0} listed twice")]
    DuplicateValidator(ValidatorId),
    #[error("validator {0} has zero stake")]
    ZeroStake(ValidatorId),
    #[error("unknown validator {0}")]
    UnknownValidator(ValidatorId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Committee {
    stakes: BTreeMap<ValidatorId, Stake>,
    total: Stake,
    pub epoch: u64,
}

impl Committee {
    pub fn new(validators: impl IntoIterator<Item = (ValidatorId, Stake)>) -> Result<Self, CommitteeError> {
        let mut stakes = BTreeMap::new();
        for (id, stake) in validators {
            if stake == 0 {
                return Err(CommitteeError::ZeroStake(id));
            }
            if stakes.insert(id, stake).is_some() {
                return Err(CommitteeError::DuplicateValidator(id));
            }
        }
        if stakes.is_empty() {
            return Err(CommitteeError::Empty);
        }
        let total = stakes.values().sum();
        Ok(Committee { stakes, total, epoch: EPOCH })
    }

    /// `n` validators with ids `1..=n` and one unit of stake each.
    pub fn unit(n: u32) -> Self {
        Committee::new((1..=n).map(|i| (ValidatorId(i), 1))).expect("n >= 1")
    }

    pub fn size(&self) -> usize {
        self.stakes.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = ValidatorId> + '_ {
        self.stakes.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ValidatorId, Stake)> + '_ {
        self.stakes.iter().map(|(k, v)| (*k, *v))
    }

    pub fn contains(&self, id: ValidatorId) -> bool {
        self.stakes.contains_key(&id)
    }

    pub fn stake(&self, id: ValidatorId) -> Stake {
        self.stakes.get(&id).copied().unwrap_or(0)
    }

    pub fn total_stake(&self) -> Stake {
        self.total
    }

    /// Largest Byzantine stake the committee tolerates: total >= 3f + 1.
    pub fn max_faulty(&self) -> Stake {
        (self.total - 1) / 3
    }

    /// 2f+1 when total = 3f+1; in general total - f, which keeps any two
    /// quorums overlapping in at least f+1.
    pub fn quorum_threshold(&self) -> Stake {
        self.total - self.max_faulty()
    }

    pub fn validity_threshold(&self) -> Stake {
        self.max_faulty() + 1
    }

    /// Stake carried by a set of voters; duplicates count once.
    pub fn stake_of<'a>(&self, voters: impl IntoIterator<Item = &'a ValidatorId>) -> Result<Stake, CommitteeError> {
        let unique: BTreeSet<ValidatorId> = voters.into_iter().copied().collect();
        unique.into_iter().try_fold(0, |acc, id| match self.stakes.get(&id) {
            Some(s) => Ok(acc + s),
            None => Err(CommitteeError::UnknownValidator(id)),
        })
    }

    pub fn quorum_reached<'a>(&self, voters: impl IntoIterator<Item = &'a ValidatorId>) -> Result<bool, CommitteeError> {
        Ok(self.stake_of(voters)? >= self.quorum_threshold())
    }

    pub fn validity_reached<'a>(&self, voters: impl IntoIterator<Item = &'a ValidatorId>) -> Result<bool, CommitteeError> {
        Ok(self.stake_of(voters)? >= self.validity_threshold())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Transaction {
    pub payload: Vec<u8>,
    pub gas_fee: u64,
    pub submitter: ClientId,
}

impl Transaction {
    pub fn new(payload: Vec<u8>, gas_fee: u64, submitter: ClientId) -> Self {
        Transaction { payload, gas_fee, submitter }
    }

    pub fn encode_into(&self, enc: &mut Encoder) {
        enc.bytes(&self.payload).u64(self.gas_fee).u64(self.submitter);
    }

    pub fn digest(&self) -> Digest {
        let mut enc = Encoder::new(b"tx");
        self.encode_into(&mut enc);
        digest_of(&enc.finish())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("a batch must carry at least one transaction")]
pub struct EmptyBatch;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub transactions: Vec<Transaction>,
    pub author: ValidatorId,
    pub worker: WorkerId,
}

impl Batch {
    pub fn new(transactions: Vec<Transaction>, author: ValidatorId, worker: WorkerId) -> Result<Self, EmptyBatch> {
        if transactions.is_empty() {
            return Err(EmptyBatch);
        }
        Ok(Batch { transactions, author, worker })
    }

    pub fn digest(&self) -> Digest {
        let mut enc = Encoder::new(b"batch");
        enc.u32(self.author.0).u32(self.worker).u32(self.transactions.len() as u32);
        for tx in &self.transactions {
            tx.encode_into(&mut enc);
        }
        digest_of(&enc.finish())
    }
}

/// A reference from a header to an earlier certificate. Carrying round and
/// author lets receivers check the parent structure without a lookup.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CertRef {
    pub round: Round,
    pub author: ValidatorId,
    pub digest: Digest,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HeaderError {
    #[error("header epoch {0} does not match committee epoch")]
    WrongEpoch(u64),
    #[error("unknown author {0}")]
    UnknownAuthor(ValidatorId),
    #[error("payload digest {0:?} appears twice")]
    DuplicatePayload(Digest),
    #[error("genesis header must have no parents")]
    GenesisWithParents,
    #[error("parent {0:?} is not from an earlier round")]
    ParentNotOlder(CertRef),
    #[error("two parents from {author} at round {round}")]
    DuplicateParentAuthor { author: ValidatorId, round: Round },
    #[error("parents from the previous round carry stake {0}, below quorum")]
    ParentQuorum(Stake),
    #[error("unknown parent author {0}")]
    UnknownParentAuthor(ValidatorId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Header {
    pub author: ValidatorId,
    pub round: Round,
    pub epoch: u64,
    pub payload: Vec<(Digest, WorkerId)>,
    /// Sorted; strong parents are the ones at `round - 1`, anything older is
    /// a weak link.
    pub parents: Vec<CertRef>,
    pub created_ts: SimTime,
}

impl Header {
    pub fn new(
        author: ValidatorId,
        round: Round,
        payload: Vec<(Digest, WorkerId)>,
        mut parents: Vec<CertRef>,
        created_ts: SimTime,
    ) -> Self {
        parents.sort();
        parents.dedup();
        Header { author, round, epoch: EPOCH, payload, parents, created_ts }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new(b"header");
        enc.u32(self.author.0).u64(self.round).u64(self.epoch);
        enc.u32(self.payload.len() as u32);
        for (d, w) in &self.payload {
            enc.digest(d).u32(*w);
        }
        enc.u32(self.parents.len() as u32);
        for p in &self.parents {
            enc.u64(p.round).u32(p.author.0).digest(&p.digest);
        }
        enc.u64(self.created_ts);
        enc.finish()
    }

    pub fn digest(&self) -> Digest {
        digest_of(&self.encode())
    }

    pub fn strong_parents(&self) -> impl Iterator<Item = &CertRef> {
        let prev = self.round.wrapping_sub(1);
        self.parents.iter().filter(move |p| p.round == prev)
    }

    pub fn weak_parents(&self) -> impl Iterator<Item = &CertRef> {
        let prev = self.round.wrapping_sub(1);
        self.parents.iter().filter(move |p| p.round < prev)
    }

    /// Stateless well-formedness: epoch, payload uniqueness and the
    /// 2f+1-from-previous-round parent rule.
    pub fn check_structure(&self, committee: &Committee) -> Result<(), HeaderError> {
        if self.epoch != committee.epoch {
            return Err(HeaderError::WrongEpoch(self.epoch));
        }
        if !committee.contains(self.author) {
            return Err(HeaderError::UnknownAuthor(self.author));
        }
        let mut seen = BTreeSet::new();
        for (d, _) in &self.payload {
            if !seen.insert(*d) {
                return Err(HeaderError::DuplicatePayload(*d));
            }
        }
        if self.round == 0 {
            return if self.parents.is_empty() { Ok(()) } else { Err(HeaderError::GenesisWithParents) };
        }
        let mut slots = BTreeSet::new();
        for p in &self.parents {
            if p.round >= self.round {
                return Err(HeaderError::ParentNotOlder(*p));
            }
            if !committee.contains(p.author) {
                return Err(HeaderError::UnknownParentAuthor(p.author));
            }
            if !slots.insert((p.round, p.author)) {
                return Err(HeaderError::DuplicateParentAuthor { author: p.author, round: p.round });
            }
        }
        let authors: Vec<ValidatorId> = self.strong_parents().map(|p| p.author).collect();
        let stake = committee.stake_of(&authors).unwrap_or(0);
        if stake < committee.quorum_threshold() {
            return Err(HeaderError::ParentQuorum(stake));
        }
        Ok(())
    }
}

/// Simulation stand-in for a signature: only the holder of a validator's
/// key material can produce it, and the key ring can check it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AuthToken(pub Digest);

#[derive(Clone)]
pub struct Signer {
    id: ValidatorId,
    secret: [u8; 32],
}

impl Signer {
    pub fn id(&self) -> ValidatorId {
        self.id
    }

    pub fn sign(&self, message: &Digest) -> AuthToken {
        AuthToken(token_for(&self.secret, message))
    }
}

fn token_for(secret: &[u8; 32], message: &Digest) -> Digest {
    let mut enc = Encoder::new(b"sig");
    enc.bytes(secret).digest(message);
    digest_of(&enc.finish())
}

/// Key material for every committee member; owned by the simulator, which
/// hands each node only its own [`Signer`].
#[derive(Clone)]
pub struct KeyRing {
    secrets: BTreeMap<ValidatorId, [u8; 32]>,
}

impl KeyRing {
    pub fn new(committee: &Committee) -> Self {
        let secrets = committee
            .ids()
            .map(|id| {
                let mut enc = Encoder::new(b"key");
                enc.u32(id.0);
                (id, digest_of(&enc.finish()).0)
            })
            .collect();
        KeyRing { secrets }
    }

    pub fn signer(&self, id: ValidatorId) -> Option<Signer> {
        self.secrets.get(&id).map(|s| Signer { id, secret: *s })
    }

    pub fn verify(&self, signer: ValidatorId, message: &Digest, token: &AuthToken) -> bool {
        self.secrets.get(&signer).is_some_and(|s| token_for(s, message) == token.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vote {
    pub header_digest: Digest,
    pub header_author: ValidatorId,
    pub header_round: Round,
    pub voter: ValidatorId,
    pub signature: AuthToken,
}

impl Vote {
    pub fn new(header: &Header, signer: &Signer) -> Self {
        let header_digest = header.digest();
        Vote {
            header_digest,
            header_author: header.author,
            header_round: header.round,
            voter: signer.id(),
            signature: signer.sign(&header_digest),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CertificateError {
    #[error("vote from {0} refers to a different header")]
    ForeignVote(ValidatorId),
    #[error("two votes from {0}")]
    DuplicateVoter(ValidatorId),
    #[error("invalid signature from {0}")]
    BadSignature(ValidatorId),
    #[error("unknown voter {0}")]
    UnknownVoter(ValidatorId),
    #[error("votes carry stake {0}, below quorum")]
    BadQuorum(Stake),
    #[error("recorded digest does not match the header")]
    DigestMismatch,
    #[error("genesis certificate does not match the committee genesis")]
    BadGenesis,
    #[error(transparent)]
    Header(#[from] HeaderError),
}

/// A header together with a stake quorum of votes. Its digest is the header
/// digest, so at most one certificate identity exists per header.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Certificate {
    header: Header,
    votes: Vec<Vote>,
    digest: Digest,
}

impl Certificate {
    /// Builds a certificate, refusing vote sets that do not reach quorum.
    pub fn new(header: Header, mut votes: Vec<Vote>, committee: &Committee, keys: &KeyRing) -> Result<Self, CertificateError> {
        votes.sort_by_key(|v| v.voter);
        let digest = header.digest();
        let cert = Certificate { header, votes, digest };
        cert.check_votes(committee, keys)?;
        Ok(cert)
    }

    pub fn genesis(committee: &Committee) -> Vec<Certificate> {
        committee
            .ids()
            .map(|id| {
                let header = Header::new(id, 0, Vec::new(), Vec::new(), 0);
                let digest = header.digest();
                Certificate { header, votes: Vec::new(), digest }
            })
            .collect()
    }

    fn check_votes(&self, committee: &Committee, keys: &KeyRing) -> Result<(), CertificateError> {
        let mut voters = BTreeSet::new();
        for v in &self.votes {
            if v.header_digest != self.digest || v.header_author != self.header.author || v.header_round != self.header.round {
                return Err(CertificateError::ForeignVote(v.voter));
            }
            if !committee.contains(v.voter) {
                return Err(CertificateError::UnknownVoter(v.voter));
            }
            if !voters.insert(v.voter) {
                return Err(CertificateError::DuplicateVoter(v.voter));
            }
            if !keys.verify(v.voter, &self.digest, &v.signature) {
                return Err(CertificateError::BadSignature(v.voter));
            }
        }
        let stake = committee.stake_of(&voters).unwrap_or(0);
        if stake < committee.quorum_threshold() {
            return Err(CertificateError::BadQuorum(stake));
        }
        Ok(())
    }

    /// Full validation of a received certificate.
    pub fn verify(&self, committee: &Committee, keys: &KeyRing) -> Result<(), CertificateError> {
        if self.header.digest() != self.digest {
            return Err(CertificateError::DigestMismatch);
        }
        if self.header.round == 0 {
            let expected = Header::new(self.header.author, 0, Vec::new(), Vec::new(), 0);
            if self.header != expected || !self.votes.is_empty() {
                return Err(CertificateError::BadGenesis);
            }
            return Ok(());
        }
        self.header.check_structure(committee)?;
        self.check_votes(committee, keys)
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    pub fn votes(&self) -> &[Vote] {
        &self.votes
    }

    pub fn digest(&self) -> Digest {
        self.digest
    }

    pub fn round(&self) -> Round {
        self.header.round
    }

    pub fn author(&self) -> ValidatorId {
        self.header.author
    }

    pub fn parents(&self) -> &[CertRef] {
        &self.header.parents
    }

    pub fn reference(&self) -> CertRef {
        CertRef { round: self.round(), author: self.author(), digest: self.digest }
    }

    pub fn label(&self) -> String {
        format!("{}@{}", self.author(), self.round())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn ids(v: &[u32]) -> Vec<ValidatorId> {
        v.iter().map(|i| ValidatorId(*i)).collect()
    }

    #[test]
    fn quorum_examples() {
        let c = Committee::unit(4);
        assert_eq!(c.quorum_threshold(), 3);
        assert_eq!(c.validity_threshold(), 2);
        assert!(c.quorum_reached(&ids(&[1, 2, 3])).unwrap());
        assert!(!c.quorum_reached(&ids(&[1, 2])).unwrap());
        assert!(c.quorum_reached(&ids(&[1, 2, 3, 4])).unwrap());
        // duplicates do not double count
        assert!(!c.quorum_reached(&ids(&[1, 1, 2])).unwrap());
    }

    #[test]
    fn validity_examples() {
        let c = Committee::unit(4);
        assert!(c.validity_reached(&ids(&[2, 3, 4])).unwrap());
        assert!(!c.validity_reached(&ids(&[1])).unwrap());
        assert!(c.validity_reached(&ids(&[1, 2])).unwrap());
    }

    #[test]
    fn unknown_voter_is_an_error() {
        let c = Committee::unit(4);
        assert_eq!(c.quorum_reached(&ids(&[1, 9])), Err(CommitteeError::UnknownValidator(ValidatorId(9))));
        assert_eq!(c.validity_reached(&ids(&[7])), Err(CommitteeError::UnknownValidator(ValidatorId(7))));
    }

    #[test]
    fn committee_rejects_bad_input() {
        assert_eq!(Committee::new(vec![]), Err(CommitteeError::Empty));
        assert_eq!(
            Committee::new(vec![(ValidatorId(1), 1), (ValidatorId(1), 2)]),
            Err(CommitteeError::DuplicateValidator(ValidatorId(1)))
        );
        assert_eq!(Committee::new(vec![(ValidatorId(1), 0)]), Err(CommitteeError::ZeroStake(ValidatorId(1))));
    }

    #[test]
    fn weighted_thresholds_keep_intersection() {
        // total 5: f = 1, quorum must be 4 so that 4 + 4 - 5 >= f + 1
        let c = Committee::new((1..=5).map(|i| (ValidatorId(i), 1))).unwrap();
        assert_eq!(c.max_faulty(), 1);
        assert_eq!(c.quorum_threshold(), 4);
    }

    /// Enumerates every pair of voter subsets.
    #[test]
    fn quorum_intersection_by_enumeration() {
        for n in [4u32, 7, 10] {
            let c = Committee::unit(n);
            let f = c.max_faulty();
            assert_eq!(n as u64, 3 * f + 1);
            let quorums: Vec<u32> = (0u32..(1 << n))
                .filter(|m| m.count_ones() as u64 >= c.quorum_threshold())
                .collect();
            for a in &quorums {
                for b in &quorums {
                    assert!((a & b).count_ones() as u64 > f, "n={n} a={a:b} b={b:b}");
                }
            }
        }
    }

    #[test]
    fn digest_is_deterministic() {
        let x = b"some canonical bytes";
        assert_eq!(digest_of(x), digest_of(x));
        assert_eq!(digest_of(&[]), digest_of(&[]));
    }

    #[test]
    fn no_collisions_over_many_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut inputs = HashSet::new();
        while inputs.len() < 100_000 {
            let len = rng.gen_range(0..24);
            let v: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            inputs.insert(v);
        }
        let digests: HashSet<Digest> = inputs.iter().map(|v| digest_of(v)).collect();
        assert_eq!(digests.len(), inputs.len());
    }

    #[test]
    fn empty_batch_rejected() {
        assert_eq!(Batch::new(vec![], ValidatorId(1), 0), Err(EmptyBatch));
    }

    #[test]
    fn header_structure_rules() {
        let c = Committee::unit(4);
        let genesis = Certificate::genesis(&c);
        let parents: Vec<CertRef> = genesis.iter().map(|g| g.reference()).collect();
        let ok = Header::new(ValidatorId(1), 1, vec![], parents[..3].to_vec(), 5);
        assert_eq!(ok.check_structure(&c), Ok(()));
        let thin = Header::new(ValidatorId(1), 1, vec![], parents[..2].to_vec(), 5);
        assert_eq!(thin.check_structure(&c), Err(HeaderError::ParentQuorum(2)));
        let g = Header::new(ValidatorId(1), 0, vec![], parents[..1].to_vec(), 0);
        assert_eq!(g.check_structure(&c), Err(HeaderError::GenesisWithParents));
        let d = digest_of(b"x");
        let dup = Header::new(ValidatorId(1), 1, vec![(d, 0), (d, 0)], parents.clone(), 5);
        assert_eq!(dup.check_structure(&c), Err(HeaderError::DuplicatePayload(d)));
        let mut wrong_epoch = ok.clone();
        wrong_epoch.epoch = 3;
        assert_eq!(wrong_epoch.check_structure(&c), Err(HeaderError::WrongEpoch(3)));
    }

    #[test]
    fn signatures_are_bound_to_signer_and_message() {
        let c = Committee::unit(4);
        let keys = KeyRing::new(&c);
        let s1 = keys.signer(ValidatorId(1)).unwrap();
        let m = digest_of(b"m");
        let t = s1.sign(&m);
        assert!(keys.verify(ValidatorId(1), &m, &t));
        assert!(!keys.verify(ValidatorId(2), &m, &t));
        assert!(!keys.verify(ValidatorId(1), &digest_of(b"other"), &t));
    }

    fn round1_header(c: &Committee) -> Header {
        let parents = Certificate::genesis(c).iter().map(|g| g.reference()).collect();
        Header::new(ValidatorId(1), 1, vec![], parents, 10)
    }

    #[test]
    fn certificate_needs_quorum_of_valid_votes() {
        let c = Committee::unit(4);
        let keys = KeyRing::new(&c);
        let h = round1_header(&c);
        let votes: Vec<Vote> = (1..=3).map(|i| Vote::new(&h, &keys.signer(ValidatorId(i)).unwrap())).collect();
        let cert = Certificate::new(h.clone(), votes.clone(), &c, &keys).unwrap();
        assert_eq!(cert.digest(), h.digest());
        assert_eq!(cert.verify(&c, &keys), Ok(()));

        assert_eq!(Certificate::new(h.clone(), votes[..2].to_vec(), &c, &keys), Err(CertificateError::BadQuorum(2)));
        let mut dup = votes.clone();
        dup.push(votes[0].clone());
        assert_eq!(Certificate::new(h.clone(), dup, &c, &keys), Err(CertificateError::DuplicateVoter(ValidatorId(1))));
        let mut forged = votes.clone();
        forged[2].signature = keys.signer(ValidatorId(1)).unwrap().sign(&h.digest());
        assert_eq!(Certificate::new(h, forged, &c, &keys), Err(CertificateError::BadSignature(ValidatorId(3))));
    }

    #[test]
    fn genesis_verifies() {
        let c = Committee::unit(4);
        let keys = KeyRing::new(&c);
        for g in Certificate::genesis(&c) {
            assert_eq!(g.verify(&c, &keys), Ok(()));
        }
    }

    proptest! {
        #[test]
        fn certificate_constructor_enforces_quorum(mask in 0u32..(1 << 7)) {
            let c = Committee::unit(7);
            let keys = KeyRing::new(&c);
            let h = round1_header(&c);
            let votes: Vec<Vote> = (1..=7u32)
                .filter(|i| mask & (1 << (i - 1)) != 0)
                .map(|i| Vote::new(&h, &keys.signer(ValidatorId(i)).unwrap()))
                .collect();
            let n = votes.len() as u64;
            let res = Certificate::new(h, votes, &c, &keys);
            prop_assert_eq!(res.is_ok(), n >= c.quorum_threshold());
        }

        #[test]
        fn header_digest_changes_with_content(ts in 0u64..1000, other in 0u64..1000) {
            let c = Committee::unit(4);
            let mut a = round1_header(&c);
            a.created_ts = ts;
            let mut b = a.clone();
            b.created_ts = other;
            prop_assert_eq!(a.digest() == b.digest(), ts == other);
        }
    }
}
