//! Anchor-based total ordering over the certified DAG.
//!
//! Odd rounds carry an anchor chosen by [`LeaderSchedule`]; certificates of
//! the following even round that reference the anchor are its votes. An
//! anchor with `f+1` votes commits directly, and earlier anchors reachable
//! from it commit first, oldest to newest.

use std::collections::{BTreeMap, HashSet, VecDeque};

use crate::dag::{DagState, Insert};
use crate::types::{CertRef, Certificate, Committee, Digest, Round, Stake, ValidatorId};

pub const DEFAULT_GC_DEPTH: Round = 50;

/// splitmix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stake-weighted leader for `round`: `mix64(seed ^ mix64(round)) mod total`
/// picks a point on the cumulative stake line of validators in id order.
pub fn leader_schedule(round: Round, committee: &Committee, seed: u64) -> ValidatorId {
    let point = mix64(seed ^ mix64(round)) % committee.total_stake();
    let mut acc = 0;
    for (id, stake) in committee.iter() {
        acc += stake;
        if point < acc {
            return id;
        }
    }
    unreachable!("point below total stake")
}

#[derive(Clone, Debug)]
pub struct LeaderSchedule {
    committee: Committee,
    seed: u64,
    overrides: BTreeMap<Round, ValidatorId>,
}

impl LeaderSchedule {
    pub fn new(committee: Committee, seed: u64) -> Self {
        LeaderSchedule { committee, seed, overrides: BTreeMap::new() }
    }

    /// Pins specific rounds to specific leaders, for scripted scenarios.
    pub fn with_overrides(mut self, overrides: impl IntoIterator<Item = (Round, ValidatorId)>) -> Self {
        self.overrides.extend(overrides);
        self
    }

    pub fn leader(&self, round: Round) -> ValidatorId {
        self.overrides.get(&round).copied().unwrap_or_else(|| leader_schedule(round, &self.committee, self.seed))
    }

    pub fn is_anchor(&self, cert: &Certificate) -> bool {
        cert.round() % 2 == 1 && self.leader(cert.round()) == cert.author()
    }
}

#[derive(Clone, Debug)]
pub struct ConsensusState {
    pub last_committed_round: Round,
    pub last_committed_leader: Option<(Round, ValidatorId)>,
    pub last_committed_per_author: BTreeMap<ValidatorId, Round>,
    pub gc_depth: Round,
    pub gc_round: Round,
    committed: HashSet<Digest>,
    committed_by_round: BTreeMap<Round, Vec<Digest>>,
    next_index: u64,
}

impl ConsensusState {
    pub fn new(gc_depth: Round) -> Self {
        ConsensusState {
            last_committed_round: 0,
            last_committed_leader: None,
            last_committed_per_author: BTreeMap::new(),
            gc_depth,
            gc_round: 0,
            committed: HashSet::new(),
            committed_by_round: BTreeMap::new(),
            next_index: 0,
        }
    }

    pub fn is_committed(&self, digest: &Digest) -> bool {
        self.committed.contains(digest)
    }

    pub fn committed_len(&self) -> usize {
        self.committed.len()
    }
}

#[derive(Clone, Debug)]
pub struct CommittedSubDag {
    pub leader: Certificate,
    /// Ascending by (round, author); the leader is last.
    pub certificates: Vec<Certificate>,
    pub commit_index: u64,
}

#[derive(Clone, Debug)]
pub enum Outcome {
    Commit(Vec<CommittedSubDag>),
    NoOp,
}

#[derive(Clone, Debug)]
pub struct Bullshark {
    committee: Committee,
    schedule: LeaderSchedule,
    pub state: ConsensusState,
    dag: DagState,
    skipped: Vec<(Round, ValidatorId)>,
}

impl Bullshark {
    pub fn new(committee: Committee, schedule: LeaderSchedule, gc_depth: Round) -> Self {
        let dag = DagState::new(&committee);
        Bullshark { committee, schedule, state: ConsensusState::new(gc_depth), dag, skipped: Vec::new() }
    }

    pub fn dag(&self) -> &DagState {
        &self.dag
    }

    pub fn schedule(&self) -> &LeaderSchedule {
        &self.schedule
    }

    /// Anchor slots passed over without a commit, as (round, leader).
    pub fn skipped(&self) -> &[(Round, ValidatorId)] {
        &self.skipped
    }

    /// Feeds one certificate whose parents were already delivered.
    pub fn process_certificate(&mut self, cert: Certificate) -> Outcome {
        let round = cert.round();
        debug_assert!(self.dag.missing_parents(&cert).is_empty(), "delivery must be causal");
        if self.dag.insert(cert) != Insert::Inserted {
            return Outcome::NoOp;
        }
        if round < 2 || round % 2 == 1 {
            return Outcome::NoOp;
        }
        let anchor_round = round - 1;
        if anchor_round <= self.state.last_committed_round {
            return Outcome::NoOp;
        }
        let Some(anchor) = self.dag.get_at(anchor_round, self.schedule.leader(anchor_round)).cloned() else {
            return Outcome::NoOp;
        };
        if count_anchor_votes(&self.dag, &anchor, &self.committee) < self.committee.validity_threshold() {
            return Outcome::NoOp;
        }
        let leaders = self.order_leaders(&anchor);
        Outcome::Commit(self.commit_leader(leaders))
    }

    /// Anchors to commit, oldest first, ending with `anchor`.
    pub fn order_leaders(&mut self, anchor: &Certificate) -> Vec<Certificate> {
        let mut seq = vec![anchor.clone()];
        let mut cursor = anchor.clone();
        let mut r = anchor.round();
        while r >= self.state.last_committed_round + 3 && r >= 3 {
            r -= 2;
            let leader = self.schedule.leader(r);
            match self.dag.get_at(r, leader) {
                Some(prev) if linked(&cursor, prev, &self.dag) => {
                    cursor = prev.clone();
                    seq.push(cursor.clone());
                }
                _ => self.skipped.push((r, leader)),
            }
        }
        seq.reverse();
        seq
    }

    pub fn commit_leader(&mut self, leaders: Vec<Certificate>) -> Vec<CommittedSubDag> {
        let mut out = Vec::with_capacity(leaders.len());
        for leader in leaders {
            let certificates = flatten_sub_dag(&leader, &self.dag, &self.state.committed, self.dag.gc_round());
            for c in &certificates {
                self.state.committed.insert(c.digest());
                self.state.committed_by_round.entry(c.round()).or_default().push(c.digest());
                let hw = self.state.last_committed_per_author.entry(c.author()).or_default();
                *hw = (*hw).max(c.round());
            }
            self.state.last_committed_round = leader.round();
            self.state.last_committed_leader = Some((leader.round(), leader.author()));
            out.push(CommittedSubDag { leader, certificates, commit_index: self.state.next_index });
            self.state.next_index += 1;
        }
        self.garbage_collect();
        out
    }

    fn garbage_collect(&mut self) {
        let state = &mut self.state;
        state.gc_round = state.gc_round.max(state.last_committed_round.saturating_sub(state.gc_depth));
        self.dag.garbage_collect(state.last_committed_round, state.gc_depth);
        let keep = state.committed_by_round.split_off(&state.gc_round);
        for digests in std::mem::replace(&mut state.committed_by_round, keep).into_values() {
            for d in digests {
                state.committed.remove(&d);
            }
        }
    }
}

/// Stake of round `r+1` certificates that list the anchor as a parent.
pub fn count_anchor_votes(dag: &DagState, anchor: &Certificate, committee: &Committee) -> Stake {
    let digest = anchor.digest();
    dag.round(anchor.round() + 1)
        .filter(|c| c.parents().iter().any(|p| p.digest == digest))
        .map(|c| committee.stake(c.author()))
        .sum()
}

/// Whether a path of parent edges leads from `later` to `earlier`.
pub fn linked(later: &Certificate, earlier: &Certificate, dag: &DagState) -> bool {
    let floor = earlier.round().max(dag.gc_round());
    let target = earlier.digest();
    let mut seen = HashSet::new();
    let mut queue = VecDeque::from([later.digest()]);
    while let Some(d) = queue.pop_front() {
        if d == target {
            return true;
        }
        let Some(cert) = dag.get(&d) else { continue };
        for p in cert.parents() {
            if p.round >= floor && seen.insert(p.digest) {
                queue.push_back(p.digest);
            }
        }
    }
    false
}

/// The anchor's not-yet-committed causal history at rounds `>= gc_round`,
/// ascending by (round, author). Genesis is never part of a commit.
pub fn flatten_sub_dag(anchor: &Certificate, dag: &DagState, committed: &HashSet<Digest>, gc_round: Round) -> Vec<Certificate> {
    let floor = gc_round.max(1);
    let mut seen = HashSet::from([anchor.digest()]);
    let mut queue = VecDeque::from([anchor.clone()]);
    let mut history = Vec::new();
    while let Some(cert) = queue.pop_front() {
        for p in cert.parents() {
            if p.round < floor || committed.contains(&p.digest) || !seen.insert(p.digest) {
                continue;
            }
            if let Some(parent) = dag.get(&p.digest) {
                queue.push_back(parent.clone());
            }
        }
        history.push(cert);
    }
    history.sort_by_key(|c| (c.round(), c.author()));
    history
}

/// Certificates at rounds `[gc_round, round-2]` outside the causal history of
/// `strong`, to be referenced as weak links.
pub fn weak_link_candidates(dag: &DagState, round: Round, strong: &[CertRef]) -> Vec<CertRef> {
    if round < 3 {
        return Vec::new();
    }
    let floor = dag.gc_round().max(1);
    let covered = dag.reachable(strong.iter().map(|p| p.digest), floor);
    (floor..=round - 2)
        .flat_map(|r| dag.round(r))
        .filter(|c| !covered.contains(&c.digest()))
        .map(Certificate::reference)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag_builder::DagBuilder;

    fn v(i: u32) -> ValidatorId {
        ValidatorId(i)
    }

    #[test]
    fn leader_schedule_is_deterministic() {
        let c = Committee::unit(4);
        for r in (1..200).step_by(2) {
            assert_eq!(leader_schedule(r, &c, 7), leader_schedule(r, &c.clone(), 7));
        }
    }

    #[test]
    fn leader_frequency_unit_stake() {
        let c = Committee::unit(4);
        let mut counts = BTreeMap::new();
        for r in 1..=4000 {
            *counts.entry(leader_schedule(r, &c, 0)).or_insert(0u32) += 1;
        }
        assert_eq!(counts.len(), 4);
        for (id, n) in counts {
            assert!((850..=1150).contains(&n), "{id} chosen {n} times");
        }
    }

    #[test]
    fn all_stake_on_one() {
        let c = Committee::new([(v(1), 1), (v(2), 1000), (v(3), 1), (v(4), 1)]).unwrap();
        let solo = Committee::new([(v(9), 5)]).unwrap();
        for r in 1..100 {
            assert_eq!(leader_schedule(r, &solo, 3), v(9));
        }
        let heavy = (1..1000).filter(|r| leader_schedule(*r, &c, 3) == v(2)).count();
        assert!(heavy > 980);
    }

    #[test]
    fn votes_and_direct_commit() {
        let mut b = DagBuilder::new(4);
        let schedule = LeaderSchedule::new(b.committee().clone(), 0).with_overrides([(1, v(1))]);
        let mut bs = Bullshark::new(b.committee().clone(), schedule, DEFAULT_GC_DEPTH);
        for c in b.add_round(1) {
            assert!(matches!(bs.process_certificate(c), Outcome::NoOp));
        }
        let anchor = bs.dag().get_at(1, v(1)).unwrap().clone();
        assert_eq!(count_anchor_votes(bs.dag(), &anchor, b.committee()), 0);

        let no_vote = b.add_vertex(2, v(2), Some(&[2, 3, 4]));
        assert!(matches!(bs.process_certificate(no_vote), Outcome::NoOp));
        let vote1 = b.add_vertex(2, v(3), Some(&[1, 2, 3]));
        assert!(matches!(bs.process_certificate(vote1), Outcome::NoOp));
        assert_eq!(count_anchor_votes(bs.dag(), &anchor, b.committee()), 1);
        let vote2 = b.add_vertex(2, v(4), Some(&[1, 2, 3]));
        let Outcome::Commit(subdags) = bs.process_certificate(vote2) else { panic!("expected commit") };
        assert_eq!(subdags.len(), 1);
        assert_eq!(subdags[0].certificates, vec![anchor.clone()]);
        assert_eq!(bs.state.last_committed_round, 1);

        // a further vote for a committed anchor is a no-op
        let vote3 = b.add_vertex(2, v(1), Some(&[1, 2, 3]));
        assert!(matches!(bs.process_certificate(vote3), Outcome::NoOp));
    }

    #[test]
    fn order_leaders_examines_intermediate_rounds() {
        // anchors at 1..7 all missing votes; the round 9 anchor commits and
        // walks 7, 5, 3, 1
        let mut b = DagBuilder::new(4);
        let schedule = LeaderSchedule::new(b.committee().clone(), 0).with_overrides((1..20).map(|r| (r, v(1))));
        let mut bs = Bullshark::new(b.committee().clone(), schedule, DEFAULT_GC_DEPTH);
        for r in 1..=10 {
            for a in 1..=4 {
                let parents: &[u32] = if r % 2 == 0 && r < 10 { &[2, 3, 4] } else { &[1, 2, 3, 4] };
                let c = b.add_vertex(r, v(a), Some(parents));
                let outcome = bs.process_certificate(c);
                if r < 10 {
                    assert!(matches!(outcome, Outcome::NoOp), "round {r}");
                }
            }
        }
        // anchors 1,3,5,7 are unreferenced, so they are skipped
        assert_eq!(bs.state.last_committed_round, 9);
        assert_eq!(bs.skipped(), &[(7, v(1)), (5, v(1)), (3, v(1)), (1, v(1))]);
    }

    #[test]
    fn linked_paths() {
        let mut b = DagBuilder::new(4);
        let r1 = b.add_round(1);
        let direct = b.add_vertex(2, v(1), Some(&[1, 2, 3]));
        assert!(linked(&direct, &r1[0], b.dag()));
        assert!(!linked(&direct, &r1[3], b.dag()));
        let two_hop = b.add_vertex(3, v(1), Some(&[1, 2, 3]));
        assert!(linked(&two_hop, &r1[0], b.dag()));
    }

    #[test]
    fn flatten_orders_by_round_then_author() {
        let mut b = DagBuilder::new(4);
        b.add_round(1);
        b.add_round(2);
        let anchor = b.add_vertex(3, v(2), None);
        let flat = flatten_sub_dag(&anchor, b.dag(), &HashSet::new(), 0);
        let labels: Vec<String> = flat.iter().map(Certificate::label).collect();
        assert_eq!(labels, ["v1@1", "v2@1", "v3@1", "v4@1", "v1@2", "v2@2", "v3@2", "v4@2", "v2@3"]);
        let committed: HashSet<Digest> = flat[..8].iter().map(Certificate::digest).collect();
        assert_eq!(flatten_sub_dag(&anchor, b.dag(), &committed, 0), vec![anchor]);
    }

    #[test]
    fn weak_links_cover_lagging_vertices() {
        let mut b = DagBuilder::new(4);
        b.add_round(1);
        for r in 2..=4 {
            for a in 1..=3 {
                b.add_vertex(r, v(a), Some(&[1, 2, 3]));
            }
        }
        let strong: Vec<CertRef> = b.dag().round(4).map(Certificate::reference).collect();
        let orphan = b.dag().get_at(1, v(4)).unwrap().reference();
        assert_eq!(weak_link_candidates(b.dag(), 5, &strong), vec![orphan]);

        let lag = b.add_vertex(2, v(4), Some(&[1, 2, 3]));
        assert_eq!(weak_link_candidates(b.dag(), 5, &strong), vec![orphan, lag.reference()]);
        assert!(weak_link_candidates(b.dag(), 2, &strong).is_empty());

        let mut gc = b.dag().clone();
        gc.garbage_collect(53, 50);
        assert!(weak_link_candidates(&gc, 5, &strong).is_empty());
    }

    #[test]
    fn gc_prunes_committed_set() {
        let mut b = DagBuilder::new(4);
        let schedule = LeaderSchedule::new(b.committee().clone(), 5);
        let mut bs = Bullshark::new(b.committee().clone(), schedule, 4);
        for r in 1..=30 {
            for c in b.add_round(r) {
                bs.process_certificate(c);
            }
        }
        assert_eq!(bs.state.last_committed_round, 29);
        assert_eq!(bs.state.gc_round, 25);
        assert_eq!(bs.dag().gc_round(), 25);
        assert!(bs.state.committed_len() <= 4 * 5);
        assert!(bs.dag().rounds_retained() <= 6);
    }
}
