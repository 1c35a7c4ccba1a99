//! Local DAG storage shared by the primary and the ordering layer.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::ops::RangeInclusive;

use crate::types::{CertRef, Certificate, Committee, Digest, Round, ValidatorId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Insert {
    Inserted,
    Duplicate,
    BelowGc,
    /// A different certificate already sits at this (round, author).
    Conflict(Digest),
}

#[derive(Clone, Debug)]
pub struct DagState {
    vertices: BTreeMap<Round, BTreeMap<ValidatorId, Certificate>>,
    index: HashMap<Digest, (Round, ValidatorId)>,
    gc_round: Round,
    current_round: Round,
}

impl DagState {
    /// A DAG holding the committee's genesis certificates.
    pub fn new(committee: &Committee) -> Self {
        let mut dag = DagState { vertices: BTreeMap::new(), index: HashMap::new(), gc_round: 0, current_round: 0 };
        for cert in Certificate::genesis(committee) {
            dag.insert(cert);
        }
        dag.try_advance_round(committee);
        dag
    }

    pub fn gc_round(&self) -> Round {
        self.gc_round
    }

    pub fn current_round(&self) -> Round {
        self.current_round
    }

    pub fn highest_round(&self) -> Round {
        self.vertices.keys().next_back().copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, digest: &Digest) -> bool {
        self.index.contains_key(digest)
    }

    pub fn get(&self, digest: &Digest) -> Option<&Certificate> {
        let (r, a) = self.index.get(digest)?;
        self.vertices.get(r)?.get(a)
    }

    pub fn get_at(&self, round: Round, author: ValidatorId) -> Option<&Certificate> {
        self.vertices.get(&round)?.get(&author)
    }

    /// Certificates of one round in author order.
    pub fn round(&self, round: Round) -> impl Iterator<Item = &Certificate> {
        self.vertices.get(&round).into_iter().flat_map(|m| m.values())
    }

    /// All certificates, ascending by (round, author).
    pub fn iter(&self) -> impl Iterator<Item = &Certificate> {
        self.vertices.values().flat_map(|m| m.values())
    }

    pub fn rounds_retained(&self) -> usize {
        self.vertices.len()
    }

    /// Parents that are neither stored nor below the GC horizon.
    pub fn missing_parents(&self, cert: &Certificate) -> Vec<CertRef> {
        cert.parents().iter().filter(|p| p.round >= self.gc_round && !self.contains(&p.digest)).copied().collect()
    }

    pub fn insert(&mut self, cert: Certificate) -> Insert {
        if cert.round() < self.gc_round {
            return Insert::BelowGc;
        }
        let slot = self.vertices.entry(cert.round()).or_default();
        if let Some(existing) = slot.get(&cert.author()) {
            return if existing.digest() == cert.digest() { Insert::Duplicate } else { Insert::Conflict(existing.digest()) };
        }
        self.index.insert(cert.digest(), (cert.round(), cert.author()));
        slot.insert(cert.author(), cert);
        Insert::Inserted
    }

    /// Moves past every round holding a stake quorum. Returns the new round
    /// if it changed.
    pub fn try_advance_round(&mut self, committee: &Committee) -> Option<Round> {
        let start = self.current_round;
        while self
            .vertices
            .get(&self.current_round)
            .is_some_and(|m| committee.quorum_reached(m.keys()).unwrap_or(false))
        {
            self.current_round += 1;
        }
        (self.current_round != start).then_some(self.current_round)
    }

    /// Raises the GC horizon and drops everything below it.
    pub fn garbage_collect(&mut self, committed_round: Round, gc_depth: Round) -> Option<RangeInclusive<Round>> {
        let target = committed_round.saturating_sub(gc_depth);
        if target <= self.gc_round {
            return None;
        }
        let purged = self.gc_round..=target - 1;
        self.gc_round = target;
        let keep = self.vertices.split_off(&target);
        for certs in std::mem::replace(&mut self.vertices, keep).into_values() {
            for cert in certs.values() {
                self.index.remove(&cert.digest());
            }
        }
        Some(purged)
    }

    /// Digests reachable from `roots` (inclusive) through stored parents at
    /// rounds `>= floor`.
    pub fn reachable(&self, roots: impl IntoIterator<Item = Digest>, floor: Round) -> HashSet<Digest> {
        let mut seen = HashSet::new();
        let mut queue: VecDeque<Digest> = roots.into_iter().collect();
        while let Some(d) = queue.pop_front() {
            let Some(cert) = self.get(&d) else { continue };
            if cert.round() < floor || !seen.insert(d) {
                continue;
            }
            queue.extend(cert.parents().iter().filter(|p| p.round >= floor).map(|p| p.digest));
        }
        seen
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag_builder::DagBuilder;

    #[test]
    fn genesis_and_advance() {
        let committee = Committee::unit(4);
        let dag = DagState::new(&committee);
        assert_eq!(dag.len(), 4);
        assert_eq!(dag.current_round(), 1);
    }

    #[test]
    fn round_advance_needs_quorum() {
        let mut b = DagBuilder::new(4);
        let mut dag = DagState::new(b.committee());
        let r1: Vec<Certificate> = (1..=4).map(|a| b.add_vertex(1, ValidatorId(a), None)).collect();
        dag.insert(r1[0].clone());
        dag.insert(r1[1].clone());
        assert_eq!(dag.try_advance_round(b.committee()), None);
        dag.insert(r1[2].clone());
        assert_eq!(dag.try_advance_round(b.committee()), Some(2));
        dag.insert(r1[3].clone());
        assert_eq!(dag.try_advance_round(b.committee()), None);
        assert_eq!(dag.current_round(), 2);
    }

    #[test]
    fn gc_examples() {
        let b = DagBuilder::new(4);
        let mut dag = DagState::new(b.committee());
        assert_eq!(dag.garbage_collect(10, 50), None);
        assert_eq!(dag.gc_round(), 0);
        assert_eq!(dag.garbage_collect(60, 50), Some(0..=9));
        assert_eq!(dag.gc_round(), 10);
        assert!(dag.is_empty());
    }

    #[test]
    fn below_gc_is_dropped() {
        let mut b = DagBuilder::new(4);
        let certs: Vec<Certificate> = (1..=12).flat_map(|r| b.add_round(r)).collect();
        let mut dag = DagState::new(b.committee());
        dag.garbage_collect(60, 50);
        let late = certs.iter().find(|c| c.round() == 9).unwrap().clone();
        assert_eq!(dag.insert(late), Insert::BelowGc);
        let ok = certs.iter().find(|c| c.round() == 10).unwrap().clone();
        assert!(dag.missing_parents(&ok).is_empty());
        assert_eq!(dag.insert(ok), Insert::Inserted);
    }

    #[test]
    fn conflict_detected() {
        let mut b = DagBuilder::new(4);
        let mut dag = DagState::new(b.committee());
        let a = b.add_vertex(1, ValidatorId(1), None);
        let other = b.forge_twin(&a);
        assert_eq!(dag.insert(a.clone()), Insert::Inserted);
        assert_eq!(dag.insert(a.clone()), Insert::Duplicate);
        assert_eq!(dag.insert(other), Insert::Conflict(a.digest()));
    }
}
