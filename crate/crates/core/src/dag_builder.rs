//! Hand-built and random certified DAGs for scripted scenarios, the oracle
//! check and tests. The builder holds every key, so it can certify anything.

use std::collections::HashSet;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng;

use crate::dag::DagState;
use crate::types::{CertRef, Certificate, Committee, Header, KeyRing, Round, Signer, ValidatorId, Vote};

pub struct DagBuilder {
    committee: Committee,
    keys: KeyRing,
    signers: Vec<Signer>,
    dag: DagState,
    all: Vec<Certificate>,
}

impl DagBuilder {
    pub fn new(n: u32) -> Self {
        Self::with_committee(Committee::unit(n))
    }

    pub fn with_committee(committee: Committee) -> Self {
        let keys = KeyRing::new(&committee);
        let signers = committee.ids().map(|id| keys.signer(id).expect("member")).collect();
        let dag = DagState::new(&committee);
        let all = dag.iter().cloned().collect();
        DagBuilder { committee, keys, signers, dag, all }
    }

    pub fn committee(&self) -> &Committee {
        &self.committee
    }

    pub fn keys(&self) -> &KeyRing {
        &self.keys
    }

    pub fn dag(&self) -> &DagState {
        &self.dag
    }

    /// Every certificate built so far, genesis included, in build order.
    pub fn certificates(&self) -> &[Certificate] {
        &self.all
    }

    /// Non-genesis certificates in build order.
    pub fn vertices(&self) -> Vec<Certificate> {
        self.all.iter().filter(|c| c.round() > 0).cloned().collect()
    }

    pub fn certify(&self, header: Header) -> Certificate {
        let votes = self.signers.iter().map(|s| Vote::new(&header, s)).collect();
        Certificate::new(header, votes, &self.committee, &self.keys).expect("all validators vote")
    }

    /// Adds a vertex whose strong parents are the given authors at
    /// `round - 1`, or every stored vertex of that round when `None`.
    pub fn add_vertex(&mut self, round: Round, author: ValidatorId, parents: Option<&[u32]>) -> Certificate {
        let refs = self
            .dag
            .round(round - 1)
            .filter(|c| parents.is_none_or(|ps| ps.contains(&c.author().0)))
            .map(Certificate::reference)
            .collect();
        self.add_with_refs(round, author, refs)
    }

    pub fn add_with_refs(&mut self, round: Round, author: ValidatorId, parents: Vec<CertRef>) -> Certificate {
        let header = Header::new(author, round, Vec::new(), parents, round);
        let cert = self.certify(header);
        self.dag.insert(cert.clone());
        self.all.push(cert.clone());
        cert
    }

    /// A full round where everyone references every vertex of the previous one.
    pub fn add_round(&mut self, round: Round) -> Vec<Certificate> {
        let ids: Vec<ValidatorId> = self.committee.ids().collect();
        ids.into_iter().map(|a| self.add_vertex(round, a, None)).collect()
    }

    /// A second certificate for the same (round, author) as `cert`. Honest
    /// voting makes this impossible in a real run.
    pub fn forge_twin(&self, cert: &Certificate) -> Certificate {
        let h = cert.header();
        self.certify(Header::new(h.author, h.round, h.payload.clone(), h.parents.clone(), h.created_ts + 1))
    }

    /// A random DAG: each slot is filled with probability `1 - p_missing`
    /// (at least a quorum per round), each vertex references a random
    /// quorum-or-more of the previous round, and sometimes a weak link.
    pub fn random(n: u32, rounds: Round, p_missing: f64, rng: &mut impl Rng) -> Self {
        let mut b = DagBuilder::new(n);
        let quorum = b.committee.quorum_threshold() as usize;
        let ids: Vec<ValidatorId> = b.committee.ids().collect();
        for r in 1..=rounds {
            let mut present: Vec<ValidatorId> = ids.iter().copied().filter(|_| !rng.gen_bool(p_missing)).collect();
            if present.len() < quorum {
                present = ids.choose_multiple(rng, quorum).copied().collect();
                present.sort();
            }
            for author in present {
                let prev: Vec<CertRef> = b.dag.round(r - 1).map(Certificate::reference).collect();
                let k = rng.gen_range(quorum..=prev.len());
                let mut parents: Vec<CertRef> = prev.choose_multiple(rng, k).copied().collect();
                if r >= 3 && rng.gen_bool(0.2) {
                    let strong: HashSet<ValidatorId> = parents.iter().map(|p| p.author).collect();
                    let older = (1..=r - 2)
                        .flat_map(|o| b.dag.round(o))
                        .filter(|c| !strong.contains(&c.author()))
                        .choose(rng)
                        .map(Certificate::reference);
                    parents.extend(older);
                }
                b.add_with_refs(r, author, parents);
            }
        }
        b
    }
}

/// A uniformly shuffled topological order of `certs` (genesis assumed
/// delivered).
pub fn linear_extension(certs: &[Certificate], rng: &mut impl Rng) -> Vec<Certificate> {
    let mut delivered: HashSet<_> = HashSet::new();
    let mut pending: Vec<&Certificate> = certs.iter().collect();
    let mut order = Vec::with_capacity(certs.len());
    while !pending.is_empty() {
        let ready: Vec<usize> = (0..pending.len())
            .filter(|i| pending[*i].parents().iter().all(|p| p.round == 0 || delivered.contains(&p.digest)))
            .collect();
        let pick = *ready.choose(rng).expect("certificates form a DAG");
        let cert = pending.swap_remove(pick);
        delivered.insert(cert.digest());
        order.push(cert.clone());
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn random_dags_are_well_formed() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let b = DagBuilder::random(4, 10, 0.2, &mut rng);
            for c in b.vertices() {
                c.verify(b.committee(), b.keys()).unwrap();
                assert!(b.dag().missing_parents(&c).is_empty());
            }
            for r in 1..=10 {
                assert!(b.dag().round(r).count() >= 3);
            }
        }
    }

    #[test]
    fn linear_extensions_respect_parents() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let b = DagBuilder::random(4, 6, 0.1, &mut rng);
        let order = linear_extension(&b.vertices(), &mut rng);
        assert_eq!(order.len(), b.vertices().len());
        let mut seen = HashSet::new();
        for c in &order {
            assert!(c.parents().iter().all(|p| p.round == 0 || seen.contains(&p.digest)));
            seen.insert(c.digest());
        }
    }
}
