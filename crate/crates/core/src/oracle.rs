//! Ground truth for the ordering layer, computed from a complete DAG in one
//! shot instead of incrementally.
//!
//! The highest anchor with `f+1` votes is final. Walking down two rounds at a
//! time, an anchor joins the chain iff the current chain head reaches it.
//! Reachability uses precomputed ancestor sets and each history is emitted
//! by repeated minimum selection, so no code is shared with
//! [`crate::consensus`].

use std::collections::{BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::consensus::{Bullshark, LeaderSchedule, Outcome, DEFAULT_GC_DEPTH};
use crate::dag_builder::{linear_extension, DagBuilder};
use crate::types::{Certificate, Committee, Digest, Round};

/// Committed sequence implied by `certs` (non-genesis certificates of a
/// causally closed DAG), as one certificate list per anchor.
pub fn oracle_commit(certs: &[Certificate], committee: &Committee, schedule: &LeaderSchedule) -> Vec<Vec<Certificate>> {
    let by_digest: HashMap<Digest, &Certificate> = certs.iter().map(|c| (c.digest(), c)).collect();
    let mut sorted: Vec<&Certificate> = certs.iter().collect();
    sorted.sort_by_key(|c| c.round());
    let mut ancestors: HashMap<Digest, BTreeSet<Digest>> = HashMap::new();
    for c in &sorted {
        let mut set = BTreeSet::from([c.digest()]);
        for p in c.parents().iter().filter(|p| p.round > 0) {
            set.extend(ancestors[&p.digest].iter().copied());
        }
        ancestors.insert(c.digest(), set);
    }
    let anchor = |r: Round| certs.iter().find(|c| c.round() == r && c.author() == schedule.leader(r));
    let votes = |a: &Certificate| -> u64 {
        certs
            .iter()
            .filter(|c| c.round() == a.round() + 1 && c.parents().iter().any(|p| p.digest == a.digest()))
            .map(|c| committee.stake(c.author()))
            .sum()
    };

    let max_round = certs.iter().map(Certificate::round).max().unwrap_or(0);
    let top = (1..=max_round)
        .rev()
        .filter(|r| r % 2 == 1)
        .filter_map(anchor)
        .find(|a| votes(a) >= committee.validity_threshold());
    let Some(top) = top else { return Vec::new() };

    let mut chain = vec![top];
    let mut r = top.round();
    while r >= 3 {
        r -= 2;
        if let Some(a) = anchor(r) {
            if ancestors[&chain.last().unwrap().digest()].contains(&a.digest()) {
                chain.push(a);
            }
        }
    }
    chain.reverse();

    let mut done: BTreeSet<Digest> = BTreeSet::new();
    let mut out = Vec::new();
    for a in chain {
        let mut left: Vec<&Certificate> =
            ancestors[&a.digest()].iter().filter(|d| !done.contains(*d)).map(|d| by_digest[d]).collect();
        let mut seq = Vec::with_capacity(left.len());
        while !left.is_empty() {
            let (i, _) = left.iter().enumerate().min_by_key(|(_, c)| (c.round(), c.author())).unwrap();
            let c = left.swap_remove(i);
            done.insert(c.digest());
            seq.push(c.clone());
        }
        out.push(seq);
    }
    out
}

/// Incremental result of delivering `order` to a fresh ordering instance.
pub fn incremental_commit(order: &[Certificate], committee: &Committee, schedule: &LeaderSchedule) -> Vec<Vec<Certificate>> {
    let mut bs = Bullshark::new(committee.clone(), schedule.clone(), DEFAULT_GC_DEPTH);
    let mut out = Vec::new();
    for c in order {
        if let Outcome::Commit(subdags) = bs.process_certificate(c.clone()) {
            out.extend(subdags.into_iter().map(|s| s.certificates));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OracleMismatch {
    pub seed: u64,
    pub permutation: usize,
    pub expected: usize,
    pub got: usize,
}

/// One random DAG per seed, checked against `permutations` random delivery
/// orders. Returns the number of committed anchors the oracle saw.
pub fn check_seed(seed: u64, n: u32, rounds: Round, permutations: usize) -> Result<usize, OracleMismatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = DagBuilder::random(n, rounds, 0.15, &mut rng);
    let schedule = LeaderSchedule::new(b.committee().clone(), seed);
    let vertices = b.vertices();
    let expected = oracle_commit(&vertices, b.committee(), &schedule);
    for p in 0..permutations {
        let order = linear_extension(&vertices, &mut rng);
        let got = incremental_commit(&order, b.committee(), &schedule);
        if got != expected {
            return Err(OracleMismatch { seed, permutation: p, expected: expected.len(), got: got.len() });
        }
    }
    Ok(expected.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ValidatorId;

    #[test]
    fn unvoted_unlinked_anchor_is_absent() {
        let mut b = DagBuilder::new(4);
        let schedule = LeaderSchedule::new(b.committee().clone(), 0).with_overrides([(1, ValidatorId(1)), (3, ValidatorId(2))]);
        b.add_round(1);
        for a in 1..=4 {
            b.add_vertex(2, ValidatorId(a), Some(&[2, 3, 4]));
        }
        b.add_round(3);
        b.add_round(4);
        let out = oracle_commit(&b.vertices(), b.committee(), &schedule);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].last().unwrap().label(), "v2@3");
        assert!(out[0].iter().all(|c| c.label() != "v1@1"));
    }

    #[test]
    fn a_few_seeds_agree() {
        for seed in 0..5 {
            check_seed(seed, 4, 10, 5).unwrap();
        }
    }
}
