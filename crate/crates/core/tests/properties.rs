//! Invariants checked over generated inputs.

use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dagbft::consensus::{Bullshark, LeaderSchedule, Outcome, DEFAULT_GC_DEPTH};
use dagbft::dag_builder::{linear_extension, DagBuilder};
use dagbft::execution::TxOp;
use dagbft::harness::{run_scenario, Property};
use dagbft::oracle::{incremental_commit, oracle_commit};
use dagbft::scenario::Scenario;
use dagbft::types::{Committee, ValidatorId};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Any two quorums share at least f+1 stake, for arbitrary stake vectors.
    #[test]
    fn quorums_intersect_in_validity_stake(stakes in prop::collection::vec(1u64..20, 1..9)) {
        let c = Committee::new(stakes.iter().enumerate().map(|(i, s)| (ValidatorId(i as u32 + 1), *s))).unwrap();
        prop_assert!(2 * c.quorum_threshold() >= c.total_stake() + c.validity_threshold());
        prop_assert!(c.quorum_threshold() <= c.total_stake());
        prop_assert!(3 * c.max_faulty() < c.total_stake());
    }

    #[test]
    fn tx_ops_roundtrip(key in any::<u64>(), value in prop::collection::vec(any::<u8>(), 0..64), a in any::<u64>(), b in any::<u64>()) {
        let w = TxOp::Write { key, value };
        prop_assert_eq!(TxOp::parse(&w.encode()), Some(w));
        if a != b {
            let s = TxOp::Swap { a, b };
            prop_assert_eq!(TxOp::parse(&s.encode()), Some(s.clone()));
            prop_assert_eq!(s.objects().len(), 2);
        }
    }

    /// Every delivery order of the same DAG yields the oracle's sequence, and
    /// within it no certificate repeats and anchor rounds increase.
    #[test]
    fn delivery_order_does_not_matter(seed in any::<u64>(), n in prop::sample::select(vec![4u32, 7]), rounds in 4u64..14) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DagBuilder::random(n, rounds, 0.2, &mut rng);
        let schedule = LeaderSchedule::new(b.committee().clone(), seed);
        let expected = oracle_commit(&b.vertices(), b.committee(), &schedule);
        for _ in 0..3 {
            let order = linear_extension(&b.vertices(), &mut rng);
            prop_assert_eq!(&incremental_commit(&order, b.committee(), &schedule), &expected);
        }
        let flat: Vec<_> = expected.iter().flatten().map(|c| c.digest()).collect();
        prop_assert_eq!(flat.iter().collect::<HashSet<_>>().len(), flat.len());
        let anchors: Vec<u64> = expected.iter().map(|g| g.last().unwrap().round()).collect();
        prop_assert!(anchors.windows(2).all(|w| w[0] < w[1]));
    }

    /// A replica that has seen a prefix of the delivery commits a prefix of
    /// what a replica with the full DAG commits.
    #[test]
    fn partial_views_commit_prefixes(seed in any::<u64>(), cut in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DagBuilder::random(4, 12, 0.15, &mut rng);
        let schedule = LeaderSchedule::new(b.committee().clone(), seed);
        let order = linear_extension(&b.vertices(), &mut rng);
        let full = incremental_commit(&order, b.committee(), &schedule);
        let k = (order.len() as f64 * cut) as usize;
        let partial = incremental_commit(&order[..k], b.committee(), &schedule);
        prop_assert!(partial.len() <= full.len());
        prop_assert_eq!(&full[..partial.len()], &partial[..]);
    }

    /// Every committed certificate is in the causal history of its anchor.
    #[test]
    fn committed_certificates_are_anchor_ancestors(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DagBuilder::random(4, 10, 0.15, &mut rng);
        let schedule = LeaderSchedule::new(b.committee().clone(), seed);
        let mut bs = Bullshark::new(b.committee().clone(), schedule, DEFAULT_GC_DEPTH);
        for c in linear_extension(&b.vertices(), &mut rng) {
            if let Outcome::Commit(subdags) = bs.process_certificate(c) {
                for s in subdags {
                    let history = b.dag().reachable([s.leader.digest()], 1);
                    prop_assert!(s.certificates.iter().all(|c| history.contains(&c.digest())));
                    prop_assert_eq!(s.certificates.last().map(|c| c.digest()), Some(s.leader.digest()));
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Simulated runs under any single Byzantine behaviour and random
    /// network parameters report no safety violation.
    #[test]
    fn simulated_runs_are_safe(seed in any::<u64>(), gst in 0u64..4_000, drop in 0.0f64..0.2) {
        let s = Scenario::from_toml(&format!(
            "name = \"p\"\nn = 4\nrotate_byzantine = true\ngst = {gst}\ndrop_before_gst = {drop}\n\
             target_round = 15\nmax_time = 60000\n[load]\ntxs = 40\ninterval = 30\nswap_percent = 30\nkeys = 16\n\
             [protocol]\nmin_digests = 1\nmax_header_delay = 150\n"
        )).unwrap().with_seed(seed);
        let r = run_scenario(&s);
        let bad: Vec<Property> = r.violations.iter().map(|v| v.property).collect();
        prop_assert!(bad.is_empty(), "{:?}", r.violations);
        prop_assert!(r.min_committed_round() >= 15);
    }
}
