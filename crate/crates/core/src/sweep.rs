//! Multi-seed campaigns. Seeds are independent, so they fan out over rayon
//! when the `parallel` feature is on; results are returned in seed order
//! either way.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::harness::{run_scenario, Property};
use crate::oracle::{check_seed, OracleMismatch};
use crate::scenario::Scenario;
use crate::types::Round;

/// Applies `f` to every seed, in parallel when available.
pub fn map_seeds<T, F>(seeds: Range<u64>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        seeds.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_seeds_sequential(seeds, f)
    }
}

pub fn map_seeds_sequential<T, F: Fn(u64) -> T>(seeds: Range<u64>, f: F) -> Vec<T> {
    seeds.map(f).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedResult {
    pub seed: u64,
    pub behaviour: String,
    pub violated: Vec<Property>,
    pub settled: bool,
    pub min_committed_round: Round,
}

impl SeedResult {
    pub fn to_line(&self) -> String {
        let v: Vec<String> = self.violated.iter().map(|p| format!("{p:?}")).collect();
        format!(
            "{},{},{},{},{}",
            self.seed,
            self.behaviour,
            if v.is_empty() { "ok".into() } else { v.join("|") },
            self.settled,
            self.min_committed_round
        )
    }
}

pub fn fuzz_one(base: &Scenario, seed: u64) -> SeedResult {
    let scenario = base.clone().with_seed(seed);
    let behaviour = scenario
        .byzantine()
        .iter()
        .map(|(id, b)| format!("{id}={b}"))
        .collect::<Vec<_>>()
        .join(" ");
    let report = run_scenario(&scenario);
    let mut violated: Vec<Property> = report.violations.iter().map(|v| v.property).collect();
    violated.sort();
    violated.dedup();
    SeedResult {
        seed,
        behaviour: if behaviour.is_empty() { "honest".into() } else { behaviour },
        violated,
        settled: report.all_settled(),
        min_committed_round: report.min_committed_round(),
    }
}

pub fn fuzz(base: &Scenario, seeds: Range<u64>) -> Vec<SeedResult> {
    map_seeds(seeds, |s| fuzz_one(base, s))
}

pub fn fuzz_sequential(base: &Scenario, seeds: Range<u64>) -> Vec<SeedResult> {
    map_seeds_sequential(seeds, |s| fuzz_one(base, s))
}

/// Oracle comparison for random DAGs, one per seed.
pub fn oracle_sweep(seeds: Range<u64>, n: u32, rounds: Round, permutations: usize) -> Vec<Result<usize, OracleMismatch>> {
    map_seeds(seeds, |s| check_seed(s, n, rounds, permutations))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let base = Scenario::from_toml(
            "name = \"f\"\nn = 4\nrotate_byzantine = true\ntarget_round = 9\nmax_time = 60000\n[protocol]\nmin_digests = 1\nmax_header_delay = 200\n",
        )
        .unwrap();
        assert_eq!(fuzz(&base, 0..6), fuzz_sequential(&base, 0..6));
    }
}
