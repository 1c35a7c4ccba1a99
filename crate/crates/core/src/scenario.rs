//! Scenario files: TOML describing the committee, network, faults, load and
//! protocol parameters of one simulation.
//!
//! ```toml
//! name = "honest_smoke"
//! n = 4
//! seed = 1
//! max_time = 600000
//!
//! [byzantine]
//! 4 = "silent"            # or "delayed:10", "equivocator", "vote_withholder"
//!
//! [load]
//! txs = 1000
//! ```
//!
//! Every field except `name` and `n` has a default; see the struct
//! definitions below.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::consensus::DEFAULT_GC_DEPTH;
use crate::simnet::ByzantineBehavior;
use crate::types::{Committee, Round, SimTime, ValidatorId, MIN_TX_SIZE};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Simulated,
    /// Explicit DAG and per-replica delivery orders; no network.
    DagScript,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub mode: Mode,
    pub n: u32,
    /// One entry per validator; unit stakes when empty.
    #[serde(default)]
    pub stakes: Vec<u64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub workers_per_validator: u32,
    #[serde(default)]
    pub gst: SimTime,
    #[serde(default = "default_delta")]
    pub delta: SimTime,
    #[serde(default = "default_latency")]
    pub latency: [SimTime; 2],
    #[serde(default = "default_pre_gst")]
    pub pre_gst_delay: [SimTime; 2],
    #[serde(default)]
    pub drop_before_gst: f64,
    #[serde(default = "default_max_time")]
    pub max_time: SimTime,
    #[serde(default = "default_retry")]
    pub retry_interval: SimTime,
    /// Stop once every honest replica has committed an anchor at or above
    /// this round.
    #[serde(default)]
    pub target_round: Option<Round>,
    /// Allow more Byzantine stake than the protocol tolerates.
    #[serde(default)]
    pub unsafe_byzantine: bool,
    /// Give one validator per seed a Byzantine behaviour, rotating through
    /// all four kinds. Used by fuzz campaigns.
    #[serde(default)]
    pub rotate_byzantine: bool,
    #[serde(default)]
    pub byzantine: BTreeMap<String, String>,
    /// Extra outgoing latency (ms) for slow honest validators.
    #[serde(default)]
    pub slow: BTreeMap<String, SimTime>,
    /// Fixed anchor leaders by round.
    #[serde(default)]
    pub leaders: BTreeMap<String, u32>,
    #[serde(default)]
    pub load: Load,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default)]
    pub execution: ExecutionSpec,
    #[serde(default)]
    pub script: Option<Script>,
    #[serde(default)]
    pub trace: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Load {
    pub txs: usize,
    pub tx_size: usize,
    pub fee_min: u64,
    pub fee_max: u64,
    /// Sim-time between consecutive submissions.
    pub interval: SimTime,
    pub start: SimTime,
    /// Size of the object key space.
    pub keys: u64,
    /// Share of swap transactions, in percent.
    pub swap_percent: u32,
    /// The first `duplicates` transactions are submitted a second time, to
    /// a different validator.
    pub duplicates: usize,
}

impl Default for Load {
    fn default() -> Self {
        Load { txs: 0, tx_size: 16, fee_min: 0, fee_max: 10, interval: 2, start: 0, keys: 256, swap_percent: 0, duplicates: 0 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Protocol {
    pub min_digests: usize,
    pub max_digests: usize,
    pub max_header_delay: SimTime,
    pub gc_depth: Round,
    pub batch_size_limit: usize,
    pub batch_timeout: SimTime,
    pub leader_wait: bool,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            min_digests: 32,
            max_digests: 1_000,
            max_header_delay: 1_000,
            gc_depth: DEFAULT_GC_DEPTH,
            batch_size_limit: 8,
            batch_timeout: 100,
            leader_wait: true,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExecutionSpec {
    pub max_attempts: u32,
    pub retry_interval: SimTime,
    /// (transaction index, number of leading attempts that fail).
    pub transient: Vec<[u64; 2]>,
    /// Validator id to the 0-based commit before which its executor crashes.
    pub crash: BTreeMap<String, usize>,
}

impl Default for ExecutionSpec {
    fn default() -> Self {
        ExecutionSpec { max_attempts: 10, retry_interval: 1_000, transient: Vec::new(), crash: BTreeMap::new() }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    pub vertices: Vec<ScriptVertex>,
    /// Replica id to its delivery order, as "v<author>@<round>" labels.
    pub deliveries: BTreeMap<String, Vec<String>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptVertex {
    pub round: Round,
    pub author: u32,
    /// Authors of the previous round referenced; all of them when absent.
    #[serde(default)]
    pub parents: Option<Vec<u32>>,
}

fn one() -> u32 {
    1
}
fn default_delta() -> SimTime {
    200
}
fn default_latency() -> [SimTime; 2] {
    [10, 50]
}
fn default_pre_gst() -> [SimTime; 2] {
    [10, 2_000]
}
fn default_max_time() -> SimTime {
    600_000
}
fn default_retry() -> SimTime {
    500
}

const ROTATION: [ByzantineBehavior; 4] = [
    ByzantineBehavior::Silent,
    ByzantineBehavior::Delayed(10),
    ByzantineBehavior::Equivocator,
    ByzantineBehavior::VoteWithholder,
];

fn parse_id(key: &str, n: u32) -> Result<ValidatorId, ScenarioError> {
    let id: u32 = key.trim_start_matches('v').parse().map_err(|_| ScenarioError::Invalid(format!("bad validator id {key:?}")))?;
    if id == 0 || id > n {
        return Err(ScenarioError::Invalid(format!("validator {id} outside 1..={n}")));
    }
    Ok(ValidatorId(id))
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn committee(&self) -> Committee {
        if self.stakes.is_empty() {
            Committee::unit(self.n)
        } else {
            Committee::new((1..=self.n).map(ValidatorId).zip(self.stakes.iter().copied())).expect("validated")
        }
    }

    pub fn byzantine(&self) -> BTreeMap<ValidatorId, ByzantineBehavior> {
        let mut out: BTreeMap<ValidatorId, ByzantineBehavior> = self
            .byzantine
            .iter()
            .map(|(k, v)| (parse_id(k, self.n).expect("validated"), v.parse().expect("validated")))
            .collect();
        if self.rotate_byzantine {
            let id = ValidatorId(1 + (self.seed % self.n as u64) as u32);
            let kind = ROTATION[((self.seed / self.n as u64) % 4) as usize];
            out.insert(id, kind);
        }
        out
    }

    pub fn slow(&self) -> BTreeMap<ValidatorId, SimTime> {
        self.slow.iter().map(|(k, v)| (parse_id(k, self.n).expect("validated"), *v)).collect()
    }

    pub fn leader_overrides(&self) -> BTreeMap<Round, ValidatorId> {
        self.leaders.iter().map(|(r, v)| (r.parse().expect("validated"), ValidatorId(*v))).collect()
    }

    pub fn crashes(&self) -> BTreeMap<ValidatorId, usize> {
        self.execution.crash.iter().map(|(k, v)| (parse_id(k, self.n).expect("validated"), *v)).collect()
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if !self.stakes.is_empty() {
            if self.stakes.len() != self.n as usize {
                return bad(format!("{} stakes for {} validators", self.stakes.len(), self.n));
            }
            if self.stakes.contains(&0) {
                return bad("stakes must be positive".into());
            }
        }
        if self.load.tx_size < MIN_TX_SIZE {
            return bad(format!("tx_size below {MIN_TX_SIZE}"));
        }
        if self.load.fee_min > self.load.fee_max {
            return bad("fee_min above fee_max".into());
        }
        if self.latency[0] > self.latency[1] || self.pre_gst_delay[0] > self.pre_gst_delay[1] {
            return bad("delay ranges must be ordered".into());
        }
        if !(0.0..=1.0).contains(&self.drop_before_gst) {
            return bad("drop_before_gst must be a probability".into());
        }
        if self.workers_per_validator == 0 || self.workers_per_validator > 1_000 {
            return bad("workers_per_validator must be in 1..=1000".into());
        }
        if self.protocol.gc_depth == 0 {
            return bad("gc_depth must be at least 1".into());
        }
        for (k, v) in &self.byzantine {
            parse_id(k, self.n)?;
            v.parse::<ByzantineBehavior>().map_err(ScenarioError::Invalid)?;
        }
        for k in self.slow.keys().chain(self.execution.crash.keys()) {
            parse_id(k, self.n)?;
        }
        for (r, v) in &self.leaders {
            let r: Round = r.parse().map_err(|_| ScenarioError::Invalid(format!("bad round {r:?}")))?;
            if r.is_multiple_of(2) {
                return bad(format!("leader override for even round {r}"));
            }
            parse_id(&v.to_string(), self.n)?;
        }
        if self.mode == Mode::DagScript && self.script.is_none() {
            return bad("dag_script mode needs a [script] table".into());
        }
        let committee = self.committee();
        let byz: Vec<ValidatorId> = self.byzantine().into_keys().collect();
        let byz_stake = committee.stake_of(&byz).unwrap_or(0);
        if byz_stake > committee.max_faulty() && !self.unsafe_byzantine {
            return bad(format!("Byzantine stake {byz_stake} exceeds f = {}", committee.max_faulty()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let s = Scenario::from_toml("name = \"x\"\nn = 4\n").unwrap();
        assert_eq!(s.protocol.gc_depth, 50);
        assert_eq!(s.protocol.min_digests, 32);
        assert_eq!(s.protocol.max_header_delay, 1_000);
        assert_eq!(s.load.tx_size, 16);
        assert_eq!(s.committee().total_stake(), 4);
    }

    #[test]
    fn byzantine_table() {
        let s = Scenario::from_toml("name = \"x\"\nn = 4\n[byzantine]\n4 = \"delayed:10\"\n").unwrap();
        assert_eq!(s.byzantine()[&ValidatorId(4)], ByzantineBehavior::Delayed(10));
    }

    #[test]
    fn rejects_bad_files() {
        for text in [
            "name = \"x\"\nn = 4\n[byzantine]\n3 = \"silent\"\n4 = \"silent\"\n",
            "name = \"x\"\nn = 4\n[byzantine]\n9 = \"silent\"\n",
            "name = \"x\"\nn = 4\n[byzantine]\n1 = \"noisy\"\n",
            "name = \"x\"\nn = 4\nstakes = [1, 1]\n",
            "name = \"x\"\nn = 4\n[load]\ntx_size = 8\n",
            "name = \"x\"\nn = 4\nbogus = 1\n",
            "name = \"x\"\nn = 4\nmode = \"dag_script\"\n",
            "name = \"x\"\nn = 4\n[leaders]\n2 = 1\n",
        ] {
            assert!(Scenario::from_toml(text).is_err(), "{text}");
        }
        let unsafe_ok = "name = \"x\"\nn = 4\nunsafe_byzantine = true\n[byzantine]\n3 = \"silent\"\n4 = \"silent\"\n";
        assert!(Scenario::from_toml(unsafe_ok).is_ok());
    }

    #[test]
    fn rotation_covers_every_behaviour() {
        let base = Scenario::from_toml("name = \"x\"\nn = 4\nrotate_byzantine = true\n").unwrap();
        let kinds: std::collections::BTreeSet<String> =
            (0..16).map(|s| base.clone().with_seed(s).byzantine().values().next().unwrap().to_string()).collect();
        assert_eq!(kinds.len(), 4);
    }
}
