//! Deterministic simulation of a DAG-based mempool with anchor-based
//! ordering and a small object execution layer.

pub mod consensus;
pub mod dag;
pub mod dag_builder;
pub mod execution;
pub mod oracle;
pub mod primary;
pub mod types;
pub mod worker;
pub mod node;
pub mod scenario;
pub mod simnet;
pub mod harness;
pub mod export;
pub mod sweep;
