//! Output files: DAG in DOT, metrics, commit and effects logs, message trace.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::consensus::LeaderSchedule;
use crate::harness::RunReport;
use crate::types::{Certificate, Digest, Round};

/// Graphviz rendering of `certs` up to `max_round`. Nodes are labelled
/// `author@round`; anchors are boxes, committed vertices are filled, weak
/// links are dashed.
pub fn dag_to_dot(certs: &[Certificate], schedule: &LeaderSchedule, committed: &BTreeSet<Digest>, max_round: Option<Round>) -> String {
    let mut certs: Vec<&Certificate> = certs.iter().filter(|c| max_round.is_none_or(|m| c.round() <= m)).collect();
    certs.sort_by_key(|c| (c.round(), c.author()));
    certs.dedup_by_key(|c| c.digest());
    let present: BTreeSet<Digest> = certs.iter().map(|c| c.digest()).collect();
    let id = |d: &Digest| format!("n{}", &d.to_hex()[..12]);

    let mut s = String::from("digraph dag {\n  rankdir=BT;\n  node [fontname=\"monospace\"];\n");
    let mut round = None;
    for c in &certs {
        if round != Some(c.round()) {
            if round.is_some() {
                s.push_str("  }\n");
            }
            round = Some(c.round());
            let _ = writeln!(s, "  subgraph round_{} {{\n    rank=same;", c.round());
        }
        let shape = if schedule.is_anchor(c) { "box" } else { "ellipse" };
        let fill = if committed.contains(&c.digest()) { ", style=filled, fillcolor=lightgrey" } else { "" };
        let _ = writeln!(s, "    {} [label=\"{}@{}\", shape={shape}{fill}];", id(&c.digest()), c.author(), c.round());
    }
    if round.is_some() {
        s.push_str("  }\n");
    }
    for c in &certs {
        for p in c.parents().iter().filter(|p| present.contains(&p.digest)) {
            let style = if p.round + 1 < c.round() { " [style=dashed]" } else { "" };
            let _ = writeln!(s, "  {} -> {}{style};", id(&c.digest()), id(&p.digest));
        }
    }
    s.push_str("}\n");
    s
}

/// Writes every artefact of a run into `dir`.
pub fn write_run(report: &RunReport, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.csv"), report.metrics_csv())?;
    for r in &report.replicas {
        let mut log = String::from("index,leader_round,author,round,digest\n");
        for c in &r.commit_log {
            log.push_str(&c.to_line());
            log.push('\n');
        }
        fs::write(dir.join(format!("commits_{}.csv", r.id)), log)?;
        fs::write(dir.join(format!("effects_{}.txt", r.id)), r.effects.to_lines())?;
    }
    if !report.trace.is_empty() {
        let mut t = String::from("time,from,to,kind,digest\n");
        for rec in &report.trace {
            t.push_str(&rec.to_line());
            t.push('\n');
        }
        fs::write(dir.join("trace.csv"), t)?;
    }
    fs::write(dir.join("dag.dot"), dag_to_dot(&report.dag, &report.schedule, &report.committed, None))?;
    let mut v = String::new();
    for x in &report.violations {
        let who = x.replica.map(|r| r.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(v, "{},{:?},{},{}", x.time, x.property, who, x.detail);
    }
    fs::write(dir.join("violations.txt"), v)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag_builder::DagBuilder;
    use crate::types::ValidatorId;

    #[test]
    fn dot_marks_anchors_and_commits() {
        let mut b = DagBuilder::new(4);
        let schedule = LeaderSchedule::new(b.committee().clone(), 0).with_overrides([(1, ValidatorId(2))]);
        b.add_round(1);
        b.add_round(2);
        let anchor = b.dag().get_at(1, ValidatorId(2)).unwrap().digest();
        let dot = dag_to_dot(&b.vertices(), &schedule, &BTreeSet::from([anchor]), Some(1));
        assert!(dot.contains("label=\"v2@1\", shape=box, style=filled"));
        assert!(dot.contains("label=\"v1@1\", shape=ellipse]"));
        assert!(!dot.contains("@2"));
        let full = dag_to_dot(&b.vertices(), &schedule, &BTreeSet::new(), None);
        assert_eq!(full.matches(" -> ").count(), 16);
    }
}
