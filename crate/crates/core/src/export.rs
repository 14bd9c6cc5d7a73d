//! Topology export: Graphviz DOT for humans, the snapshot itself as JSON.

use std::fmt::Write;

use crate::control::TopologySnapshot;
use crate::quality::{classify_link, LinkClass};

/// DOT rendering of a snapshot. Nodes are the live reflectors, edges the
/// usable links. Tree edges are bold; edges carrying gateway max flow are
/// drawn dark and thick, the rest gray.
pub fn to_dot(snap: &TopologySnapshot, q_min: f64) -> String {
    let live = snap.reflector_ids();
    let flow = snap.max_flow.as_ref().map(|f| &f.flow_edges);
    let mut out = String::from("graph overlay {\n");
    if !snap.reflectors.is_empty() {
        out.push_str("  node [shape=box];\n");
    }
    for e in &snap.reflectors {
        let _ = writeln!(
            out,
            "  \"{}\" [label=\"{}\\n{}\"];",
            e.reflector,
            e.reflector,
            escape(&e.region)
        );
    }
    let mut links: Vec<_> = snap.links.iter().collect();
    links.sort_by_key(|l| l.stats.link);
    for l in links {
        let key = l.stats.link;
        if !live.contains(&key.low()) || !live.contains(&key.high()) {
            continue;
        }
        let q = match l.quality {
            Some(state) if state.is_initialized() => {
                if classify_link(&state, q_min) == LinkClass::Down {
                    continue;
                }
                Some(state.q)
            }
            _ => None,
        };
        let mut attrs = Vec::new();
        if snap.tree_edges.contains(&key) {
            attrs.push("style=bold".to_string());
        }
        if flow.is_some_and(|f| f.contains(&key)) {
            attrs.push("color=black".into());
            attrs.push("penwidth=2".into());
        } else {
            attrs.push("color=gray".into());
        }
        if let Some(q) = q {
            attrs.push(format!("label=\"{q:.2}\""));
        }
        let _ = writeln!(out, "  \"{}\" -- \"{}\" [{}];", key.low(), key.high(), attrs.join(", "));
    }
    out.push_str("}\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn to_json(snap: &TopologySnapshot) -> String {
    let mut s = serde_json::to_string_pretty(snap).expect("snapshots serialize");
    s.push('\n');
    s
}
