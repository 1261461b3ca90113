//! Automaton construction from a hidden trace and its cluster ids, plus the
//! DFA side: subset construction, trash completion and table-filling
//! minimization.
//!
//! Nodes are cluster ids. The walk starts at node `-1`; every step adds (or
//! reinforces) the edge from the current node to the cluster of the step's
//! pattern, and the step label (`T1`, `X2`, ...) is appended to that edge's
//! long label. Two consecutive patterns in the same cluster give a self
//! loop.

mod dfa;
mod dot;

pub use dfa::{determinize, minimize, Dfa, MinimizedDfa, StateLabel};
pub use dot::{export_dfa_dot, export_dot, LabelMode};

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};
use crate::grammar::{Corpus, GrammarSpec};
use crate::lstm::HiddenTrace;
use crate::symbol::{StepLabel, Symbol};

pub type NodeId = i64;

pub const START_NODE: NodeId = -1;
pub const TRASH_NODE: NodeId = -2;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Edge {
    pub weight: usize,
    pub long_label: Vec<StepLabel>,
    pub short_label: BTreeSet<Symbol>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedAutomaton {
    pub nodes: BTreeSet<NodeId>,
    pub edges: BTreeMap<(NodeId, NodeId), Edge>,
    /// Built without resetting to `-1` between sequences, so each
    /// sequence's last node links to the next sequence's first node.
    pub flow_edges: bool,
}

impl ExtractedAutomaton {
    pub fn new(flow_edges: bool) -> Self {
        ExtractedAutomaton {
            nodes: BTreeSet::from([START_NODE]),
            edges: BTreeMap::new(),
            flow_edges,
        }
    }

    pub fn add_step(&mut self, from: NodeId, to: NodeId, label: StepLabel) {
        self.nodes.insert(from);
        self.nodes.insert(to);
        let edge = self.edges.entry((from, to)).or_default();
        edge.weight += 1;
        edge.long_label.push(label);
        edge.short_label.insert(label.symbol);
    }

    /// Nodes with an outgoing edge carrying `E`: the next symbol ends the
    /// sequence.
    pub fn final_nodes(&self) -> BTreeSet<NodeId> {
        self.edges
            .iter()
            .filter(|(_, e)| e.short_label.contains(&Symbol::E))
            .map(|(&(from, _), _)| from)
            .collect()
    }

    pub fn total_weight(&self) -> usize {
        self.edges.values().map(|e| e.weight).sum()
    }

    /// Same topology and weights with timestamps dropped.
    pub fn short_label_view(&self) -> ExtractedAutomaton {
        let mut out = self.clone();
        for e in out.edges.values_mut() {
            // short labels are kept in sync by `add_step`
            e.long_label.clear();
        }
        out
    }

    /// Targets reachable from `node` on `symbol`.
    pub fn successors(&self, node: NodeId, symbol: Symbol) -> Vec<NodeId> {
        self.edges
            .range((node, NodeId::MIN)..=(node, NodeId::MAX))
            .filter(|(_, e)| e.short_label.contains(&symbol))
            .map(|(&(_, to), _)| to)
            .collect()
    }

    /// At most one outgoing edge per node and symbol.
    pub fn is_deterministic(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.edges.iter().all(|(&(from, _), e)| {
            e.short_label.iter().all(|&s| seen.insert((from, s)))
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = AutomatonJson {
            flow_edges: self.flow_edges,
            nodes: self.nodes.iter().copied().collect(),
            final_nodes: self.final_nodes().into_iter().collect(),
            edges: self
                .edges
                .iter()
                .map(|(&(from, to), e)| EdgeJson {
                    from,
                    to,
                    weight: e.weight,
                    long_label: e.long_label.clone(),
                    short_label: e.short_label.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: AutomatonJson = serde_json::from_str(text)?;
        let mut a = ExtractedAutomaton::new(doc.flow_edges);
        a.nodes.extend(doc.nodes);
        for e in doc.edges {
            if !a.nodes.contains(&e.from) || !a.nodes.contains(&e.to) {
                return Err(Error::format("automaton", format!("edge {}->{} uses an unknown node", e.from, e.to)));
            }
            a.edges.insert(
                (e.from, e.to),
                Edge {
                    weight: e.weight,
                    long_label: e.long_label,
                    short_label: e.short_label,
                },
            );
        }
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExtractedAutomaton::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct EdgeJson {
    from: NodeId,
    to: NodeId,
    weight: usize,
    long_label: Vec<StepLabel>,
    short_label: BTreeSet<Symbol>,
}

#[derive(Serialize, Deserialize)]
struct AutomatonJson {
    flow_edges: bool,
    nodes: Vec<NodeId>,
    final_nodes: Vec<NodeId>,
    edges: Vec<EdgeJson>,
}

/// Walks labels and node ids in lockstep. Without `flow_edges` the current
/// node returns to `-1` at every sequence boundary.
pub fn build_from_ids(
    labels: &[StepLabel],
    boundaries: &[usize],
    ids: &[NodeId],
    flow_edges: bool,
) -> Result<ExtractedAutomaton> {
    if labels.len() != ids.len() {
        return Err(Error::LengthMismatch {
            patterns: labels.len(),
            assignment: ids.len(),
        });
    }
    let mut a = ExtractedAutomaton::new(flow_edges);
    let mut current = START_NODE;
    let mut next_boundary = boundaries.iter().peekable();
    for (i, (&label, &id)) in labels.iter().zip(ids).enumerate() {
        while next_boundary.next_if(|&&b| b <= i).is_some() {
            if !flow_edges {
                current = START_NODE;
            }
        }
        a.add_step(current, id, label);
        current = id;
    }
    Ok(a)
}

pub fn build_automaton(
    trace: &HiddenTrace,
    clusters: &ClusterAssignment,
    flow_edges: bool,
) -> Result<ExtractedAutomaton> {
    if trace.len() != clusters.assignment.len() {
        return Err(Error::LengthMismatch {
            patterns: trace.len(),
            assignment: clusters.assignment.len(),
        });
    }
    let ids: Vec<NodeId> = clusters.assignment.iter().map(|&c| c as NodeId).collect();
    build_from_ids(&trace.labels, &trace.boundaries, &ids, flow_edges)
}

/// Construction with the true grammar state after each symbol standing in
/// for the cluster id.
pub fn build_oracle_automaton(
    grammar: &GrammarSpec,
    corpus: &Corpus,
    flow_edges: bool,
) -> Result<ExtractedAutomaton> {
    let mut labels = Vec::new();
    let mut boundaries = Vec::new();
    let mut ids = Vec::new();
    for seq in corpus.sequences() {
        let path = grammar
            .state_path(&seq.symbols)
            .ok_or_else(|| Error::MalformedSequence(seq.to_string()))?;
        boundaries.push(labels.len());
        for (t, (&sym, state)) in seq.symbols.iter().zip(path).enumerate() {
            labels.push(StepLabel::new(sym, t));
            ids.push(state as NodeId);
        }
    }
    build_from_ids(&labels, &boundaries, &ids, flow_edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{build_grammar, GrammarKind, Sequence};

    fn labels(s: &[&str]) -> Vec<StepLabel> {
        s.iter().map(|l| l.parse().unwrap()).collect()
    }

    fn fig4() -> ExtractedAutomaton {
        build_from_ids(&labels(&["B0", "T1", "X2", "S3", "E4"]), &[0], &[0, 3, 2, 2, 0], true).unwrap()
    }

    #[test]
    fn worked_example() {
        let a = fig4();
        assert_eq!(a.nodes, BTreeSet::from([-1, 0, 2, 3]));
        let edges: Vec<(NodeId, NodeId, String)> = a
            .edges
            .iter()
            .map(|(&(f, t), e)| (f, t, e.long_label.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",")))
            .collect();
        assert_eq!(
            edges,
            vec![
                (-1, 0, "B0".into()),
                (0, 3, "T1".into()),
                (2, 0, "E4".into()),
                (2, 2, "S3".into()),
                (3, 2, "X2".into()),
            ]
        );
        assert_eq!(a.final_nodes(), BTreeSet::from([2]));
        assert!(a.is_deterministic());
    }

    #[test]
    fn empty_trace() {
        let a = build_from_ids(&[], &[], &[], true).unwrap();
        assert_eq!(a.nodes, BTreeSet::from([START_NODE]));
        assert!(a.edges.is_empty());
        assert!(a.is_deterministic());
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            build_from_ids(&labels(&["B0"]), &[0], &[], true),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn repeated_labels_accumulate() {
        let mut a = ExtractedAutomaton::new(true);
        for l in ["T1", "T5", "T9"] {
            a.add_step(4, 5, l.parse().unwrap());
        }
        a.add_step(5, 6, "S3".parse().unwrap());
        a.add_step(5, 6, "X7".parse().unwrap());
        let short = a.short_label_view();
        assert_eq!(short.edges[&(4, 5)].short_label, BTreeSet::from([Symbol::T]));
        assert_eq!(short.edges[&(4, 5)].weight, 3);
        assert!(short.edges[&(4, 5)].long_label.is_empty());
        assert_eq!(short.edges[&(5, 6)].short_label, BTreeSet::from([Symbol::S, Symbol::X]));
        assert_eq!(short.short_label_view(), short);
    }

    #[test]
    fn replay_doubles_weights() {
        let l = labels(&["B0", "T1", "X2", "S3", "E4", "B0", "P1", "V2", "V3", "E4"]);
        let ids = [1, 2, 4, 6, 7, 1, 3, 5, 6, 7];
        let once = build_from_ids(&l, &[0, 5], &ids, true).unwrap();
        let l2: Vec<StepLabel> = l.iter().chain(&l).copied().collect();
        let ids2: Vec<NodeId> = ids.iter().chain(&ids).copied().collect();
        let twice = build_from_ids(&l2, &[0, 5, 10, 15], &ids2, true).unwrap();
        assert_eq!(once.nodes, twice.nodes);
        for (k, e) in &twice.edges {
            let base = once.edges.get(k).map_or(0, |e| e.weight as i64);
            // the stream enters from -1 only once, so the second copy starts
            // through the seam 7 -> 1 instead
            let extra = match *k {
                (7, 1) => 1,
                (-1, 1) => -1,
                _ => 0,
            };
            assert_eq!(e.weight as i64, 2 * base + extra, "{k:?}");
        }
        assert_eq!(twice.total_weight(), 20);
    }

    #[test]
    fn reset_mode_returns_to_start() {
        let l = labels(&["B0", "T1", "E2", "B0", "P1", "E2"]);
        let a = build_from_ids(&l, &[0, 3], &[1, 2, 3, 1, 4, 3], false).unwrap();
        assert_eq!(a.edges[&(-1, 1)].weight, 2);
        assert!(!a.edges.contains_key(&(3, 1)));
        let f = build_from_ids(&l, &[0, 3], &[1, 2, 3, 1, 4, 3], true).unwrap();
        assert_eq!(f.edges[&(-1, 1)].weight, 1);
        assert_eq!(f.edges[&(3, 1)].weight, 1);
    }

    #[test]
    fn nondeterminism_detected() {
        let mut a = ExtractedAutomaton::new(true);
        a.add_step(0, 1, "T1".parse().unwrap());
        a.add_step(0, 2, "T5".parse().unwrap());
        assert!(!a.is_deterministic());
        assert_eq!(a.successors(0, Symbol::T), vec![1, 2]);
    }

    #[test]
    fn oracle_single_path() {
        let rg = build_grammar(GrammarKind::Rg);
        let c = Corpus::new(vec![Sequence::parse("BTXSE").unwrap()]).unwrap();
        let a = build_oracle_automaton(&rg, &c, true).unwrap();
        let path: Vec<(NodeId, NodeId)> = a.edges.keys().copied().collect();
        assert_eq!(path, vec![(-1, 1), (1, 2), (2, 4), (4, 6), (6, 7)]);
        assert_eq!(a.edges[&(6, 7)].short_label, BTreeSet::from([Symbol::E]));
        assert_eq!(a.final_nodes(), BTreeSet::from([6]));

        let bad = Corpus::new(vec![Sequence::parse("BVPXE").unwrap()]).unwrap();
        assert!(build_oracle_automaton(&rg, &bad, true).is_err());
    }

    #[test]
    fn json_round_trip() {
        let a = fig4();
        let back = ExtractedAutomaton::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(a, back);
        let v: serde_json::Value = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        assert_eq!(v["final_nodes"], serde_json::json!([2]));
        assert_eq!(v["edges"][2]["long_label"], serde_json::json!(["E4"]));
    }
}
