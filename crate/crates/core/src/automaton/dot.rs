use std::fmt::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Dfa, ExtractedAutomaton};
use crate::error::Error;
use crate::symbol::Symbol;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    None,
    Long,
    #[default]
    Short,
}

impl FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "none" => Ok(LabelMode::None),
            "long" => Ok(LabelMode::Long),
            "short" => Ok(LabelMode::Short),
            _ => Err(Error::Config(format!("unknown label mode {s:?}"))),
        }
    }
}

fn symbol_list<'a>(symbols: impl Iterator<Item = &'a Symbol>) -> String {
    symbols.map(|s| s.to_string()).collect::<Vec<_>>().join(",")
}

/// Graphviz rendering. Final nodes get a red double circle; edge weights go
/// in a second attribute list.
pub fn export_dot(a: &ExtractedAutomaton, mode: LabelMode) -> String {
    let finals = a.final_nodes();
    let mut out = String::from("digraph automaton {\n  rankdir=LR;\n  node [shape=circle];\n");
    for n in &a.nodes {
        if finals.contains(n) {
            let _ = writeln!(out, "  {n} [shape=doublecircle, color=red];");
        } else {
            let _ = writeln!(out, "  {n};");
        }
    }
    for (&(from, to), e) in &a.edges {
        let label = match mode {
            LabelMode::None => None,
            LabelMode::Long if !e.long_label.is_empty() => Some(
                e.long_label
                    .iter()
                    .map(|l| l.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            LabelMode::Long | LabelMode::Short => Some(symbol_list(e.short_label.iter())),
        };
        match label {
            Some(l) => {
                let _ = writeln!(out, "  {from} -> {to} [label=\"{l}\"] [weight={}];", e.weight);
            }
            None => {
                let _ = writeln!(out, "  {from} -> {to} [weight={}];", e.weight);
            }
        }
    }
    out.push_str("}\n");
    out
}

/// Graphviz rendering of a DFA, one edge per target with the symbols that
/// lead there. The trash state and its edges are omitted unless asked for.
pub fn export_dfa_dot(d: &Dfa, show_trash: bool) -> String {
    let mut out = String::from("digraph dfa {\n  rankdir=LR;\n  node [shape=circle];\n");
    let hidden = |q: usize| !show_trash && d.is_trash(q);
    for q in 0..d.len() {
        if hidden(q) {
            continue;
        }
        let name = &d.labels[q];
        if d.accepting[q] {
            let _ = writeln!(out, "  \"{name}\" [shape=doublecircle, color=red];");
        } else {
            let _ = writeln!(out, "  \"{name}\";");
        }
    }
    for q in 0..d.len() {
        if hidden(q) {
            continue;
        }
        let mut targets: Vec<(usize, Vec<&Symbol>)> = Vec::new();
        for (s, &t) in d.transitions[q].iter().enumerate() {
            if hidden(t) {
                continue;
            }
            let sym = &Symbol::ALL[s.min(Symbol::COUNT - 1)];
            match targets.iter_mut().find(|(x, _)| *x == t) {
                Some((_, syms)) => syms.push(sym),
                None => targets.push((t, vec![sym])),
            }
        }
        for (t, syms) in targets {
            let label = if d.alphabet == Symbol::COUNT {
                symbol_list(syms.into_iter())
            } else {
                String::new()
            };
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [label=\"{label}\"];",
                d.labels[q], d.labels[t]
            );
        }
    }
    out.push_str("}\n");
    out
}
