use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExtractedAutomaton, NodeId, START_NODE, TRASH_NODE};
use crate::error::{Error, Result};
use crate::symbol::Symbol;

/// Source node ids a DFA state stands for, printed underscore-joined
/// (`9_9_1_6`). Sorted; a merge may repeat ids.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateLabel(pub Vec<NodeId>);

impl StateLabel {
    pub fn single(id: NodeId) -> Self {
        StateLabel(vec![id])
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.0.contains(&id)
    }
}

impl fmt::Display for StateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, id) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("_")?;
            }
            write!(f, "{id}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for StateLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        // "-1_7" splits into "-1", "7"; a leading '-' belongs to the id
        let mut ids = Vec::new();
        let mut rest = s;
        while !rest.is_empty() {
            let neg = rest.starts_with('-');
            let body = if neg { &rest[1..] } else { rest };
            let end = body.find('_').unwrap_or(body.len());
            let n: NodeId = body[..end]
                .parse()
                .map_err(|_| Error::format("dfa", format!("bad state label {s:?}")))?;
            ids.push(if neg { -n } else { n });
            rest = body[end..].strip_prefix('_').unwrap_or("");
        }
        if ids.is_empty() {
            return Err(Error::format("dfa", "empty state label"));
        }
        Ok(StateLabel(ids))
    }
}

/// A deterministic automaton over symbol indices `0..alphabet`.
///
/// For extracted automata the alphabet is the seven Reber symbols in
/// [`Symbol::ALL`] order. The DFA accepts a string when it ends in an
/// accepting state; accepting states are those standing for final nodes,
/// i.e. the next symbol is `E`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dfa {
    pub alphabet: usize,
    pub labels: Vec<StateLabel>,
    /// `transitions[state][symbol]`.
    pub transitions: Vec<Vec<usize>>,
    pub start: usize,
    pub accepting: Vec<bool>,
    pub trash: Option<usize>,
    /// Copied from the source automaton; selects the end check used when
    /// validating sequences.
    pub flow_edges: bool,
}

/// The minimized automaton has the same shape as any other [`Dfa`].
pub type MinimizedDfa = Dfa;

impl Dfa {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn step(&self, state: usize, symbol: usize) -> usize {
        self.transitions[state][symbol]
    }

    pub fn step_symbol(&self, state: usize, symbol: Symbol) -> usize {
        self.step(state, symbol.index())
    }

    pub fn is_trash(&self, state: usize) -> bool {
        self.trash == Some(state)
    }

    /// Runs the string from the start state.
    pub fn run(&self, word: &[usize]) -> usize {
        word.iter().fold(self.start, |q, &s| self.step(q, s))
    }

    pub fn accepts_word(&self, word: &[usize]) -> bool {
        self.accepting[self.run(word)]
    }

    /// Checks that the table is total and consistent.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 || self.start >= n {
            return Err(Error::InvalidDfa("missing start state".into()));
        }
        if self.labels.len() != n || self.accepting.len() != n {
            return Err(Error::InvalidDfa("label or acceptance table size mismatch".into()));
        }
        if self.trash.is_some_and(|t| t >= n) {
            return Err(Error::InvalidDfa("trash state out of range".into()));
        }
        for (state, row) in self.transitions.iter().enumerate() {
            for symbol in 0..self.alphabet {
                match row.get(symbol) {
                    Some(&t) if t < n => {}
                    _ => return Err(Error::IncompleteDfa { state, symbol }),
                }
            }
            if row.len() != self.alphabet {
                return Err(Error::InvalidDfa(format!("state {state} has {} transitions", row.len())));
            }
        }
        Ok(())
    }

    /// States reachable from the start, in breadth-first order.
    pub fn reachable(&self) -> Vec<usize> {
        let mut seen = vec![false; self.len()];
        let mut order = vec![self.start];
        seen[self.start] = true;
        let mut i = 0;
        while i < order.len() {
            let q = order[i];
            for &t in &self.transitions[q] {
                if !seen[t] {
                    seen[t] = true;
                    order.push(t);
                }
            }
            i += 1;
        }
        order
    }

    /// States from which an accepting state is reachable.
    pub fn live_states(&self) -> Vec<bool> {
        let mut rev: Vec<Vec<usize>> = vec![Vec::new(); self.len()];
        for (q, row) in self.transitions.iter().enumerate() {
            for &t in row {
                rev[t].push(q);
            }
        }
        let mut live = self.accepting.clone();
        let mut queue: VecDeque<usize> = (0..self.len()).filter(|&q| live[q]).collect();
        while let Some(q) = queue.pop_front() {
            for &p in &rev[q] {
                if !live[p] {
                    live[p] = true;
                    queue.push_back(p);
                }
            }
        }
        live
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = DfaJson {
            alphabet: if self.alphabet == Symbol::COUNT {
                Symbol::ALL.iter().map(|s| s.to_string()).collect()
            } else {
                (0..self.alphabet).map(|i| i.to_string()).collect()
            },
            states: self.labels.iter().map(|l| l.to_string()).collect(),
            start: self.start,
            trash: self.trash,
            accepting: (0..self.len()).filter(|&q| self.accepting[q]).collect(),
            transitions: self.transitions.clone(),
            flow_edges: self.flow_edges,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DfaJson = serde_json::from_str(text)?;
        let labels = doc
            .states
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<StateLabel>>>()?;
        let n = labels.len();
        let mut accepting = vec![false; n];
        for &q in &doc.accepting {
            *accepting
                .get_mut(q)
                .ok_or_else(|| Error::format("dfa", format!("accepting state {q} out of range")))? = true;
        }
        let dfa = Dfa {
            alphabet: doc.alphabet.len(),
            start: doc.start,
            trash: doc.trash,
            labels,
            transitions: doc.transitions,
            accepting,
            flow_edges: doc.flow_edges,
        };
        dfa.validate()?;
        Ok(dfa)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Dfa::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct DfaJson {
    alphabet: Vec<String>,
    states: Vec<String>,
    /// State indices below refer to positions in `states`.
    start: usize,
    trash: Option<usize>,
    accepting: Vec<usize>,
    transitions: Vec<Vec<usize>>,
    flow_edges: bool,
}

/// Subset construction from `{-1}` over the short labels. Missing
/// transitions go to the trash state `-2`, which loops on every symbol. A
/// subset is accepting iff it holds a final node.
pub fn determinize(a: &ExtractedAutomaton) -> Dfa {
    let finals = a.final_nodes();
    let mut succ: BTreeMap<(NodeId, usize), BTreeSet<NodeId>> = BTreeMap::new();
    for (&(from, to), e) in &a.edges {
        for s in &e.short_label {
            succ.entry((from, s.index())).or_default().insert(to);
        }
    }

    let mut index: BTreeMap<Vec<NodeId>, usize> = BTreeMap::new();
    let mut subsets: Vec<Vec<NodeId>> = Vec::new();
    let mut transitions: Vec<Vec<usize>> = Vec::new();
    let mut trash = None;
    let start = vec![START_NODE];
    index.insert(start.clone(), 0);
    subsets.push(start);
    transitions.push(Vec::new());

    let mut i = 0;
    while i < subsets.len() {
        let mut row = Vec::with_capacity(Symbol::COUNT);
        for s in 0..Symbol::COUNT {
            let target: BTreeSet<NodeId> = subsets[i]
                .iter()
                .filter_map(|&n| succ.get(&(n, s)))
                .flatten()
                .copied()
                .collect();
            let t = if target.is_empty() {
                *trash.get_or_insert_with(|| {
                    subsets.push(vec![TRASH_NODE]);
                    transitions.push(Vec::new());
                    subsets.len() - 1
                })
            } else {
                let key: Vec<NodeId> = target.into_iter().collect();
                match index.get(&key) {
                    Some(&t) => t,
                    None => {
                        subsets.push(key.clone());
                        transitions.push(Vec::new());
                        index.insert(key, subsets.len() - 1);
                        subsets.len() - 1
                    }
                }
            };
            row.push(t);
        }
        // the trash subset has no successors, so its row loops on itself
        transitions[i] = row;
        i += 1;
    }

    let accepting = subsets
        .iter()
        .map(|s| s.iter().any(|n| finals.contains(n)))
        .collect();
    Dfa {
        alphabet: Symbol::COUNT,
        labels: subsets.into_iter().map(StateLabel).collect(),
        transitions,
        start: 0,
        accepting,
        trash,
        flow_edges: a.flow_edges,
    }
}

/// Triangular table of distinguishable pairs.
struct PairTable {
    n: usize,
    marked: Vec<bool>,
}

impl PairTable {
    fn new(n: usize) -> Self {
        PairTable {
            n,
            marked: vec![false; n * n],
        }
    }

    fn idx(&self, p: usize, q: usize) -> usize {
        let (a, b) = if p < q { (p, q) } else { (q, p) };
        a * self.n + b
    }

    fn is_marked(&self, p: usize, q: usize) -> bool {
        self.marked[self.idx(p, q)]
    }

    /// Returns true if the pair was newly marked.
    fn mark(&mut self, p: usize, q: usize) -> bool {
        let i = self.idx(p, q);
        !std::mem::replace(&mut self.marked[i], true)
    }
}

/// Table-filling minimization.
///
/// Unreachable states are dropped first. Pairs where exactly one state is
/// accepting are marked; then a pair is marked whenever some symbol leads
/// it to a marked pair, until nothing changes. Unmarked pairs are merged
/// and their labels joined. Marking is propagated through predecessor
/// lists, so each pair is examined once per symbol after being marked.
pub fn minimize(d: &Dfa) -> Result<Dfa> {
    d.validate()?;
    let order = d.reachable();
    let n = order.len();
    let mut pos = vec![usize::MAX; d.len()];
    for (i, &q) in order.iter().enumerate() {
        pos[q] = i;
    }
    let delta: Vec<Vec<usize>> = order
        .iter()
        .map(|&q| d.transitions[q].iter().map(|&t| pos[t]).collect())
        .collect();
    let accepting: Vec<bool> = order.iter().map(|&q| d.accepting[q]).collect();

    // preds[symbol][state]
    let mut preds = vec![vec![Vec::new(); n]; d.alphabet];
    for (q, row) in delta.iter().enumerate() {
        for (s, &t) in row.iter().enumerate() {
            preds[s][t].push(q);
        }
    }

    let mut table = PairTable::new(n);
    let mut queue = VecDeque::new();
    for p in 0..n {
        for q in p + 1..n {
            if accepting[p] != accepting[q] && table.mark(p, q) {
                queue.push_back((p, q));
            }
        }
    }
    while let Some((p, q)) = queue.pop_front() {
        for pre in &preds {
            for &a in &pre[p] {
                for &b in &pre[q] {
                    if a != b && table.mark(a, b) {
                        queue.push_back((a, b));
                    }
                }
            }
        }
    }

    // Unmarked is an equivalence relation; number classes by first member.
    let mut class = vec![usize::MAX; n];
    let mut members: Vec<Vec<usize>> = Vec::new();
    for p in 0..n {
        if class[p] != usize::MAX {
            continue;
        }
        class[p] = members.len();
        let mut group = vec![p];
        for q in p + 1..n {
            if class[q] == usize::MAX && !table.is_marked(p, q) {
                class[q] = members.len();
                group.push(q);
            }
        }
        members.push(group);
    }

    let trash_pos = d.trash.map(|t| pos[t]).filter(|&t| t != usize::MAX);
    let mut labels = Vec::with_capacity(members.len());
    let mut trash = None;
    for (c, group) in members.iter().enumerate() {
        if trash_pos.is_some_and(|t| group.contains(&t)) {
            trash = Some(c);
            labels.push(StateLabel::single(TRASH_NODE));
            continue;
        }
        let mut ids: Vec<NodeId> = group
            .iter()
            .flat_map(|&q| d.labels[order[q]].0.iter().copied())
            .collect();
        ids.sort_unstable();
        labels.push(StateLabel(ids));
    }
    let transitions = members
        .iter()
        .map(|group| delta[group[0]].iter().map(|&t| class[t]).collect())
        .collect();
    Ok(Dfa {
        alphabet: d.alphabet,
        labels,
        transitions,
        start: class[0],
        accepting: members.iter().map(|g| accepting[g[0]]).collect(),
        trash,
        flow_edges: d.flow_edges,
    })
}
