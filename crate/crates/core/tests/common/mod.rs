//! Oracles shared by the integration suites. Each one is written from the
//! definitions, independently of the library code it checks.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use lstm_fsa::lstm::Layout;
use lstm_fsa::{
    Dfa, ExtractedAutomaton, GrammarSpec, NetworkParams, NodeId, StateLabel, StepLabel, Symbol,
};
use rand::Rng;

// ---------------------------------------------------------------------------
// random automata

/// Complete DFA with `1..=max_states` states over `alphabet` symbols.
pub fn random_dfa<R: Rng>(rng: &mut R, max_states: usize, alphabet: usize) -> Dfa {
    let n = rng.gen_range(1..=max_states);
    Dfa {
        alphabet,
        labels: (0..n as NodeId).map(StateLabel::single).collect(),
        transitions: (0..n)
            .map(|_| (0..alphabet).map(|_| rng.gen_range(0..n)).collect())
            .collect(),
        start: 0,
        accepting: (0..n).map(|_| rng.gen_bool(0.4)).collect(),
        trash: None,
        flow_edges: false,
    }
}

/// Symbols the random NFAs read; `E` edges double as finality markers.
pub const NFA_SYMBOLS: [Symbol; 4] = [Symbol::B, Symbol::T, Symbol::P, Symbol::E];

/// Random nondeterministic automaton on nodes `0..n` plus the start `-1`.
pub fn random_nfa<R: Rng>(rng: &mut R, max_states: usize) -> ExtractedAutomaton {
    let n = rng.gen_range(1..=max_states) as NodeId;
    let mut a = ExtractedAutomaton::new(false);
    let density = rng.gen_range(0.1..0.5);
    for from in -1..n {
        for to in 0..n {
            for &s in &NFA_SYMBOLS {
                if rng.gen_bool(density) {
                    a.add_step(from, to, StepLabel::new(s, 0));
                }
            }
        }
    }
    a
}

/// The NFA as bitmask tables: bit `n + 1` stands for node `n`, so the start
/// `-1` is bit 0. Good for up to 63 nodes.
pub struct BitNfa {
    /// `succ[node_bit][symbol]`
    succ: Vec<[u64; Symbol::COUNT]>,
    finals: u64,
}

pub const NFA_START: u64 = 1;

impl BitNfa {
    pub fn new(a: &ExtractedAutomaton) -> Self {
        let bit = |n: NodeId| (n + 1) as usize;
        let size = a.nodes.iter().map(|&n| bit(n)).max().unwrap_or(0) + 1;
        let mut succ = vec![[0u64; Symbol::COUNT]; size];
        let mut finals = 0;
        for (&(from, to), e) in &a.edges {
            for s in &e.short_label {
                succ[bit(from)][s.index()] |= 1 << bit(to);
                if *s == Symbol::E {
                    finals |= 1 << bit(from);
                }
            }
        }
        BitNfa { succ, finals }
    }

    pub fn step(&self, set: u64, symbol: usize) -> u64 {
        (0..self.succ.len())
            .filter(|&b| set >> b & 1 == 1)
            .fold(0, |acc, b| acc | self.succ[b][symbol])
    }

    /// Some path ends at a node with an outgoing `E`.
    pub fn accepting(&self, set: u64) -> bool {
        set & self.finals != 0
    }
}

// ---------------------------------------------------------------------------
// enumeration

/// Visits every word over `symbols` of length `<= max_len` depth first,
/// threading a state through `step`. `visit` returns false to skip the
/// subtree below a word.
pub fn enumerate<S: Clone>(
    symbols: &[usize],
    max_len: usize,
    init: S,
    step: &mut impl FnMut(&S, usize) -> S,
    visit: &mut impl FnMut(&[usize], &S) -> bool,
) -> u64 {
    fn go<S: Clone>(
        symbols: &[usize],
        max_len: usize,
        word: &mut Vec<usize>,
        state: &S,
        step: &mut impl FnMut(&S, usize) -> S,
        visit: &mut impl FnMut(&[usize], &S) -> bool,
    ) -> u64 {
        let mut count = 1;
        if !visit(word, state) || word.len() == max_len {
            return count;
        }
        for &s in symbols {
            let next = step(state, s);
            word.push(s);
            count += go(symbols, max_len, word, &next, step, visit);
            word.pop();
        }
        count
    }
    go(symbols, max_len, &mut Vec::new(), &init, step, visit)
}

/// First word of length `<= max_len` on which the two DFAs disagree.
pub fn disagreement(a: &Dfa, b: &Dfa, symbols: &[usize], max_len: usize) -> Option<Vec<usize>> {
    let mut found = None;
    enumerate(
        symbols,
        max_len,
        (a.start, b.start),
        &mut |&(p, q), s| (a.transitions[p][s], b.transitions[q][s]),
        &mut |w, &(p, q)| {
            if found.is_some() {
                return false;
            }
            if a.accepting[p] != b.accepting[q] {
                found = Some(w.to_vec());
                return false;
            }
            true
        },
    );
    found
}

// ---------------------------------------------------------------------------
// partition refinement

/// Number of states of the minimal DFA, by Moore refinement of the
/// reachable part.
pub fn minimal_state_count(d: &Dfa) -> usize {
    let mut seen = vec![false; d.transitions.len()];
    let mut queue = VecDeque::from([d.start]);
    seen[d.start] = true;
    let mut reach = Vec::new();
    while let Some(q) = queue.pop_front() {
        reach.push(q);
        for &t in &d.transitions[q] {
            if !seen[t] {
                seen[t] = true;
                queue.push_back(t);
            }
        }
    }
    let mut block: HashMap<usize, usize> = reach.iter().map(|&q| (q, d.accepting[q] as usize)).collect();
    let mut count = block.values().collect::<BTreeSet<_>>().len();
    loop {
        let mut sig: BTreeMap<(usize, Vec<usize>), usize> = BTreeMap::new();
        let mut next = HashMap::new();
        for &q in &reach {
            let key = (block[&q], d.transitions[q].iter().map(|t| block[t]).collect());
            let len = sig.len();
            let id = *sig.entry(key).or_insert(len);
            next.insert(q, id);
        }
        let refined = sig.len();
        block = next;
        if refined == count {
            return refined;
        }
        count = refined;
    }
}

/// Structural equality up to renaming, by paired BFS from the starts.
pub fn isomorphic(a: &Dfa, b: &Dfa) -> bool {
    if a.transitions.len() != b.transitions.len() || a.alphabet != b.alphabet {
        return false;
    }
    let mut map: HashMap<usize, usize> = HashMap::from([(a.start, b.start)]);
    let mut queue = VecDeque::from([(a.start, b.start)]);
    while let Some((p, q)) = queue.pop_front() {
        if a.accepting[p] != b.accepting[q] {
            return false;
        }
        for s in 0..a.alphabet {
            let (tp, tq) = (a.transitions[p][s], b.transitions[q][s]);
            match map.get(&tp) {
                Some(&m) if m != tq => return false,
                Some(_) => {}
                None => {
                    if map.values().any(|&v| v == tq) {
                        return false;
                    }
                    map.insert(tp, tq);
                    queue.push_back((tp, tq));
                }
            }
        }
    }
    map.len() == a.transitions.len()
}

// ---------------------------------------------------------------------------
// grammar membership

/// Split-point recursion: one or more grammatical sequences back to back.
pub fn is_chain(g: &GrammarSpec, s: &[Symbol]) -> bool {
    let n = s.len();
    let mut ok = vec![false; n + 1];
    ok[0] = true;
    for j in 1..=n {
        ok[j] = (0..j).any(|i| ok[i] && g.is_grammatical(&s[i..j]));
    }
    n > 0 && ok[n]
}

/// Whether some continuation of `s` is a chain.
pub fn is_chain_prefix(g: &GrammarSpec, s: &[Symbol]) -> bool {
    let n = s.len();
    let mut ok = vec![false; n + 1];
    ok[0] = true;
    for j in 1..=n {
        ok[j] = (0..j).any(|i| ok[i] && g.is_grammatical(&s[i..j]));
    }
    (0..=n).any(|i| ok[i] && g.is_viable_prefix(&s[i..]))
}

// ---------------------------------------------------------------------------
// network

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Weighted sum of row `r` of a dense block over `input`.
fn affine(p: &[f64], rows: usize, cols: usize, offset: usize, r: usize, input: &[f64]) -> f64 {
    let w = &p[offset + r * cols..offset + (r + 1) * cols];
    p[offset + rows * cols + r] + w.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
}

/// Straight-line forward pass returning per-step next-symbol distributions
/// and cell outputs, starting from zero state.
pub fn reference_forward(params: &NetworkParams, symbols: &[Symbol]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let l: Layout = params.layout();
    let p = &params.values;
    let k = l.n_symbols;
    let h = l.hidden();
    let mut c = vec![0.0; h];
    let mut y = vec![0.0; h];
    let mut out = Vec::new();
    for &s in symbols {
        let mut z = vec![0.0; k + h];
        z[s.index()] = 1.0;
        z[k..].copy_from_slice(&y);
        let gate = |d: lstm_fsa::lstm::Dense, b: usize| sig(affine(p, d.rows, d.cols, d.offset, b, &z));
        for cell in 0..h {
            let b = cell / l.cells_per_block;
            let g = affine(p, h, k + h, l.cell_input.offset, cell, &z).tanh();
            c[cell] = gate(l.forget_gate, b) * c[cell] + gate(l.input_gate, b) * g;
            y[cell] = gate(l.output_gate, b) * c[cell].tanh();
        }
        let mut head = y.clone();
        if l.skip_connections {
            head.extend_from_slice(&z[..k]);
        }
        let logits: Vec<f64> = (0..k)
            .map(|r| affine(p, k, head.len(), l.output.offset, r, &head))
            .collect();
        let m = logits.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
        let total: f64 = e.iter().sum();
        out.push((e.iter().map(|v| v / total).collect(), y.clone()));
    }
    out
}

/// Summed cross-entropy of next-symbol prediction over a sequence.
pub fn reference_loss(params: &NetworkParams, symbols: &[Symbol]) -> f64 {
    let steps = reference_forward(params, &symbols[..symbols.len() - 1]);
    steps
        .iter()
        .zip(&symbols[1..])
        .map(|((probs, _), t)| -probs[t.index()].ln())
        .sum()
}

// ---------------------------------------------------------------------------
// extraction with ground-truth states

/// Builds the ground-truth extraction for `kind` and compares the minimized
/// DFA with the grammar on every string up to `max_len` symbols.
///
/// With flow edges the reference language is chains of sequences, without
/// them single sequences. A subtree is skipped once the DFA sits in trash,
/// after checking that the grammar agrees no continuation can be accepted.
/// Returns the number of strings visited.
pub fn oracle_equivalence(
    kind: lstm_fsa::GrammarKind,
    flow: bool,
    max_len: usize,
    seed: u64,
) -> Result<u64, String> {
    use lstm_fsa::validation::accepts;
    use rand::SeedableRng;

    let g = lstm_fsa::build_grammar(kind);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let corpus = g.generate_corpus(2000, &mut rng).map_err(|e| e.to_string())?;
    let a = lstm_fsa::build_oracle_automaton(&g, &corpus, flow).map_err(|e| e.to_string())?;

    // the corpus must exercise every transition of the machine
    for state in 0..g.n_states() {
        let from = if state == g.start() { -1 } else { state as NodeId };
        for &(sym, to) in g.emissions(state) {
            let covered = a
                .edges
                .get(&(from, to as NodeId))
                .is_some_and(|e| e.short_label.contains(&sym));
            if !covered {
                return Err(format!("transition {state} -{sym}-> {to} missing from corpus"));
            }
        }
    }

    let d = lstm_fsa::minimize(&lstm_fsa::determinize(&a)).map_err(|e| e.to_string())?;
    let member = |s: &[Symbol]| if flow { is_chain(&g, s) } else { g.is_grammatical(s) };
    let viable = |s: &[Symbol]| if flow { is_chain_prefix(&g, s) } else { g.is_viable_prefix(s) };
    let all: Vec<usize> = (0..Symbol::COUNT).collect();
    let mut failure: Option<String> = None;
    let visited = enumerate(
        &all,
        max_len,
        d.start,
        &mut |&q, s| d.transitions[q][s],
        &mut |w, &q| {
            if failure.is_some() {
                return false;
            }
            let word: Vec<Symbol> = w.iter().map(|&i| Symbol::ALL[i]).collect();
            let text = lstm_fsa::symbol::symbols_to_string(&word);
            let formatted = word.len() >= 2 && word[0] == Symbol::B && word[word.len() - 1] == Symbol::E;
            let expected = member(&word);
            let got = formatted && accepts(&d, &word).map(|r| r.accepted).unwrap_or(false);
            if got != expected {
                failure = Some(format!("{text}: dfa {got}, grammar {expected}"));
                return false;
            }
            if !d.is_trash(q) {
                if !viable(&word) {
                    failure = Some(format!("{text}: live in the dfa but no continuation is grammatical"));
                }
                return failure.is_none();
            }
            // trash absorbs, so nothing below is accepted; the grammar must agree
            let closed = if expected && !flow {
                Symbol::ALL.iter().all(|&s| {
                    let mut longer = word.clone();
                    longer.push(s);
                    !viable(&longer)
                })
            } else {
                !viable(&word)
            };
            if !closed {
                failure = Some(format!("{text}: dfa in trash but the grammar continues"));
            }
            false
        },
    );
    match failure {
        Some(f) => Err(f),
        None => Ok(visited),
    }
}
