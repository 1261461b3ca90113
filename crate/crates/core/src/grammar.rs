//! Reber-family grammars as symbol-emitting finite-state machines.
//!
//! `RG` is the classic Reber grammar. `ERG` wraps two copies of it behind a
//! `T`/`P` branch that must be closed by the same symbol, and `CERG` chains
//! `ERG` sequences end to end into flows. Besides generation, each machine
//! doubles as the membership oracle for its language.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symbol::{parse_symbols, symbols_to_string, Symbol};

/// Walks longer than this are abandoned and restarted.
pub const MAX_SEQUENCE_LEN: usize = 1000;

pub type StateId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrammarKind {
    Rg,
    Erg,
    Cerg,
}

impl GrammarKind {
    pub fn name(self) -> &'static str {
        match self {
            GrammarKind::Rg => "RG",
            GrammarKind::Erg => "ERG",
            GrammarKind::Cerg => "CERG",
        }
    }
}

impl fmt::Display for GrammarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GrammarKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rg" => Ok(GrammarKind::Rg),
            "erg" => Ok(GrammarKind::Erg),
            "cerg" => Ok(GrammarKind::Cerg),
            _ => Err(Error::UnknownGrammar(s.to_owned())),
        }
    }
}

/// An emitting state machine: every state except `end` emits one of one or
/// two symbols and moves to the paired successor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrammarSpec {
    kind: GrammarKind,
    emissions: Vec<Vec<(Symbol, StateId)>>,
    start: StateId,
    end: StateId,
}

/// Appends one Reber machine whose `B` is read from `entry`; returns the
/// state reached after its closing `E`.
fn push_reber(emissions: &mut Vec<Vec<(Symbol, StateId)>>, entry: StateId) -> StateId {
    use Symbol::*;
    let base = emissions.len();
    let s = |i: usize| base + i;
    // s(0) after B, s(5) before E, s(6) after E.
    emissions[entry] = vec![(B, s(0))];
    emissions.extend([
        vec![(T, s(1)), (P, s(2))],
        vec![(S, s(1)), (X, s(3))],
        vec![(T, s(2)), (V, s(4))],
        vec![(X, s(2)), (S, s(5))],
        vec![(P, s(3)), (V, s(5))],
        vec![(E, s(6))],
        vec![],
    ]);
    s(6)
}

/// Returns the fixed machine for `kind`.
pub fn build_grammar(kind: GrammarKind) -> GrammarSpec {
    use Symbol::*;
    let mut emissions: Vec<Vec<(Symbol, StateId)>> = vec![vec![]];
    let start = 0;
    let end = match kind {
        GrammarKind::Rg => push_reber(&mut emissions, start),
        GrammarKind::Erg | GrammarKind::Cerg => {
            // start -B-> fork; fork -T-> upper RG, fork -P-> lower RG
            emissions.push(vec![]);
            let fork = 1;
            emissions.push(vec![]);
            let upper = 2;
            let upper_done = push_reber(&mut emissions, upper);
            emissions.push(vec![]);
            let lower = emissions.len() - 1;
            let lower_done = push_reber(&mut emissions, lower);
            emissions.push(vec![]);
            let close = emissions.len() - 1;
            emissions.push(vec![]);
            let end = emissions.len() - 1;
            emissions[start] = vec![(B, fork)];
            emissions[fork] = vec![(T, upper), (P, lower)];
            emissions[upper_done] = vec![(T, close)];
            emissions[lower_done] = vec![(P, close)];
            emissions[close] = vec![(E, end)];
            end
        }
    };
    GrammarSpec {
        kind,
        emissions,
        start,
        end,
    }
}

impl GrammarSpec {
    pub fn kind(&self) -> GrammarKind {
        self.kind
    }

    pub fn start(&self) -> StateId {
        self.start
    }

    pub fn end(&self) -> StateId {
        self.end
    }

    pub fn n_states(&self) -> usize {
        self.emissions.len()
    }

    pub fn emissions(&self, state: StateId) -> &[(Symbol, StateId)] {
        &self.emissions[state]
    }

    /// Successor of `state` on `symbol`. For CERG the end state returns to
    /// the start before emitting.
    pub fn step(&self, state: StateId, symbol: Symbol) -> Option<StateId> {
        let from = if self.kind == GrammarKind::Cerg && state == self.end {
            self.start
        } else {
            state
        };
        self.emissions[from]
            .iter()
            .find(|(s, _)| *s == symbol)
            .map(|&(_, next)| next)
    }

    /// The state reached after each symbol, or `None` as soon as a symbol
    /// cannot be emitted.
    pub fn state_path(&self, symbols: &[Symbol]) -> Option<Vec<StateId>> {
        let mut state = self.start;
        let mut path = Vec::with_capacity(symbols.len());
        for &sym in symbols {
            state = self.step(state, sym)?;
            path.push(state);
        }
        Some(path)
    }

    /// Membership oracle. Every branching state of these machines emits two
    /// distinct symbols, so a deterministic walk decides membership.
    pub fn is_grammatical(&self, symbols: &[Symbol]) -> bool {
        !symbols.is_empty()
            && self
                .state_path(symbols)
                .is_some_and(|p| p.last() == Some(&self.end))
    }

    /// True iff some continuation of `symbols` is grammatical.
    pub fn is_viable_prefix(&self, symbols: &[Symbol]) -> bool {
        // Every state of these machines can reach the end state.
        self.state_path(symbols).is_some()
    }

    /// Whether the symbols split into one or more grammatical sequences
    /// written back to back.
    pub fn is_concatenation(&self, symbols: &[Symbol]) -> bool {
        let n = symbols.len();
        let mut ok = vec![false; n + 1];
        ok[0] = true;
        for j in 1..=n {
            ok[j] = (0..j).any(|i| ok[i] && self.is_grammatical(&symbols[i..j]));
        }
        n > 0 && ok[n]
    }

    fn require(&self, op: &'static str, allowed: &[GrammarKind]) -> Result<()> {
        if allowed.contains(&self.kind) {
            Ok(())
        } else {
            Err(Error::UnsupportedGrammar(op, self.kind.name()))
        }
    }

    fn walk<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Symbol> {
        loop {
            let mut state = self.start;
            let mut out = Vec::new();
            while state != self.end && out.len() < MAX_SEQUENCE_LEN {
                let &(sym, next) = self.emissions[state]
                    .choose(rng)
                    .expect("non-end state without emissions");
                out.push(sym);
                state = next;
            }
            if state == self.end {
                return out;
            }
        }
    }

    /// Random walk from start to end choosing uniformly among emissions.
    pub fn generate_sequence<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Sequence> {
        self.require("generate_sequence", &[GrammarKind::Rg, GrammarKind::Erg])?;
        Ok(Sequence::valid(self.walk(rng)))
    }

    /// Concatenated ERG sequences truncated to exactly `length` symbols.
    pub fn generate_flow<R: Rng + ?Sized>(&self, length: usize, rng: &mut R) -> Result<Sequence> {
        self.require("generate_flow", &[GrammarKind::Cerg])?;
        let mut out = Vec::with_capacity(length + MAX_SEQUENCE_LEN);
        while out.len() < length {
            out.extend(self.walk(rng));
        }
        out.truncate(length);
        Ok(Sequence::valid(out))
    }

    /// Mutates a valid sequence (substitute, insert or delete interior
    /// symbols, keeping the leading `B`) until the oracle rejects it.
    pub fn generate_invalid<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Sequence> {
        self.require("generate_invalid", &[GrammarKind::Rg, GrammarKind::Erg])?;
        loop {
            let mut symbols = self.walk(rng);
            let edits = rng.gen_range(1..=3);
            for _ in 0..edits {
                let interior = symbols.len().saturating_sub(2);
                let sym = Symbol::ALL[rng.gen_range(0..Symbol::COUNT)];
                match rng.gen_range(0..3) {
                    0 if interior > 0 => {
                        let at = rng.gen_range(1..=interior);
                        symbols[at] = sym;
                    }
                    1 if interior > 0 => {
                        let at = rng.gen_range(1..=interior);
                        symbols.remove(at);
                    }
                    _ => {
                        let at = rng.gen_range(1..symbols.len());
                        symbols.insert(at, sym);
                    }
                }
            }
            if !self.is_grammatical(&symbols) {
                return Ok(Sequence::invalid(symbols));
            }
        }
    }

    pub fn generate_corpus<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Corpus> {
        let sequences = (0..count)
            .map(|_| self.generate_sequence(rng))
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(sequences)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub symbols: Vec<Symbol>,
    pub valid: bool,
}

impl Sequence {
    pub fn valid(symbols: Vec<Symbol>) -> Self {
        Sequence {
            symbols,
            valid: true,
        }
    }

    pub fn invalid(symbols: Vec<Symbol>) -> Self {
        Sequence {
            symbols,
            valid: false,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(Sequence::valid(parse_symbols(s)?))
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&symbols_to_string(&self.symbols))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: usize,
    pub total_symbols: usize,
    pub mean_length: f64,
    /// Population standard deviation.
    pub std_length: f64,
}

pub fn corpus_stats(sequences: &[Sequence]) -> Result<CorpusStats> {
    if sequences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let count = sequences.len();
    let total_symbols: usize = sequences.iter().map(Sequence::len).sum();
    let mean_length = total_symbols as f64 / count as f64;
    let var = sequences
        .iter()
        .map(|s| (s.len() as f64 - mean_length).powi(2))
        .sum::<f64>()
        / count as f64;
    Ok(CorpusStats {
        count,
        total_symbols,
        mean_length,
        std_length: var.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    sequences: Vec<Sequence>,
    stats: CorpusStats,
}

impl Corpus {
    pub fn new(sequences: Vec<Sequence>) -> Result<Self> {
        let stats = corpus_stats(&sequences)?;
        Ok(Corpus { sequences, stats })
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn stats(&self) -> &CorpusStats {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Parses the line format: one sequence per line, `#` starts a comment.
    /// A `# valid=false` header marks the corpus as negative examples.
    pub fn parse(text: &str) -> Result<Self> {
        let mut valid = true;
        let mut sequences = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(comment) = line.strip_prefix('#') {
                if comment.split_whitespace().any(|w| w == "valid=false") {
                    valid = false;
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let symbols = parse_symbols(line)
                .map_err(|e| Error::format("corpus", format!("line {}: {e}", lineno + 1)))?;
            sequences.push(Sequence { symbols, valid });
        }
        Corpus::new(sequences)
    }

    pub fn to_text(&self, header: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(h) = header {
            for line in h.lines() {
                out.push_str("# ");
                out.push_str(line);
                out.push('\n');
            }
        }
        if self.sequences.iter().any(|s| !s.valid) {
            out.push_str("# valid=false\n");
        }
        for s in &self.sequences {
            out.push_str(&symbols_to_string(&s.symbols));
            out.push('\n');
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Corpus::parse(&text)
    }

    pub fn write(&self, path: &Path, header: Option<&str>) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_text(header).as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}
