//! Hidden-state traces ("list-patterns" plus their step labels).
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "LSTMTRC1"
//! dim     u32      values per pattern
//! count   u64      number of records
//! record  count times:
//!         u16      label length in bytes
//!         [u8]     label, UTF-8 (e.g. "T1")
//!         dim x f64
//! ```
//!
//! Sequence boundaries are not stored: a record whose label has time index
//! 0 starts a new sequence.

use std::fs;
use std::path::Path;

use super::NetworkParams;
use crate::error::{Error, Result};
use crate::grammar::Corpus;
use crate::symbol::StepLabel;

const MAGIC: &[u8; 8] = b"LSTMTRC1";

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenTrace {
    pub dim: usize,
    pub patterns: Vec<Vec<f64>>,
    pub labels: Vec<StepLabel>,
    /// Index of the first record of each sequence.
    pub boundaries: Vec<usize>,
}

impl HiddenTrace {
    pub fn new(dim: usize) -> Self {
        HiddenTrace {
            dim,
            patterns: Vec::new(),
            labels: Vec::new(),
            boundaries: Vec::new(),
        }
    }

    /// Builds a trace from records, deriving boundaries from time index 0.
    pub fn from_records(dim: usize, patterns: Vec<Vec<f64>>, labels: Vec<StepLabel>) -> Result<Self> {
        if patterns.len() != labels.len() {
            return Err(Error::LengthMismatch {
                patterns: patterns.len(),
                assignment: labels.len(),
            });
        }
        if let Some(p) = patterns.iter().find(|p| p.len() != dim) {
            return Err(Error::format(
                "trace",
                format!("pattern of dimension {} in a {dim}-dimensional trace", p.len()),
            ));
        }
        let boundaries = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.time == 0)
            .map(|(i, _)| i)
            .collect();
        Ok(HiddenTrace {
            dim,
            patterns,
            labels,
            boundaries,
        })
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// Record ranges of each sequence, in order.
    pub fn sequence_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(self.boundaries.len());
        for (i, &start) in self.boundaries.iter().enumerate() {
            let end = self.boundaries.get(i + 1).copied().unwrap_or(self.len());
            out.push(start..end);
        }
        out
    }

    /// A new trace made of the given sequences, in the given order.
    pub fn select_sequences(&self, indices: &[usize]) -> HiddenTrace {
        let ranges = self.sequence_ranges();
        let mut out = HiddenTrace::new(self.dim);
        for &i in indices {
            out.boundaries.push(out.len());
            let r = ranges[i].clone();
            out.patterns.extend_from_slice(&self.patterns[r.clone()]);
            out.labels.extend_from_slice(&self.labels[r]);
        }
        out
    }

    /// The first `n` records; the last sequence may be cut short.
    pub fn prefix(&self, n: usize) -> HiddenTrace {
        let n = n.min(self.len());
        HiddenTrace {
            dim: self.dim,
            patterns: self.patterns[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            boundaries: self.boundaries.iter().copied().filter(|&b| b < n).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.len() * (4 + 8 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for (p, l) in self.patterns.iter().zip(&self.labels) {
            let label = l.to_string();
            out.extend_from_slice(&(label.len() as u16).to_le_bytes());
            out.extend_from_slice(label.as_bytes());
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::format("trace", "bad magic"));
        }
        let dim = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        let mut patterns = Vec::with_capacity(count.min(1 << 24));
        let mut labels = Vec::with_capacity(count.min(1 << 24));
        for _ in 0..count {
            let n = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let label = std::str::from_utf8(r.take(n)?)
                .map_err(|e| Error::format("trace", e.to_string()))?;
            labels.push(label.parse()?);
            let mut p = Vec::with_capacity(dim);
            for _ in 0..dim {
                p.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            patterns.push(p);
        }
        if r.pos != bytes.len() {
            return Err(Error::format("trace", "trailing bytes"));
        }
        HiddenTrace::from_records(dim, patterns, labels)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        HiddenTrace::from_bytes(&bytes)
    }

    /// Debug variant: `index,label,h0,...,h{dim-1}`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["index".to_string(), "label".to_string()];
        header.extend((0..self.dim).map(|i| format!("h{i}")));
        w.write_record(&header)?;
        for (i, (p, l)) in self.patterns.iter().zip(&self.labels).enumerate() {
            let mut row = vec![i.to_string(), l.to_string()];
            row.extend(p.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let out = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::format("trace", "truncated"))?;
        self.pos = end;
        Ok(out)
    }
}

/// Feeds every sequence (state reset at each start) and records one cell
/// output vector and one step label per consumed symbol, final `E`
/// included.
pub fn record_traces(params: &NetworkParams, corpus: &Corpus) -> HiddenTrace {
    let mut trace = HiddenTrace::new(params.config.hidden());
    for seq in corpus.sequences() {
        trace.boundaries.push(trace.len());
        let mut state = params.initial_state();
        for (t, &sym) in seq.symbols.iter().enumerate() {
            params.step_cached(&mut state, sym);
            trace.patterns.push(state.hidden_output.clone());
            trace.labels.push(StepLabel::new(sym, t));
        }
    }
    trace
}
