//! Acceptance of grammatical sequences by extracted automata, and the
//! k-sweep experiment (silhouette and acceptance as functions of k).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, OpenOptions};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::automaton::{
    build_automaton, determinize, minimize, Dfa, ExtractedAutomaton, NodeId, START_NODE,
};
use crate::clustering::{kmeans_with, silhouette_subsampled, ClusterAssignment, KMeansConfig};
use crate::error::{Error, Result};
use crate::grammar::Corpus;
use crate::lstm::HiddenTrace;
use crate::symbol::{symbols_to_string, Symbol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptResult {
    pub accepted: bool,
    /// Symbols consumed before the walk fell into trash; the full length
    /// when accepted.
    pub consumed: usize,
    /// Whether the end of the sequence was confirmed: a `B` continuation in
    /// flow mode, an accepting state before `E` otherwise.
    pub end_check_passed: bool,
}

fn check_format(symbols: &[Symbol]) -> Result<()> {
    if symbols.len() < 2 || symbols[0] != Symbol::B || symbols[symbols.len() - 1] != Symbol::E {
        return Err(Error::MalformedSequence(symbols_to_string(symbols)));
    }
    Ok(())
}

/// Deterministic walk from the start state (the one holding `-1`).
///
/// With flow edges every symbol is consumed, final `E` included, and the
/// state reached must offer a `B` to a live state. Without them the state
/// after `E` is dead and merges with trash, so the walk stops before `E` and
/// requires an accepting state there.
pub fn accepts(d: &Dfa, symbols: &[Symbol]) -> Result<AcceptResult> {
    check_format(symbols)?;
    let n = symbols.len();
    let walked = if d.flow_edges { n } else { n - 1 };
    let mut q = d.start;
    if d.is_trash(q) {
        return Ok(rejected(0));
    }
    for (i, &s) in symbols[..walked].iter().enumerate() {
        q = d.step_symbol(q, s);
        if d.is_trash(q) {
            return Ok(rejected(i));
        }
    }
    let end_ok = if d.flow_edges {
        !d.is_trash(d.step_symbol(q, Symbol::B))
    } else {
        d.accepting[q]
    };
    Ok(AcceptResult {
        accepted: end_ok,
        consumed: if end_ok { n } else { walked },
        end_check_passed: end_ok,
    })
}

fn rejected(consumed: usize) -> AcceptResult {
    AcceptResult {
        accepted: false,
        consumed,
        end_check_passed: false,
    }
}

/// Path-existence walk on a possibly nondeterministic automaton, following
/// short labels. Same end check as [`accepts`].
pub fn accepts_nfa(a: &ExtractedAutomaton, symbols: &[Symbol]) -> Result<AcceptResult> {
    check_format(symbols)?;
    let n = symbols.len();
    let walked = if a.flow_edges { n } else { n - 1 };
    let mut current: BTreeSet<NodeId> = BTreeSet::from([START_NODE]);
    for (i, &s) in symbols[..walked].iter().enumerate() {
        current = current.iter().flat_map(|&c| a.successors(c, s)).collect();
        if current.is_empty() {
            return Ok(rejected(i));
        }
    }
    let end_ok = if a.flow_edges {
        current.iter().any(|&c| !a.successors(c, Symbol::B).is_empty())
    } else {
        let finals = a.final_nodes();
        current.iter().any(|c| finals.contains(c))
    };
    Ok(AcceptResult {
        accepted: end_ok,
        consumed: if end_ok { n } else { walked },
        end_check_passed: end_ok,
    })
}

/// Percentage of the corpus accepted by `d`.
pub fn evaluate_acceptance(d: &Dfa, corpus: &Corpus) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let results = corpus
        .sequences()
        .par_iter()
        .map(|s| accepts(d, &s.symbols).map(|r| r.accepted))
        .collect::<Result<Vec<bool>>>()?;
    let hits = results.iter().filter(|&&a| a).count();
    Ok(100.0 * hits as f64 / corpus.len() as f64)
}

/// Whole sequences drawn at random (seeded) until the next one would push
/// the pattern count past `max_patterns`.
pub fn subsample_sequences(trace: &HiddenTrace, max_patterns: usize, seed: u64) -> HiddenTrace {
    if trace.len() <= max_patterns {
        return trace.clone();
    }
    let ranges = trace.sequence_ranges();
    let mut order: Vec<usize> = (0..ranges.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    order.shuffle(&mut rng);
    let mut picked = Vec::new();
    let mut total = 0;
    for i in order {
        let len = ranges[i].len();
        if total + len > max_patterns {
            break;
        }
        total += len;
        picked.push(i);
    }
    trace.select_sequences(&picked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub kmeans: KMeansConfig,
    pub flow_edges: bool,
    /// Points used for the silhouette estimate.
    pub silhouette_points: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            kmeans: KMeansConfig::default(),
            flow_edges: true,
            silhouette_points: 5000,
        }
    }
}

/// Every intermediate of one extraction run.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub clusters: ClusterAssignment,
    pub silhouette: f64,
    pub automaton: ExtractedAutomaton,
    pub dfa: Dfa,
    pub minimized: Dfa,
}

/// kmeans, silhouette, construction, determinization and minimization on a
/// trace.
pub fn extract(trace: &HiddenTrace, k: usize, seed: u64, cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    if trace.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let clusters = kmeans_with(&trace.patterns, k, seed, &cfg.kmeans)?;
    let silhouette =
        silhouette_subsampled(&trace.patterns, &clusters.assignment, cfg.silhouette_points, seed)?;
    let automaton = build_automaton(trace, &clusters, cfg.flow_edges)?;
    let dfa = determinize(&automaton);
    let minimized = minimize(&dfa)?;
    Ok(PipelineOutcome {
        clusters,
        silhouette,
        automaton,
        dfa,
        minimized,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub k_list: Vec<usize>,
    pub n_sims: usize,
    /// Simulation `i` uses seed `base_seed + i`.
    pub base_seed: u64,
    /// Patterns kept per simulation, as whole sequences.
    pub subsample: usize,
    /// Concurrent (k, seed) cells; 0 uses every core.
    pub workers: usize,
    pub pipeline: PipelineConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            k_list: vec![10, 25, 50, 100, 200],
            n_sims: 10,
            base_seed: 0,
            subsample: 5000,
            workers: 0,
            pipeline: PipelineConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_sims as u64).map(|i| self.base_seed + i).collect()
    }
}

/// One (k, seed) cell. Failed cells keep their error and leave the metrics
/// empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub seed: u64,
    pub silhouette: Option<f64>,
    pub pct_accepted: Option<f64>,
    pub n_states_minimized: Option<usize>,
    pub wall_ms: u64,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub k: usize,
    pub n: usize,
    pub silhouette_mean: f64,
    pub silhouette_std: f64,
    pub pct_accepted_mean: f64,
    pub pct_accepted_std: f64,
    pub n_states_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Sorted by (k, seed).
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
    pub n_sims: usize,
    pub seeds: Vec<u64>,
}

impl SweepReport {
    pub fn summary_for(&self, k: usize) -> Option<&SweepSummary> {
        self.summary.iter().find(|s| s.k == k)
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut by_k: BTreeMap<usize, Vec<&SweepRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.is_ok()) {
        by_k.entry(r.k).or_default().push(r);
    }
    by_k.into_iter()
        .map(|(k, rs)| {
            let sil: Vec<f64> = rs.iter().filter_map(|r| r.silhouette).collect();
            let acc: Vec<f64> = rs.iter().filter_map(|r| r.pct_accepted).collect();
            let states: Vec<f64> = rs.iter().filter_map(|r| r.n_states_minimized).map(|n| n as f64).collect();
            let (silhouette_mean, silhouette_std) = mean_std(&sil);
            let (pct_accepted_mean, pct_accepted_std) = mean_std(&acc);
            SweepSummary {
                k,
                n: rs.len(),
                silhouette_mean,
                silhouette_std,
                pct_accepted_mean,
                pct_accepted_std,
                n_states_mean: mean_std(&states).0,
            }
        })
        .collect()
}

fn run_cell(trace: &HiddenTrace, eval: &Corpus, k: usize, seed: u64, cfg: &SweepConfig) -> SweepRow {
    let started = Instant::now();
    let outcome = (|| {
        let sub = subsample_sequences(trace, cfg.subsample, seed);
        let out = extract(&sub, k, seed, &cfg.pipeline)?;
        let pct = evaluate_acceptance(&out.minimized, eval)?;
        Ok::<_, Error>((out.silhouette, pct, out.minimized.len()))
    })();
    let wall_ms = started.elapsed().as_millis() as u64;
    match outcome {
        Ok((sil, pct, n)) => SweepRow {
            k,
            seed,
            silhouette: Some(sil),
            pct_accepted: Some(pct),
            n_states_minimized: Some(n),
            wall_ms,
            error: None,
        },
        Err(e) => SweepRow {
            k,
            seed,
            silhouette: None,
            pct_accepted: None,
            n_states_minimized: None,
            wall_ms,
            error: Some(e.to_string()),
        },
    }
}

const ROW_HEADER: [&str; 7] = [
    "k",
    "seed",
    "silhouette",
    "pct_accepted",
    "n_states_minimized",
    "wall_ms",
    "error",
];

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn row_record(r: &SweepRow) -> [String; 7] {
    [
        r.k.to_string(),
        r.seed.to_string(),
        opt(&r.silhouette),
        opt(&r.pct_accepted),
        opt(&r.n_states_minimized),
        r.wall_ms.to_string(),
        opt(&r.error),
    ]
}

fn parse_opt<T: std::str::FromStr>(s: &str, what: &str) -> Result<Option<T>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::format("sweep csv", format!("bad {what} {s:?}")))
}

/// Reads a row CSV written by [`sweep_k`].
pub fn read_sweep_rows(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        rows.push(SweepRow {
            k: parse_opt(field(0), "k")?.ok_or_else(|| Error::format("sweep csv", "missing k"))?,
            seed: parse_opt(field(1), "seed")?.ok_or_else(|| Error::format("sweep csv", "missing seed"))?,
            silhouette: parse_opt(field(2), "silhouette")?,
            pct_accepted: parse_opt(field(3), "pct_accepted")?,
            n_states_minimized: parse_opt(field(4), "n_states_minimized")?,
            wall_ms: parse_opt(field(5), "wall_ms")?.unwrap_or(0),
            error: Some(field(6).to_string()).filter(|e| !e.is_empty()),
        });
    }
    Ok(rows)
}

pub fn write_summary_csv(path: &Path, summary: &[SweepSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in summary {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs every (k, seed) cell. With `rows_csv` set, rows are appended as they
/// finish and cells already present without error are skipped, so an
/// interrupted sweep can be resumed by rerunning it.
pub fn sweep_k(
    trace: &HiddenTrace,
    eval: &Corpus,
    cfg: &SweepConfig,
    rows_csv: Option<&Path>,
) -> Result<SweepReport> {
    if eval.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut k_list = cfg.k_list.clone();
    k_list.sort_unstable();
    k_list.dedup();
    let seeds = cfg.seeds();

    let mut done: Vec<SweepRow> = Vec::new();
    let writer = match rows_csv {
        Some(path) => {
            let exists = path.exists() && fs::metadata(path).map_err(|e| Error::io(path, e))?.len() > 0;
            if exists {
                done = read_sweep_rows(path)?.into_iter().filter(SweepRow::is_ok).collect();
                // rewrite without failed rows so they get retried cleanly
                let mut w = csv::Writer::from_path(path)?;
                w.write_record(ROW_HEADER)?;
                for r in &done {
                    w.write_record(row_record(r))?;
                }
                w.flush().map_err(|e| Error::io(path, e))?;
            }
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
            if !exists {
                w.write_record(ROW_HEADER)?;
                w.flush().map_err(|e| Error::io(path, e))?;
            }
            Some(Mutex::new(w))
        }
        None => None,
    };

    let have: HashSet<(usize, u64)> = done.iter().map(|r| (r.k, r.seed)).collect();
    let cells: Vec<(usize, u64)> = k_list
        .iter()
        .flat_map(|&k| seeds.iter().map(move |&s| (k, s)))
        .filter(|c| !have.contains(c))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let fresh: Vec<SweepRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(k, seed)| {
                let row = run_cell(trace, eval, k, seed, cfg);
                if let Some(w) = &writer {
                    let mut w = w.lock().expect("sweep writer poisoned");
                    // a failed write only loses resumability, not the result
                    let _ = w.write_record(row_record(&row)).and_then(|_| Ok(w.flush()?));
                }
                row
            })
            .collect()
    });

    let wanted: HashSet<(usize, u64)> = k_list
        .iter()
        .flat_map(|&k| seeds.iter().map(move |&s| (k, s)))
        .collect();
    let mut rows: Vec<SweepRow> = done
        .into_iter()
        .chain(fresh)
        .filter(|r| wanted.contains(&(r.k, r.seed)))
        .collect();
    rows.sort_by_key(|r| (r.k, r.seed));
    let summary = summarize(&rows);
    Ok(SweepReport {
        rows,
        summary,
        n_sims: cfg.n_sims,
        seeds,
    })
}
