use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lstm_fsa::clustering::{write_assignment_csv, write_centroids_csv};
use lstm_fsa::validation::{accepts, extract, subsample_sequences, write_summary_csv};
use lstm_fsa::{
    build_grammar, evaluate_prediction, export_dfa_dot, export_dot, init_network, record_traces,
    sweep_k, train, Corpus, Dfa, ExtractedAutomaton, GrammarKind, NetworkParams, Sequence,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, LoadedConfig};
use crate::{Cli, Command, ExportDotArgs, ExtractArgs, GenArgs, SweepArgs, TrainArgs, ValidateArgs};

/// Bad flags, unreadable or invalid configuration. Maps to exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: impl fmt::Display) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

/// Truncation window used for CERG flows when none is configured.
const FLOW_WINDOW: usize = 50;

struct Layout {
    root: PathBuf,
}

impl Layout {
    fn corpus(&self, split: &str) -> PathBuf {
        self.root.join("corpus").join(format!("{split}.txt"))
    }
    fn corpus_stats(&self) -> PathBuf {
        self.root.join("corpus").join("stats.json")
    }
    fn checkpoint(&self) -> PathBuf {
        self.root.join("model").join("checkpoint.json")
    }
    fn train_report(&self) -> PathBuf {
        self.root.join("model").join("train_report.json")
    }
    fn extract_dir(&self) -> PathBuf {
        self.root.join("extract")
    }
    fn minimized(&self) -> PathBuf {
        self.extract_dir().join("minimized.json")
    }
    fn validate_report(&self) -> PathBuf {
        self.root.join("validate").join("report.json")
    }
    fn sweep_dir(&self) -> PathBuf {
        self.root.join("sweep")
    }
}

struct Ctx {
    loaded: LoadedConfig,
    layout: Layout,
}

impl Ctx {
    fn config(&self) -> &ExperimentConfig {
        &self.loaded.config
    }

    /// Stage output with the effective configuration and the verbatim
    /// configuration file embedded.
    fn sidecar(&self, body: Value) -> Result<Value> {
        let mut out = json!({
            "config": self.loaded.config,
            "config_source": self.loaded.source,
        });
        if let (Value::Object(o), Value::Object(b)) = (&mut out, body) {
            o.extend(b);
        }
        Ok(out)
    }

    fn write_sidecar(&self, path: &Path, body: Value) -> Result<()> {
        write_json(path, &self.sidecar(body)?)
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn require(path: &Path, what: &str, hint: &str) -> Result<()> {
    if !path.exists() {
        anyhow::bail!("{what} not found at {} (run `{hint}` first)", path.display());
    }
    Ok(())
}

fn read_corpus(path: &Path, what: &str) -> Result<Corpus> {
    require(path, what, "lstm-fsa gen")?;
    Corpus::read(path).with_context(|| format!("reading {}", path.display()))
}

fn load_checkpoint(layout: &Layout) -> Result<NetworkParams> {
    let path = layout.checkpoint();
    require(&path, "checkpoint", "lstm-fsa train")?;
    NetworkParams::load(&path).with_context(|| format!("reading {}", path.display()))
}

fn no_extraction_for_flows(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.grammar == GrammarKind::Cerg {
        return Err(usage("automaton extraction needs RG or ERG sequences; CERG supports gen and train only"));
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let mut loaded = LoadedConfig::load(cli.config.as_deref()).map_err(|e| usage(format!("{e:#}")))?;
    {
        let c = &mut loaded.config;
        if let Some(out) = &cli.out {
            c.output_dir = out.clone();
        }
        if let Some(g) = cli.grammar {
            c.grammar = g;
        }
        if let Some(s) = cli.seed {
            c.seed = s;
        }
        apply_overrides(c, &cli.command);
        c.validate().map_err(|e| usage(format!("{e:#}")))?;
    }
    let ctx = Ctx {
        layout: Layout {
            root: loaded.config.output_dir.clone(),
        },
        loaded,
    };
    match &cli.command {
        Command::Gen(_) => cmd_gen(&ctx),
        Command::Train(_) => cmd_train(&ctx),
        Command::Extract(a) => cmd_extract(&ctx, a),
        Command::Validate(a) => cmd_validate(&ctx, a),
        Command::Sweep(_) => cmd_sweep(&ctx),
        Command::ExportDot(a) => cmd_export_dot(&ctx, a),
    }
}

fn apply_overrides(c: &mut ExperimentConfig, command: &Command) {
    match command {
        Command::Gen(GenArgs {
            train,
            test,
            eval,
            flow_length,
        }) => {
            c.corpus.train = train.unwrap_or(c.corpus.train);
            c.corpus.test = test.unwrap_or(c.corpus.test);
            c.corpus.eval = eval.unwrap_or(c.corpus.eval);
            c.corpus.flow_length = flow_length.unwrap_or(c.corpus.flow_length);
        }
        Command::Train(TrainArgs {
            epochs,
            lr,
            lr_decay,
            truncation,
            init_seed,
        }) => {
            c.training.epochs = epochs.unwrap_or(c.training.epochs);
            c.training.learning_rate = lr.unwrap_or(c.training.learning_rate);
            c.training.lr_decay = lr_decay.unwrap_or(c.training.lr_decay);
            if truncation.is_some() {
                c.training.truncation = *truncation;
            }
            c.network.seed = init_seed.unwrap_or(c.network.seed);
        }
        Command::Extract(a) => {
            c.clustering.k = a.k.unwrap_or(c.clustering.k);
            c.clustering.seed = a.cluster_seed.unwrap_or(c.clustering.seed);
            if a.trace_limit.is_some() {
                c.clustering.trace_limit = a.trace_limit;
            }
            c.label_mode = a.label_mode.unwrap_or(c.label_mode);
            c.flow_edges = a.flow_edges.unwrap_or(c.flow_edges);
        }
        Command::Sweep(SweepArgs {
            k_list,
            n_sims,
            workers,
            flow_edges,
        }) => {
            if let Some(k) = k_list {
                c.clustering.k_list = k.clone();
            }
            c.sweep.n_sims = n_sims.unwrap_or(c.sweep.n_sims);
            c.sweep.workers = workers.unwrap_or(c.sweep.workers);
            c.flow_edges = flow_edges.unwrap_or(c.flow_edges);
        }
        Command::ExportDot(a) => {
            c.label_mode = a.label_mode.unwrap_or(c.label_mode);
        }
        Command::Validate(_) => {}
    }
}

fn cmd_gen(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.config();
    let g = build_grammar(cfg.grammar);
    let splits = [
        ("train", cfg.corpus.train),
        ("test", cfg.corpus.test),
        ("eval", cfg.corpus.eval),
    ];
    let mut stats = serde_json::Map::new();
    for (stream, (name, count)) in splits.into_iter().enumerate() {
        // one stream per split, so resizing one split leaves the others intact
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream as u64);
        let corpus = if cfg.grammar == GrammarKind::Cerg {
            let flows = (0..count)
                .map(|_| g.generate_flow(cfg.corpus.flow_length, &mut rng))
                .collect::<lstm_fsa::Result<Vec<Sequence>>>()?;
            Corpus::new(flows)?
        } else {
            g.generate_corpus(count, &mut rng)?
        };
        let path = ctx.layout.corpus(name);
        ensure_parent(&path)?;
        let header = format!("{} {name} corpus, seed {}", cfg.grammar, cfg.seed);
        corpus.write(&path, Some(&header))?;
        println!(
            "{name}: {} sequences, mean length {:.2} (sd {:.2}) -> {}",
            corpus.len(),
            corpus.stats().mean_length,
            corpus.stats().std_length,
            path.display()
        );
        stats.insert(name.to_string(), serde_json::to_value(corpus.stats())?);
    }
    ctx.write_sidecar(&ctx.layout.corpus_stats(), json!({ "stats": stats }))
}

fn cmd_train(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.config();
    let train_set = read_corpus(&ctx.layout.corpus("train"), "train corpus")?;
    let test_set = read_corpus(&ctx.layout.corpus("test"), "test corpus")?;
    let mut tc = cfg.training;
    if cfg.grammar == GrammarKind::Cerg && tc.truncation.is_none() {
        tc.truncation = Some(FLOW_WINDOW);
    }
    let mut params = init_network(&cfg.network)?;
    let started = std::time::Instant::now();
    let report = train(&mut params, &train_set, &tc)?;
    let seconds = started.elapsed().as_secs_f64();
    let test_accuracy = evaluate_prediction(&params, &test_set);
    let path = ctx.layout.checkpoint();
    ensure_parent(&path)?;
    params.save(&path)?;
    println!(
        "trained {} epochs in {seconds:.1}s: final loss {:.4}, test accuracy {:.4} -> {}",
        tc.epochs,
        report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        test_accuracy,
        path.display()
    );
    ctx.write_sidecar(
        &ctx.layout.train_report(),
        json!({
            "training_used": tc,
            "report": report,
            "test_accuracy": test_accuracy,
            "seconds": seconds,
        }),
    )
}

fn cmd_extract(ctx: &Ctx, args: &ExtractArgs) -> Result<()> {
    let cfg = ctx.config();
    no_extraction_for_flows(cfg)?;
    let params = load_checkpoint(&ctx.layout)?;
    let test_set = read_corpus(&ctx.layout.corpus("test"), "test corpus")?;
    let full = record_traces(&params, &test_set);
    let seed = cfg.clustering.seed;
    let trace = match cfg.clustering.trace_limit {
        Some(n) => full.prefix(n),
        None => subsample_sequences(&full, cfg.clustering.subsample, seed),
    };
    let out = extract(&trace, cfg.clustering.k, seed, &cfg.pipeline())?;

    let dir = ctx.layout.extract_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    trace.write(&dir.join("trace.bin"))?;
    if args.trace_csv {
        trace.write_csv(&dir.join("trace.csv"))?;
    }
    write_assignment_csv(&dir.join("clusters.csv"), &trace.labels, &out.clusters.assignment)?;
    write_centroids_csv(&dir.join("centroids.csv"), &out.clusters.centroids)?;
    out.automaton.save(&dir.join("automaton.json"))?;
    out.dfa.save(&dir.join("dfa.json"))?;
    out.minimized.save(&dir.join("minimized.json"))?;
    let dot = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    };
    dot("automaton.dot", export_dot(&out.automaton, cfg.label_mode))?;
    dot("minimized.dot", export_dfa_dot(&out.minimized, false))?;

    println!(
        "k={} on {} patterns: silhouette {:.4}, {} nodes, {} edges, DFA {} states, minimized {} states -> {}",
        cfg.clustering.k,
        trace.len(),
        out.silhouette,
        out.automaton.nodes.len(),
        out.automaton.edges.len(),
        out.dfa.len(),
        out.minimized.len(),
        dir.display()
    );
    ctx.write_sidecar(
        &dir.join("extract.json"),
        json!({
            "k": cfg.clustering.k,
            "seed": seed,
            "patterns": trace.len(),
            "sequences": trace.boundaries.len(),
            "silhouette": out.silhouette,
            "inertia": out.clusters.inertia,
            "kmeans_iterations": out.clusters.iterations,
            "nodes": out.automaton.nodes.len(),
            "edges": out.automaton.edges.len(),
            "final_nodes": out.automaton.final_nodes(),
            "dfa_states": out.dfa.len(),
            "minimized_states": out.minimized.len(),
        }),
    )
}

#[derive(Serialize)]
struct Rejection {
    sequence: String,
    consumed: usize,
    end_check_passed: bool,
}

fn cmd_validate(ctx: &Ctx, args: &ValidateArgs) -> Result<()> {
    let dfa_path = args.dfa.clone().unwrap_or_else(|| ctx.layout.minimized());
    require(&dfa_path, "minimized DFA", "lstm-fsa extract")?;
    let dfa = Dfa::load(&dfa_path).with_context(|| format!("reading {}", dfa_path.display()))?;
    let corpus_path = args.corpus.clone().unwrap_or_else(|| ctx.layout.corpus("eval"));
    let corpus = read_corpus(&corpus_path, "validation corpus")?;

    let mut accepted = 0;
    let mut rejections = Vec::new();
    for seq in corpus.sequences() {
        let r = accepts(&dfa, &seq.symbols).with_context(|| format!("checking {seq}"))?;
        if r.accepted {
            accepted += 1;
        } else {
            rejections.push(Rejection {
                sequence: seq.to_string(),
                consumed: r.consumed,
                end_check_passed: r.end_check_passed,
            });
        }
    }
    let pct = 100.0 * accepted as f64 / corpus.len() as f64;
    println!("accepted {accepted} of {} sequences ({pct:.2}%)", corpus.len());
    ctx.write_sidecar(
        &ctx.layout.validate_report(),
        json!({
            "dfa": dfa_path,
            "corpus": corpus_path,
            "sequences": corpus.len(),
            "accepted": accepted,
            "pct_accepted": pct,
            "rejections": rejections,
        }),
    )
}

fn cmd_sweep(ctx: &Ctx) -> Result<()> {
    let cfg = ctx.config();
    no_extraction_for_flows(cfg)?;
    let params = load_checkpoint(&ctx.layout)?;
    let test_set = read_corpus(&ctx.layout.corpus("test"), "test corpus")?;
    let eval = read_corpus(&ctx.layout.corpus("eval"), "eval corpus")?;
    let trace = record_traces(&params, &test_set);
    let dir = ctx.layout.sweep_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let sweep = cfg.sweep_config();
    let report = sweep_k(&trace, &eval, &sweep, Some(&dir.join("rows.csv")))?;
    write_summary_csv(&dir.join("summary.csv"), &report.summary)?;

    println!("{:>6} {:>4} {:>12} {:>12} {:>10}", "k", "n", "silhouette", "% accepted", "states");
    for s in &report.summary {
        println!(
            "{:>6} {:>4} {:>12.4} {:>12.2} {:>10.1}",
            s.k, s.n, s.silhouette_mean, s.pct_accepted_mean, s.n_states_mean
        );
    }
    let failures: Vec<_> = report.rows.iter().filter(|r| !r.is_ok()).collect();
    for r in &failures {
        eprintln!("k={} seed={} failed: {}", r.k, r.seed, r.error.as_deref().unwrap_or(""));
    }
    ctx.write_sidecar(
        &dir.join("sweep.json"),
        json!({
            "seeds": report.seeds,
            "n_sims": report.n_sims,
            "failed_cells": failures.len(),
            "summary": report.summary,
        }),
    )
}

fn cmd_export_dot(ctx: &Ctx, args: &ExportDotArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let dot = match ExtractedAutomaton::from_json(&text) {
        Ok(a) => export_dot(&a, ctx.config().label_mode),
        Err(_) => {
            let d = Dfa::from_json(&text)
                .with_context(|| format!("{} is neither an automaton nor a DFA", args.input.display()))?;
            export_dfa_dot(&d, args.show_trash)
        }
    };
    let output = args.output.clone().unwrap_or_else(|| args.input.with_extension("dot"));
    ensure_parent(&output)?;
    fs::write(&output, dot).with_context(|| format!("writing {}", output.display()))?;
    println!("wrote {}", output.display());
    Ok(())
}
