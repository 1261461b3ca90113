//! `lstm-fsa`: generate corpora, train the network, extract and validate
//! automata, and sweep the cluster count.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 when a
//! stage fails at run time.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lstm_fsa::{GrammarKind, LabelMode};

use crate::commands::UsageError;

#[derive(Debug, Parser)]
#[command(name = "lstm-fsa", version, about = "Automaton extraction from LSTM hidden states")]
pub struct Cli {
    /// TOML or JSON experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root directory for every artifact.
    #[arg(long, global = true, env = "LSTM_FSA_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub grammar: Option<GrammarKind>,
    /// Corpus generation seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train, test and eval corpora with a statistics sidecar.
    Gen(GenArgs),
    /// Train the network on the train corpus and save a checkpoint.
    Train(TrainArgs),
    /// Record hidden states on the test corpus and extract automata.
    Extract(ExtractArgs),
    /// Run sequences through a minimized automaton.
    Validate(ValidateArgs),
    /// Silhouette and acceptance across cluster counts and seeds.
    Sweep(SweepArgs),
    /// Render an automaton or DFA JSON file as Graphviz DOT.
    ExportDot(ExportDotArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub eval: Option<usize>,
    /// Symbols per flow for CERG.
    #[arg(long)]
    pub flow_length: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    /// Truncated backpropagation window.
    #[arg(long)]
    pub truncation: Option<usize>,
    /// Network initialization seed.
    #[arg(long)]
    pub init_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub k: Option<usize>,
    /// Seed for k-means and the sequence subsample.
    #[arg(long)]
    pub cluster_seed: Option<u64>,
    /// Use only the first N trace records.
    #[arg(long)]
    pub trace_limit: Option<usize>,
    #[arg(long)]
    pub label_mode: Option<LabelMode>,
    /// Keep (true) or drop (false) the continuation edges between sequences.
    #[arg(long)]
    pub flow_edges: Option<bool>,
    /// Also write the trace as CSV.
    #[arg(long)]
    pub trace_csv: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Minimized DFA JSON; defaults to the one written by `extract`.
    #[arg(long)]
    pub dfa: Option<PathBuf>,
    /// Sequences to check; defaults to the eval corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated cluster counts.
    #[arg(long, value_delimiter = ',')]
    pub k_list: Option<Vec<usize>>,
    #[arg(long)]
    pub n_sims: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub flow_edges: Option<bool>,
}

#[derive(Debug, Args)]
pub struct ExportDotArgs {
    /// Automaton or DFA JSON.
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to the input path with a `.dot` extension.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub label_mode: Option<LabelMode>,
    /// Draw the trash state of a DFA.
    #[arg(long)]
    pub show_trash: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
