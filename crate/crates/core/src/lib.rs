//! Extraction of finite-state automata from the hidden-state trajectories of
//! an LSTM trained on next-symbol prediction over Reber-family grammars.
//!
//! Pipeline: [`grammar`] corpora train an [`lstm`] network; its cell
//! outputs are recorded as a [`lstm::HiddenTrace`], quantized with
//! [`clustering`], turned into an [`automaton`] that is determinized and
//! minimized, and finally checked against held-out sequences in
//! [`validation`].

pub mod automaton;
pub mod clustering;
pub mod error;
pub mod grammar;
pub mod lstm;
pub mod symbol;
pub mod validation;

pub use automaton::{
    build_automaton, build_from_ids, build_oracle_automaton, determinize, export_dfa_dot,
    export_dot, minimize, Dfa, Edge, ExtractedAutomaton, LabelMode, MinimizedDfa, NodeId,
    StateLabel, START_NODE, TRASH_NODE,
};
pub use clustering::{kmeans, kmeans_with, silhouette_mean, ClusterAssignment, KMeansConfig};
pub use error::{Error, Result};
pub use grammar::{build_grammar, Corpus, CorpusStats, GrammarKind, GrammarSpec, Sequence};
pub use lstm::{
    evaluate_prediction, init_network, record_traces, train, HiddenTrace, NetworkConfig,
    NetworkParams, NetworkState, TrainConfig, TrainReport,
};
pub use symbol::{StepLabel, Symbol};
pub use validation::{
    accepts, accepts_nfa, evaluate_acceptance, extract, sweep_k, AcceptResult, PipelineConfig,
    PipelineOutcome, SweepConfig, SweepReport, SweepRow, SweepSummary,
};
