//! LSTM with forget gates and no peepholes, trained on next-symbol
//! prediction.
//!
//! Each block owns one input, forget and output gate shared by its cells;
//! every cell has its own squashed cell input and a constant error carousel.
//! Gates and cell inputs read the concatenation of the one-hot input and the
//! previous cell outputs. The softmax output layer reads the cell outputs and,
//! through skip connections, the one-hot input.
//!
//! All parameters live in one flat vector. [`Layout`] documents the order,
//! which is also the checkpoint layout.

mod train;
mod trace;

pub use train::{
    evaluate_prediction, mean_loss, sequence_loss_and_grad, train, TrainConfig, TrainReport,
};
pub use trace::{record_traces, HiddenTrace};

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symbol::Symbol;

/// A step counts as correctly predicted when the true next symbol gets more
/// than this probability.
pub const PREDICTION_THRESHOLD: f64 = 0.3;

pub const INIT_WEIGHT_RANGE: f64 = 0.1;
pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub n_symbols: usize,
    pub n_blocks: usize,
    pub cells_per_block: usize,
    pub skip_connections: bool,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            n_symbols: Symbol::COUNT,
            n_blocks: 4,
            cells_per_block: 2,
            skip_connections: true,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn hidden(&self) -> usize {
        self.n_blocks * self.cells_per_block
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    fn validate(&self) -> Result<()> {
        if self.n_symbols != Symbol::COUNT {
            return Err(Error::Config(format!(
                "n_symbols must be {}, got {}",
                Symbol::COUNT,
                self.n_symbols
            )));
        }
        if self.n_blocks == 0 || self.cells_per_block == 0 {
            return Err(Error::Config("network needs at least one cell".into()));
        }
        Ok(())
    }
}

/// A dense affine map stored row-major as `rows x cols` weights followed by
/// `rows` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Dense {
    pub fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }

    pub fn biases(&self) -> std::ops::Range<usize> {
        let b = self.offset + self.rows * self.cols;
        b..b + self.rows
    }

    fn end(&self) -> usize {
        self.offset + self.rows * (self.cols + 1)
    }

    fn apply(&self, params: &[f64], input: &[f64], out: &mut [f64]) {
        let w = &params[self.weights()];
        let b = &params[self.biases()];
        for r in 0..self.rows {
            let row = &w[r * self.cols..(r + 1) * self.cols];
            out[r] = b[r] + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>();
        }
    }

    /// Accumulates `delta * input^T` into the weights and `delta` into the
    /// biases, and `W^T delta` into `input_grad` when given.
    fn backward(
        &self,
        params: &[f64],
        grad: &mut [f64],
        input: &[f64],
        delta: &[f64],
        input_grad: Option<&mut [f64]>,
    ) {
        let wr = self.weights();
        {
            let gw = &mut grad[wr.clone()];
            for r in 0..self.rows {
                if delta[r] == 0.0 {
                    continue;
                }
                let row = &mut gw[r * self.cols..(r + 1) * self.cols];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += delta[r] * x;
                }
            }
        }
        for (g, d) in grad[self.biases()].iter_mut().zip(delta) {
            *g += d;
        }
        if let Some(ig) = input_grad {
            let w = &params[wr];
            for r in 0..self.rows {
                let row = &w[r * self.cols..(r + 1) * self.cols];
                for (g, a) in ig.iter_mut().zip(row) {
                    *g += delta[r] * a;
                }
            }
        }
    }
}

/// Parameter layout, in order: input gates, forget gates, output gates
/// (`n_blocks` rows each), cell inputs (`hidden` rows), all over
/// `[one-hot input ‖ previous cell outputs]`; then the output layer
/// (`n_symbols` rows) over `[cell outputs ‖ one-hot input]`, the second part
/// present only with skip connections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub input_gate: Dense,
    pub forget_gate: Dense,
    pub output_gate: Dense,
    pub cell_input: Dense,
    pub output: Dense,
    pub n_symbols: usize,
    pub n_blocks: usize,
    pub cells_per_block: usize,
    pub skip_connections: bool,
}

impl Layout {
    fn new(cfg: &NetworkConfig) -> Self {
        let hidden = cfg.hidden();
        let concat = cfg.n_symbols + hidden;
        let input_gate = Dense {
            rows: cfg.n_blocks,
            cols: concat,
            offset: 0,
        };
        let forget_gate = Dense {
            offset: input_gate.end(),
            ..input_gate
        };
        let output_gate = Dense {
            offset: forget_gate.end(),
            ..input_gate
        };
        let cell_input = Dense {
            rows: hidden,
            cols: concat,
            offset: output_gate.end(),
        };
        let output = Dense {
            rows: cfg.n_symbols,
            cols: hidden + if cfg.skip_connections { cfg.n_symbols } else { 0 },
            offset: cell_input.end(),
        };
        Layout {
            input_gate,
            forget_gate,
            output_gate,
            cell_input,
            output,
            n_symbols: cfg.n_symbols,
            n_blocks: cfg.n_blocks,
            cells_per_block: cfg.cells_per_block,
            skip_connections: cfg.skip_connections,
        }
    }

    pub fn len(&self) -> usize {
        self.output.end()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hidden(&self) -> usize {
        self.n_blocks * self.cells_per_block
    }

    fn block_of(&self, cell: usize) -> usize {
        cell / self.cells_per_block
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    pub values: Vec<f64>,
}

/// Uniform weights in `[-0.1, 0.1]`, forget-gate biases `+1`, other biases 0.
pub fn init_network(config: &NetworkConfig) -> Result<NetworkParams> {
    config.validate()?;
    let layout = config.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut values = vec![0.0; layout.len()];
    for dense in [
        layout.input_gate,
        layout.forget_gate,
        layout.output_gate,
        layout.cell_input,
        layout.output,
    ] {
        for w in &mut values[dense.weights()] {
            *w = rng.gen_range(-INIT_WEIGHT_RANGE..=INIT_WEIGHT_RANGE);
        }
    }
    values[layout.forget_gate.biases()].fill(FORGET_BIAS_INIT);
    Ok(NetworkParams {
        config: *config,
        values,
    })
}

/// Cell states (the carousels) and gated cell outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub cell_states: Vec<f64>,
    pub hidden_output: Vec<f64>,
}

impl NetworkState {
    pub fn zeros(hidden: usize) -> Self {
        NetworkState {
            cell_states: vec![0.0; hidden],
            hidden_output: vec![0.0; hidden],
        }
    }

    pub fn reset(&mut self) {
        self.cell_states.fill(0.0);
        self.hidden_output.fill(0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub probs: Vec<f64>,
    pub hidden: Vec<f64>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn softmax(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub z: Vec<f64>,
    pub input_gate: Vec<f64>,
    pub forget_gate: Vec<f64>,
    pub output_gate: Vec<f64>,
    pub cell_input: Vec<f64>,
    pub cell_prev: Vec<f64>,
    pub cell_tanh: Vec<f64>,
    pub out_in: Vec<f64>,
    pub probs: Vec<f64>,
}

impl NetworkParams {
    pub fn layout(&self) -> Layout {
        self.config.layout()
    }

    pub fn initial_state(&self) -> NetworkState {
        NetworkState::zeros(self.config.hidden())
    }

    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        Ok(NetworkParams {
            config: *config,
            values: vec![0.0; config.layout().len()],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn step_cached(&self, state: &mut NetworkState, sym: Symbol) -> StepCache {
        let l = self.layout();
        let p = &self.values;
        let hidden = l.hidden();
        let mut z = vec![0.0; l.n_symbols + hidden];
        z[sym.index()] = 1.0;
        z[l.n_symbols..].copy_from_slice(&state.hidden_output);

        let mut input_gate = vec![0.0; l.n_blocks];
        let mut forget_gate = vec![0.0; l.n_blocks];
        let mut output_gate = vec![0.0; l.n_blocks];
        let mut cell_input = vec![0.0; hidden];
        l.input_gate.apply(p, &z, &mut input_gate);
        l.forget_gate.apply(p, &z, &mut forget_gate);
        l.output_gate.apply(p, &z, &mut output_gate);
        l.cell_input.apply(p, &z, &mut cell_input);
        for v in input_gate
            .iter_mut()
            .chain(forget_gate.iter_mut())
            .chain(output_gate.iter_mut())
        {
            *v = sigmoid(*v);
        }
        for v in cell_input.iter_mut() {
            *v = v.tanh();
        }

        let cell_prev = state.cell_states.clone();
        let mut cell_tanh = vec![0.0; hidden];
        for c in 0..hidden {
            let b = l.block_of(c);
            let cell = forget_gate[b] * cell_prev[c] + input_gate[b] * cell_input[c];
            state.cell_states[c] = cell;
            cell_tanh[c] = cell.tanh();
            state.hidden_output[c] = output_gate[b] * cell_tanh[c];
        }

        let mut out_in = state.hidden_output.clone();
        if l.skip_connections {
            out_in.extend_from_slice(&z[..l.n_symbols]);
        }
        let mut probs = vec![0.0; l.n_symbols];
        l.output.apply(p, &out_in, &mut probs);
        softmax(&mut probs);

        StepCache {
            z,
            input_gate,
            forget_gate,
            output_gate,
            cell_input,
            cell_prev,
            cell_tanh,
            out_in,
            probs,
        }
    }

    /// One time step: returns the successor state, the next-symbol
    /// distribution and the cell outputs.
    pub fn forward_step(&self, state: &NetworkState, sym: Symbol) -> (NetworkState, StepOutput) {
        let mut next = state.clone();
        let cache = self.step_cached(&mut next, sym);
        let hidden = next.hidden_output.clone();
        (
            next,
            StepOutput {
                probs: cache.probs,
                hidden,
            },
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config,
            params: self.values.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("unsupported format {} v{}", ck.format, ck.version),
            ));
        }
        ck.config.validate()?;
        let expected = ck.config.layout().len();
        if ck.params.len() != expected {
            return Err(Error::ParamShape {
                expected,
                actual: ck.params.len(),
            });
        }
        Ok(NetworkParams {
            config: ck.config,
            values: ck.params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        NetworkParams::from_json(&text)
    }
}

const CHECKPOINT_FORMAT: &str = "lstm-fsa-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: NetworkConfig,
    params: Vec<f64>,
}
