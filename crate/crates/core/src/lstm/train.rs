use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{NetworkParams, NetworkState, StepCache, PREDICTION_THRESHOLD};
use crate::error::{Error, Result};
use crate::grammar::{Corpus, Sequence};
use crate::symbol::Symbol;

const PROBE_SIZE: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Epoch `e` runs at `learning_rate * lr_decay^e`.
    pub lr_decay: f64,
    pub epochs: usize,
    pub shuffle_seed: u64,
    /// Truncated BPTT window for flows. `None` unrolls each sequence fully
    /// and resets the state at its start; `Some(w)` carries the state across
    /// windows of `w` steps and never resets inside a sequence.
    pub truncation: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            lr_decay: 1.0,
            epochs: 1,
            shuffle_seed: 0,
            truncation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean cross-entropy per predicted symbol over each epoch's updates.
    pub epoch_losses: Vec<f64>,
    /// Mean cross-entropy on a fixed probe set after each epoch.
    pub probe_losses: Vec<f64>,
    pub final_accuracy: f64,
}

/// Cross-entropy summed over `targets` and its exact gradient, unrolled from
/// `init` over `inputs`. Returns the state after the last input.
pub fn sequence_loss_and_grad(
    params: &NetworkParams,
    init: &NetworkState,
    inputs: &[Symbol],
    targets: &[Symbol],
) -> (f64, Vec<f64>, NetworkState) {
    assert_eq!(inputs.len(), targets.len());
    let l = params.layout();
    let hidden = l.hidden();
    let mut state = init.clone();
    let mut caches: Vec<StepCache> = Vec::with_capacity(inputs.len());
    let mut loss = 0.0;
    for (&x, &y) in inputs.iter().zip(targets) {
        let cache = params.step_cached(&mut state, x);
        loss -= cache.probs[y.index()].ln();
        caches.push(cache);
    }

    let p = &params.values;
    let mut grad = vec![0.0; p.len()];
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    for (cache, &y) in caches.iter().zip(targets).rev() {
        let mut d_logits = cache.probs.clone();
        d_logits[y.index()] -= 1.0;
        let mut d_out_in = vec![0.0; cache.out_in.len()];
        l.output
            .backward(p, &mut grad, &cache.out_in, &d_logits, Some(&mut d_out_in));

        let mut d_in = vec![0.0; l.n_blocks];
        let mut d_forget = vec![0.0; l.n_blocks];
        let mut d_out = vec![0.0; l.n_blocks];
        let mut d_cell_pre = vec![0.0; hidden];
        for c in 0..hidden {
            let b = l.block_of(c);
            let dh = d_out_in[c] + dh_next[c];
            let tc = cache.cell_tanh[c];
            d_out[b] += dh * tc;
            let dc = dh * cache.output_gate[b] * (1.0 - tc * tc) + dc_next[c];
            d_in[b] += dc * cache.cell_input[c];
            d_forget[b] += dc * cache.cell_prev[c];
            let g = cache.cell_input[c];
            d_cell_pre[c] = dc * cache.input_gate[b] * (1.0 - g * g);
            dc_next[c] = dc * cache.forget_gate[b];
        }
        for (d, g) in d_in.iter_mut().zip(&cache.input_gate) {
            *d *= g * (1.0 - g);
        }
        for (d, g) in d_forget.iter_mut().zip(&cache.forget_gate) {
            *d *= g * (1.0 - g);
        }
        for (d, g) in d_out.iter_mut().zip(&cache.output_gate) {
            *d *= g * (1.0 - g);
        }

        let mut dz = vec![0.0; cache.z.len()];
        l.input_gate
            .backward(p, &mut grad, &cache.z, &d_in, Some(&mut dz));
        l.forget_gate
            .backward(p, &mut grad, &cache.z, &d_forget, Some(&mut dz));
        l.output_gate
            .backward(p, &mut grad, &cache.z, &d_out, Some(&mut dz));
        l.cell_input
            .backward(p, &mut grad, &cache.z, &d_cell_pre, Some(&mut dz));
        dh_next.copy_from_slice(&dz[l.n_symbols..]);
    }
    (loss, grad, state)
}

fn apply_update(params: &mut NetworkParams, grad: &[f64], lr: f64) {
    if lr == 0.0 {
        return;
    }
    for (w, g) in params.values.iter_mut().zip(grad) {
        *w -= lr * g;
    }
}

/// Mean per-prediction cross-entropy, no parameter update.
pub fn mean_loss(params: &NetworkParams, sequences: &[Sequence]) -> f64 {
    let (sum, n) = sequences
        .par_iter()
        .map(|s| {
            let mut state = params.initial_state();
            let mut loss = 0.0;
            for w in s.symbols.windows(2) {
                let cache = params.step_cached(&mut state, w[0]);
                loss -= cache.probs[w[1].index()].ln();
            }
            (loss, s.len().saturating_sub(1))
        })
        .reduce(|| (0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Plain SGD with one update per sequence (or per truncation window).
pub fn train(params: &mut NetworkParams, corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainReport> {
    let sequences = corpus.sequences();
    let probe = &sequences[..sequences.len().min(PROBE_SIZE)];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut probe_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate * cfg.lr_decay.powi(epoch as i32);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut predictions = 0usize;
        for &idx in &order {
            let symbols = &sequences[idx].symbols;
            if symbols.len() < 2 {
                continue;
            }
            let inputs = &symbols[..symbols.len() - 1];
            let targets = &symbols[1..];
            let window = cfg.truncation.unwrap_or(inputs.len()).max(1);
            let mut state = params.initial_state();
            for (xs, ys) in inputs.chunks(window).zip(targets.chunks(window)) {
                let (loss, grad, next) = sequence_loss_and_grad(params, &state, xs, ys);
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        sequence: idx,
                    });
                }
                apply_update(params, &grad, lr);
                total += loss;
                predictions += xs.len();
                state = next;
            }
        }
        epoch_losses.push(if predictions == 0 {
            0.0
        } else {
            total / predictions as f64
        });
        probe_losses.push(mean_loss(params, probe));
    }

    Ok(TrainReport {
        epoch_losses,
        probe_losses,
        final_accuracy: evaluate_prediction(params, corpus),
    })
}

/// Fraction of steps whose true next symbol gets probability above
/// [`PREDICTION_THRESHOLD`]. The step after a sequence's last symbol is not
/// scored.
pub fn evaluate_prediction(params: &NetworkParams, corpus: &Corpus) -> f64 {
    let (correct, total) = corpus
        .sequences()
        .par_iter()
        .map(|s| {
            let mut state = params.initial_state();
            let mut correct = 0usize;
            for w in s.symbols.windows(2) {
                let cache = params.step_cached(&mut state, w[0]);
                if cache.probs[w[1].index()] > PREDICTION_THRESHOLD {
                    correct += 1;
                }
            }
            (correct, s.len().saturating_sub(1))
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}
