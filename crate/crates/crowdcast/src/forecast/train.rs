//! Mini-batch Adam training over dataset windows.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::DatasetWindow;
use crate::nn::{adam_step_default, backward, Real, Tape, Tensor};

use super::loss::{accumulate_frame_loss, finalize_loss, realized_weight_vars};
use super::model::Forecaster;
use super::frame_to_tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    /// Fraction of windows held out for the validation report.
    pub val_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, lr: 1e-3, batch: 8, seed: 0, val_frac: 0.1 }
    }
}

/// One row of the training log.
#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Realized loss weights (w_rho, w_vx, w_vy, w_sigma).
    pub weights: [f64; 4],
}

/// Writes the `epoch,train_loss,val_loss,w_rho,w_vx,w_vy,w_sigma` log CSV.
pub fn write_training_log<W: Write>(w: &mut W, logs: &[EpochLog]) -> Result<()> {
    writeln!(w, "epoch,train_loss,val_loss,w_rho,w_vx,w_vy,w_sigma")?;
    for l in logs {
        writeln!(
            w,
            "{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
            l.epoch, l.train_loss, l.val_loss, l.weights[0], l.weights[1], l.weights[2], l.weights[3]
        )?;
    }
    Ok(())
}

struct TensorWindow<F> {
    input: Vec<Tensor<F>>,
    target: Vec<Tensor<F>>,
}

fn to_tensors<F: Real>(w: &DatasetWindow) -> TensorWindow<F> {
    TensorWindow {
        input: w.input.frames.iter().map(|f| frame_to_tensor(f, true)).collect(),
        target: w.target.frames.iter().map(|f| frame_to_tensor(f, true)).collect(),
    }
}

/// Forward + pooled loss over a set of windows on one tape. Returns the loss
/// node (None when the chunk holds no target mass).
fn chunk_loss<F: Real>(
    model: &Forecaster<F>,
    tape: &mut Tape<F>,
    windows: &[&TensorWindow<F>],
) -> Result<Option<crate::nn::Var>> {
    let bp = model.bind(tape)?;
    let wvars = realized_weight_vars(tape, bp.theta);
    let mut acc = (None, 0usize);
    for w in windows {
        let heads = model.forward_on_tape(tape, &bp, &w.input, w.target.len())?;
        for (pred, target) in heads.iter().zip(&w.target) {
            acc = accumulate_frame_loss(tape, pred, target, wvars, acc)?;
        }
    }
    if acc.1 == 0 {
        return Ok(None);
    }
    Ok(Some(finalize_loss(tape, acc)?))
}

/// Pooled loss value over windows, evaluated in fixed-size chunks.
fn evaluate_loss<F: Real>(model: &Forecaster<F>, windows: &[&TensorWindow<F>], batch: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in windows.chunks(batch.max(1)) {
        let mut tape = Tape::new();
        if let Some(loss) = chunk_loss(model, &mut tape, chunk)? {
            total += tape.value(loss).item()?.into_f64();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyLoss);
    }
    Ok(total / count as f64)
}

/// Trains the model in place: mini-batch Adam over the joint parameter set
/// (network weights and the loss-weight scalars), deterministic shuffling
/// from the seed, one log row per epoch.
pub fn train<F: Real>(
    model: &mut Forecaster<F>,
    windows: &[DatasetWindow],
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    if windows.is_empty() {
        return Err(Error::InvalidConfig("training needs at least one window".into()));
    }
    if cfg.epochs == 0 || cfg.batch == 0 {
        return Err(Error::InvalidConfig("epochs and batch must be positive".into()));
    }
    let tensors: Vec<TensorWindow<F>> = windows.iter().map(to_tensors).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..tensors.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if tensors.len() >= 2 {
        ((tensors.len() as f64 * cfg.val_frac).round() as usize).clamp(1, tensors.len() - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_set: Vec<&TensorWindow<F>> = val_idx.iter().map(|&i| &tensors[i]).collect();
    let mut train_order: Vec<usize> = train_idx.to_vec();

    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        train_order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in train_order.chunks(cfg.batch) {
            let batch: Vec<&TensorWindow<F>> = chunk.iter().map(|&i| &tensors[i]).collect();
            let mut tape = Tape::new();
            let Some(loss) = chunk_loss(model, &mut tape, &batch)? else {
                continue;
            };
            epoch_loss += tape.value(loss).item()?.into_f64();
            batches += 1;
            backward(&tape, loss, model.params_mut())?;
            adam_step_default(model.params_mut(), F::from_f64(cfg.lr));
        }
        if batches == 0 {
            return Err(Error::EmptyLoss);
        }
        let train_loss = epoch_loss / batches as f64;
        let val_loss = if val_set.is_empty() {
            train_loss
        } else {
            evaluate_loss(model, &val_set, cfg.batch)?
        };
        logs.push(EpochLog { epoch, train_loss, val_loss, weights: model.loss_weights().realized() });
    }
    Ok(logs)
}
