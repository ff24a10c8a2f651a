//! Density-weighted smooth-L1 loss.
//!
//! Over the set V of cells whose target density is positive (pooled across
//! all frames and, in training, the whole batch):
//!
//!   L = (1/|V|) [ Σ_V w_ρ·huber(ρ̂ − ρ)
//!               + Σ_{f ∈ {vx, vy, σ²}} Σ_V ρ · w_f · huber(X̂^f − X^f) ]
//!
//! with huber transitioning at 1.0 and ρ the target density. The four
//! feature weights are learnable; they are realized as softplus(θ) + 0.01,
//! so every term keeps a floor weight of 0.01 and none can collapse to zero.

use crate::error::{Error, Result};
use crate::grid::FieldSequence;
use crate::nn::{Real, Tape, Tensor, Var};

use super::model::FrameHeads;
use super::frame_to_tensor;

const HUBER_DELTA: f64 = 1.0;
const WEIGHT_FLOOR: f64 = 0.01;

/// The four unconstrained loss-weight scalars (rho, vx, vy, sigma).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub theta: [f64; 4],
}

impl LossWeights {
    /// Weights whose realized values are exactly 1.
    pub fn unit() -> Self {
        Self { theta: [(0.99f64.exp() - 1.0).ln(); 4] }
    }

    /// softplus(theta) + 0.01, always at least the floor.
    pub fn realized(&self) -> [f64; 4] {
        self.theta.map(|t| t.max(0.0) + (-t.abs()).exp().ln_1p() + WEIGHT_FLOOR)
    }
}

/// Maps unconstrained theta vars to realized weight vars on the tape.
pub(crate) fn realized_weight_vars<F: Real>(tape: &mut Tape<F>, theta: [Var; 4]) -> [Var; 4] {
    theta.map(|t| {
        let s = tape.softplus(t);
        tape.add_scalar(s, F::from_f64(WEIGHT_FLOOR))
    })
}

/// Per-frame constant pieces derived from a target tensor: the channel
/// planes, the V mask, and the density weight field.
struct TargetPieces<F> {
    rho: Tensor<F>,
    vx: Tensor<F>,
    vy: Tensor<F>,
    sigma2: Tensor<F>,
    mask: Tensor<F>,
    rho_weight: Tensor<F>,
    v_count: usize,
}

fn split_target<F: Real>(target: &Tensor<F>) -> Result<TargetPieces<F>> {
    let [c, h, w] = target.shape() else {
        return Err(Error::ShapeMismatch { expected: "[4, H, W] target".into(), got: format!("{:?}", target.shape()) });
    };
    if *c != 4 {
        return Err(Error::ShapeMismatch { expected: "4 channels".into(), got: format!("{c}") });
    }
    let plane = h * w;
    let grab = |ch: usize| Tensor::from_vec(&[1, *h, *w], target.data()[ch * plane..(ch + 1) * plane].to_vec());
    let rho = grab(0)?;
    let mut mask = Tensor::zeros(&[1, *h, *w]);
    let mut rho_weight = Tensor::zeros(&[1, *h, *w]);
    let mut v_count = 0;
    for i in 0..plane {
        let r = rho.data()[i];
        if r > F::zero() {
            mask.data_mut()[i] = F::one();
            rho_weight.data_mut()[i] = r;
            v_count += 1;
        }
    }
    Ok(TargetPieces { rho, vx: grab(1)?, vy: grab(2)?, sigma2: grab(3)?, mask, rho_weight, v_count })
}

/// Adds one frame's weighted loss terms to the running sum. Returns the
/// updated `(terms, |V|)` accumulator.
pub(crate) fn accumulate_frame_loss<F: Real>(
    tape: &mut Tape<F>,
    pred: &FrameHeads,
    target: &Tensor<F>,
    weights: [Var; 4],
    acc: (Option<Var>, usize),
) -> Result<(Option<Var>, usize)> {
    let pieces = split_target(target)?;
    let (mut terms, mut v_count) = acc;
    if pieces.v_count == 0 {
        return Ok((terms, v_count));
    }
    v_count += pieces.v_count;
    let delta = F::from_f64(HUBER_DELTA);

    let weighted = |tape: &mut Tape<F>, pred: Var, tgt: &Tensor<F>, field: &Tensor<F>, w: Var| -> Result<Var> {
        let tgt_node = tape.constant(tgt.clone());
        let err = tape.sub(pred, tgt_node)?;
        let hub = tape.huber(err, delta);
        let masked = tape.mul_const(hub, field.clone())?;
        let total = tape.sum(masked);
        tape.scale(total, w)
    };

    let vx_pred = tape.slice_channels(pred.vel, 0, 1)?;
    let vy_pred = tape.slice_channels(pred.vel, 1, 2)?;
    let contributions = [
        weighted(tape, pred.rho, &pieces.rho, &pieces.mask, weights[0])?,
        weighted(tape, vx_pred, &pieces.vx, &pieces.rho_weight, weights[1])?,
        weighted(tape, vy_pred, &pieces.vy, &pieces.rho_weight, weights[2])?,
        weighted(tape, pred.sigma2, &pieces.sigma2, &pieces.rho_weight, weights[3])?,
    ];
    for c in contributions {
        terms = Some(match terms {
            Some(t) => tape.add(t, c)?,
            None => c,
        });
    }
    Ok((terms, v_count))
}

/// Finalizes pooled loss terms into the normalized scalar loss node.
pub(crate) fn finalize_loss<F: Real>(tape: &mut Tape<F>, acc: (Option<Var>, usize)) -> Result<Var> {
    let (terms, v_count) = acc;
    match terms {
        Some(t) if v_count > 0 => Ok(tape.scale_const(t, F::from_f64(1.0 / v_count as f64))),
        _ => Err(Error::EmptyLoss),
    }
}

/// Evaluates the loss between two field sequences, exactly as the training
/// loop sees it but on the sequences' own (unnormalized) units.
pub fn loss(pred: &FieldSequence, target: &FieldSequence, weights: &LossWeights) -> Result<f64> {
    if pred.len() != target.len()
        || pred.spec.height != target.spec.height
        || pred.spec.width != target.spec.width
    {
        return Err(Error::ShapeMismatch {
            expected: format!("{} frames on {}x{}", target.len(), target.spec.height, target.spec.width),
            got: format!("{} frames on {}x{}", pred.len(), pred.spec.height, pred.spec.width),
        });
    }
    let mut tape: Tape<f64> = Tape::new();
    let theta = weights.theta.map(|t| tape.constant(Tensor::scalar(t)));
    let wvars = realized_weight_vars(&mut tape, theta);

    let mut acc = (None, 0usize);
    for (p, t) in pred.frames.iter().zip(&target.frames) {
        let pt: Tensor<f64> = frame_to_tensor(p, false);
        let (h, w) = (p.spec.height, p.spec.width);
        let plane = h * w;
        let rho = tape.constant(Tensor::from_vec(&[1, h, w], pt.data()[..plane].to_vec())?);
        let vel = tape.constant(Tensor::from_vec(&[2, h, w], pt.data()[plane..3 * plane].to_vec())?);
        let sigma2 = tape.constant(Tensor::from_vec(&[1, h, w], pt.data()[3 * plane..].to_vec())?);
        let heads = FrameHeads { rho, vel, sigma2 };
        acc = accumulate_frame_loss(&mut tape, &heads, &frame_to_tensor(t, false), wvars, acc)?;
    }
    let loss_var = finalize_loss(&mut tape, acc)?;
    tape.value(loss_var).item()
}
