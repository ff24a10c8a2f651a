//! The crowd forecaster: an encoder–ConvLSTM–decoder over field tensors, the
//! density-weighted smooth-L1 loss with learnable feature weights, the
//! training loop, and the non-learned baseline predictors.

mod baselines;
mod loss;
mod model;
mod train;

pub use baselines::{Advection, Persistence};
pub use loss::{loss, LossWeights};
pub use model::{Forecaster, FrameHeads, ModelConfig};
pub use train::{train, write_training_log, EpochLog, TrainConfig};

use crate::error::Result;
use crate::grid::{CrowdField, FieldSequence, GridSpec};
use crate::nn::{Real, Tensor};

/// Velocity channels are scaled by this before entering the model so all
/// channels see comparable Huber branches (densities and variances are
/// already order-one).
pub const VEL_NORM: f64 = 2.0;

/// Anything that maps k observed frames to tau forecast frames.
pub trait Predictor {
    fn predict(&self, input: &FieldSequence, tau: usize) -> Result<FieldSequence>;
    fn name(&self) -> &'static str;
}

/// Packs a frame into a `[4, H, W]` channel-plane tensor
/// (rho, vx, vy, sigma2). `normalized` applies the model-space velocity
/// scaling.
pub fn frame_to_tensor<F: Real>(f: &CrowdField, normalized: bool) -> Tensor<F> {
    let (h, w) = (f.spec.height, f.spec.width);
    let plane = h * w;
    let vscale = if normalized { 1.0 / VEL_NORM } else { 1.0 };
    let mut data = vec![F::zero(); 4 * plane];
    for (i, c) in f.cells.iter().enumerate() {
        data[i] = F::from_f64(c.rho);
        data[plane + i] = F::from_f64(c.mu_v[0] * vscale);
        data[2 * plane + i] = F::from_f64(c.mu_v[1] * vscale);
        data[3 * plane + i] = F::from_f64(c.sigma2_v);
    }
    Tensor::from_vec(&[4, h, w], data).expect("sized above")
}

/// Unpacks decoder head tensors back into a frame, undoing the velocity
/// normalization when `normalized`.
pub fn heads_to_frame<F: Real>(
    rho: &Tensor<F>,
    vel: &Tensor<F>,
    sigma2: &Tensor<F>,
    spec: &GridSpec,
    frame_index: i64,
    normalized: bool,
) -> CrowdField {
    let plane = spec.height * spec.width;
    let vscale = if normalized { VEL_NORM } else { 1.0 };
    let mut f = CrowdField::zeros(spec.clone(), frame_index);
    for (i, cell) in f.cells.iter_mut().enumerate() {
        cell.rho = rho.data()[i].into_f64().max(0.0);
        cell.mu_v = [vel.data()[i].into_f64() * vscale, vel.data()[plane + i].into_f64() * vscale];
        cell.sigma2_v = sigma2.data()[i].into_f64().max(0.0);
    }
    f
}
