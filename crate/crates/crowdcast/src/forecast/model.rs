//! Encoder–ConvLSTM–decoder forecaster.
//!
//! Each input frame passes two stride-2 convolutions (leaky-ReLU 0.1),
//! shrinking H×W to H/4×W/4 while widening channels, then drives the
//! recurrent stack. The forecaster then rolls the recurrence tau more steps
//! on zero inputs, decoding every hidden state through two ×2 transposed
//! convolutions. Density and variance heads go through softplus so the
//! predicted fields stay non-negative; velocities are linear.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::FieldSequence;
use crate::nn::convlstm::forget_gate_range;
use crate::nn::{convlstm_step, ConvLstmState, ConvLstmVars, Param, ParamSet, Real, Tape, Tensor, Var};

use super::{frame_to_tensor, heads_to_frame, Predictor};

const LEAKY_SLOPE: f64 = 0.1;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Field channels per cell.
    pub in_channels: usize,
    /// Channel widths after the first and second encoder convolutions.
    pub enc_channels: (usize, usize),
    /// ConvLSTM state channels.
    pub hidden_channels: usize,
    /// Stacked ConvLSTM layers.
    pub lstm_layers: usize,
    /// Default observed frames per window.
    pub k: usize,
    /// Default forecast frames per window.
    pub tau: usize,
    pub height: usize,
    pub width: usize,
}

impl ModelConfig {
    /// The single-layer configuration used throughout: channels 4 → 16 → 64.
    pub fn standard(k: usize, tau: usize, height: usize, width: usize) -> Self {
        Self {
            in_channels: 4,
            enc_channels: (16, 64),
            hidden_channels: 64,
            lstm_layers: 1,
            k,
            tau,
            height,
            width,
        }
    }

    /// Small configuration for gradient-oracle tests.
    pub fn toy() -> Self {
        Self {
            in_channels: 4,
            enc_channels: (4, 8),
            hidden_channels: 8,
            lstm_layers: 1,
            k: 2,
            tau: 2,
            height: 8,
            width: 8,
        }
    }

    /// Over-provisioned comparison model: three stacked ConvLSTM layers at
    /// doubled channel widths.
    pub fn deep(k: usize, tau: usize, height: usize, width: usize) -> Self {
        Self {
            in_channels: 4,
            enc_channels: (32, 128),
            hidden_channels: 128,
            lstm_layers: 3,
            k,
            tau,
            height,
            width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height % 4 != 0 || self.width % 4 != 0 {
            return Err(Error::InvalidConfig(format!(
                "grid dims must be divisible by 4 (two stride-2 stages), got {}x{}",
                self.height, self.width
            )));
        }
        if self.in_channels == 0
            || self.enc_channels.0 == 0
            || self.enc_channels.1 == 0
            || self.hidden_channels == 0
            || self.lstm_layers == 0
            || self.k == 0
            || self.tau == 0
        {
            return Err(Error::InvalidConfig("all model dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Decoder output of one forecast frame, split by head.
#[derive(Debug, Clone, Copy)]
pub struct FrameHeads {
    /// `[1, H, W]`, softplus-activated.
    pub rho: Var,
    /// `[2, H, W]`, linear.
    pub vel: Var,
    /// `[1, H, W]`, softplus-activated.
    pub sigma2: Var,
}

/// Parameter handles bound onto one tape.
pub(crate) struct BoundParams {
    enc1: (Var, Var),
    enc2: (Var, Var),
    lstm: Vec<ConvLstmVars>,
    dec1: (Var, Var),
    dec2: (Var, Var),
    pub theta: [Var; 4],
}

/// The trained model: configuration plus named parameters (network weights
/// and the four learnable loss-weight scalars).
#[derive(Debug, Clone)]
pub struct Forecaster<F: Real> {
    cfg: ModelConfig,
    params: ParamSet<F>,
}

impl<F: Real> Forecaster<F> {
    /// Fresh model with uniform ±sqrt(1/fan_in) weights, zero biases, +1
    /// forget-gate bias, and loss weights initialized so the realized values
    /// are exactly 1.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let (c1, c2) = cfg.enc_channels;
        let h = cfg.hidden_channels;

        let mut weight = |params: &mut ParamSet<F>, name: &str, shape: [usize; 4], fan_in: usize| -> Result<()> {
            let bound = (1.0 / fan_in as f64).sqrt();
            let n = shape.iter().product();
            let data: Vec<F> = (0..n).map(|_| F::from_f64(rng.gen_range(-bound..bound))).collect();
            params.insert(Param::new(name, Tensor::from_vec(&shape, data)?))
        };
        let bias = |params: &mut ParamSet<F>, name: &str, cout: usize| -> Result<()> {
            params.insert(Param::new(name, Tensor::zeros(&[cout])))
        };

        weight(&mut params, "enc1.w", [c1, cfg.in_channels, 3, 3], cfg.in_channels * 9)?;
        bias(&mut params, "enc1.b", c1)?;
        weight(&mut params, "enc2.w", [c2, c1, 3, 3], c1 * 9)?;
        bias(&mut params, "enc2.b", c2)?;
        for l in 0..cfg.lstm_layers {
            let cin_l = if l == 0 { c2 } else { h };
            weight(&mut params, &format!("lstm{l}.x.w"), [4 * h, cin_l, 3, 3], cin_l * 9)?;
            weight(&mut params, &format!("lstm{l}.h.w"), [4 * h, h, 3, 3], h * 9)?;
            // Fused gate bias (i, f, g, o); forget block starts at +1.
            let mut b = Tensor::zeros(&[4 * h]);
            for i in forget_gate_range(h) {
                b.data_mut()[i] = F::one();
            }
            params.insert(Param::new(&format!("lstm{l}.b"), b))?;
        }
        // Transposed convolutions use [Cin, Cout, 4, 4] weights.
        weight(&mut params, "dec1.w", [h, c1, 4, 4], h * 16)?;
        bias(&mut params, "dec1.b", c1)?;
        weight(&mut params, "dec2.w", [c1, cfg.in_channels, 4, 4], c1 * 16)?;
        bias(&mut params, "dec2.b", cfg.in_channels)?;

        // softplus(theta) + 0.01 == 1 at init.
        let theta0 = F::from_f64((0.99f64.exp() - 1.0).ln());
        for name in ["loss.theta_rho", "loss.theta_vx", "loss.theta_vy", "loss.theta_sigma"] {
            params.insert(Param::new(name, Tensor::scalar(theta0)))?;
        }
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<F> {
        &mut self.params
    }

    /// Current realized loss weights (w_rho, w_vx, w_vy, w_sigma).
    pub fn loss_weights(&self) -> super::LossWeights {
        let theta = ["loss.theta_rho", "loss.theta_vx", "loss.theta_vy", "loss.theta_sigma"]
            .map(|n| self.params.get(n).expect("theta params exist").value.data()[0].into_f64());
        super::LossWeights { theta }
    }

    pub(crate) fn bind(&self, tape: &mut Tape<F>) -> Result<BoundParams> {
        let p = &self.params;
        let pair = |tape: &mut Tape<F>, name: &str| -> Result<(Var, Var)> {
            Ok((tape.param(p, &format!("{name}.w"))?, tape.param(p, &format!("{name}.b"))?))
        };
        let enc1 = pair(tape, "enc1")?;
        let enc2 = pair(tape, "enc2")?;
        let mut lstm = Vec::with_capacity(self.cfg.lstm_layers);
        for l in 0..self.cfg.lstm_layers {
            lstm.push(ConvLstmVars {
                wx: tape.param(p, &format!("lstm{l}.x.w"))?,
                wh: tape.param(p, &format!("lstm{l}.h.w"))?,
                b: tape.param(p, &format!("lstm{l}.b"))?,
            });
        }
        let dec1 = pair(tape, "dec1")?;
        let dec2 = pair(tape, "dec2")?;
        let theta = [
            tape.param(p, "loss.theta_rho")?,
            tape.param(p, "loss.theta_vx")?,
            tape.param(p, "loss.theta_vy")?,
            tape.param(p, "loss.theta_sigma")?,
        ];
        Ok(BoundParams { enc1, enc2, lstm, dec1, dec2, theta })
    }

    fn encode(&self, tape: &mut Tape<F>, x: Var, bp: &BoundParams) -> Result<Var> {
        let slope = F::from_f64(LEAKY_SLOPE);
        let e1 = tape.conv2d(x, bp.enc1.0, Some(bp.enc1.1), 2)?;
        let e1 = tape.leaky_relu(e1, slope);
        let e2 = tape.conv2d(e1, bp.enc2.0, Some(bp.enc2.1), 2)?;
        Ok(tape.leaky_relu(e2, slope))
    }

    fn decode(&self, tape: &mut Tape<F>, hidden: Var, bp: &BoundParams) -> Result<FrameHeads> {
        let slope = F::from_f64(LEAKY_SLOPE);
        let d1 = tape.conv_transpose2d(hidden, bp.dec1.0, Some(bp.dec1.1), 2)?;
        let d1 = tape.leaky_relu(d1, slope);
        let d2 = tape.conv_transpose2d(d1, bp.dec2.0, Some(bp.dec2.1), 2)?;
        let rho_raw = tape.slice_channels(d2, 0, 1)?;
        let vel = tape.slice_channels(d2, 1, 3)?;
        let sig_raw = tape.slice_channels(d2, 3, 4)?;
        Ok(FrameHeads { rho: tape.softplus(rho_raw), vel, sigma2: tape.softplus(sig_raw) })
    }

    /// Runs the network on already-normalized `[4, H, W]` frame tensors and
    /// returns tau decoded forecast frames.
    pub(crate) fn forward_on_tape(
        &self,
        tape: &mut Tape<F>,
        bp: &BoundParams,
        input: &[Tensor<F>],
        tau: usize,
    ) -> Result<Vec<FrameHeads>> {
        if input.is_empty() || tau == 0 {
            return Err(Error::InvalidConfig("need at least one input frame and one forecast step".into()));
        }
        let (hh, hw) = (self.cfg.height / 4, self.cfg.width / 4);
        let expected = [self.cfg.in_channels, self.cfg.height, self.cfg.width];
        for t in input {
            if t.shape() != expected {
                return Err(Error::ShapeMismatch {
                    expected: format!("{expected:?} input frame"),
                    got: format!("{:?}", t.shape()),
                });
            }
        }

        let zero_state = tape.constant(Tensor::zeros(&[self.cfg.hidden_channels, hh, hw]));
        let mut states: Vec<ConvLstmState> =
            vec![ConvLstmState { h: zero_state, c: zero_state }; self.cfg.lstm_layers];

        for frame in input {
            let x = tape.constant(frame.clone());
            let mut feed = self.encode(tape, x, bp)?;
            for (l, p) in bp.lstm.iter().enumerate() {
                states[l] = convlstm_step(tape, feed, states[l], *p)?;
                feed = states[l].h;
            }
        }

        let zero_in = tape.constant(Tensor::zeros(&[self.cfg.enc_channels.1, hh, hw]));
        let mut out = Vec::with_capacity(tau);
        for _ in 0..tau {
            let mut feed = zero_in;
            for (l, p) in bp.lstm.iter().enumerate() {
                states[l] = convlstm_step(tape, feed, states[l], *p)?;
                feed = states[l].h;
            }
            out.push(self.decode(tape, feed, bp)?);
        }
        Ok(out)
    }

    /// Field-space forecast: normalizes the input window, runs the network,
    /// and denormalizes the decoded frames.
    pub fn predict_fields(&self, input: &FieldSequence, tau: usize) -> Result<FieldSequence> {
        if input.spec.height != self.cfg.height || input.spec.width != self.cfg.width {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{} grid", self.cfg.height, self.cfg.width),
                got: format!("{}x{} grid", input.spec.height, input.spec.width),
            });
        }
        let tensors: Vec<Tensor<F>> = input.frames.iter().map(|f| frame_to_tensor(f, true)).collect();
        let mut tape = Tape::new();
        let bp = self.bind(&mut tape)?;
        let heads = self.forward_on_tape(&mut tape, &bp, &tensors, tau)?;

        let last_index = input.frames.last().map_or(0, |f| f.frame_index);
        let frames = heads
            .iter()
            .enumerate()
            .map(|(i, h)| {
                heads_to_frame(
                    tape.value(h.rho),
                    tape.value(h.vel),
                    tape.value(h.sigma2),
                    &input.spec,
                    last_index + 1 + i as i64,
                    true,
                )
            })
            .collect();
        FieldSequence::new(input.spec.clone(), frames, input.t0 + input.len() as f64 * input.spec.frame_dt)
    }
}

impl Predictor for Forecaster<f32> {
    fn predict(&self, input: &FieldSequence, tau: usize) -> Result<FieldSequence> {
        self.predict_fields(input, tau)
    }

    fn name(&self) -> &'static str {
        "forecaster"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{rasterize_frame, GridSpec, PedObservation};

    fn window(spec: &GridSpec, k: usize) -> FieldSequence {
        let frames = (0..k)
            .map(|t| {
                let obs = [PedObservation {
                    time: t as f64,
                    pid: 1,
                    pos: [2.5 + t as f64, 6.5],
                    vel: [1.0, 0.0],
                }];
                let mut f = rasterize_frame(&obs, spec, t as i64).unwrap();
                f.frame_index = t as i64;
                f
            })
            .collect();
        FieldSequence::new(spec.clone(), frames, 0.0).unwrap()
    }

    #[test]
    fn forward_shape_and_nonnegativity() {
        let spec = GridSpec::new([0.0, 0.0], 1.0, 12, 36, 1.0).unwrap();
        let model: Forecaster<f32> = Forecaster::new(ModelConfig::standard(4, 3, 12, 36), 7).unwrap();
        let out = model.predict_fields(&window(&spec, 4), 3).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out.spec, spec);
        assert_eq!(out.frames[0].frame_index, 4);
        assert_eq!(out.t0, 4.0);
        for f in &out.frames {
            for c in &f.cells {
                assert!(c.rho >= 0.0);
                assert!(c.sigma2_v >= 0.0);
            }
        }
    }

    #[test]
    fn rejects_wrong_grid() {
        let spec = GridSpec::new([0.0, 0.0], 1.0, 8, 8, 1.0).unwrap();
        let model: Forecaster<f32> = Forecaster::new(ModelConfig::standard(4, 3, 12, 36), 7).unwrap();
        assert!(model.predict_fields(&window(&spec, 4), 3).is_err());
    }

    #[test]
    fn construction_is_deterministic() {
        let a: Forecaster<f32> = Forecaster::new(ModelConfig::toy(), 3).unwrap();
        let b: Forecaster<f32> = Forecaster::new(ModelConfig::toy(), 3).unwrap();
        for (pa, pb) in a.params().params().iter().zip(b.params().params()) {
            assert_eq!(pa.name, pb.name);
            assert_eq!(pa.value, pb.value);
        }
        // Realized loss weights start at 1 (to f32 parameter precision).
        for w in a.loss_weights().realized() {
            assert!((w - 1.0).abs() < 1e-6);
        }
    }
}
