//! Minimal dense-tensor math with reverse-mode automatic differentiation:
//! exactly the operators the forecaster needs (strided convolution,
//! transposed convolution, a convolutional LSTM cell, elementwise
//! nonlinearities) plus Adam and checkpoint IO.

pub mod checkpoint;
pub mod convlstm;
pub mod gradcheck;
pub mod kernels;
pub mod param;
pub mod tape;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use convlstm::{convlstm_step, ConvLstmState, ConvLstmVars};
pub use param::{adam_step, adam_step_default, Param, ParamSet};
pub use tape::{backward, Tape, Var};
pub use tensor::{Real, Tensor};

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Every differentiable op composed into one graph, checked against
    /// central finite differences.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (cin, cmid, h, w) = (2, 3, 4, 6);
        let x_const = rand_tensor(&mut rng, &[cin, h, w]);
        let mask = rand_tensor(&mut rng, &[cmid, h / 2, w / 2]);

        let mut set = ParamSet::new();
        set.insert(Param::new("conv.w", rand_tensor(&mut rng, &[cmid, cin, 3, 3]))).unwrap();
        set.insert(Param::new("conv.b", rand_tensor(&mut rng, &[cmid]))).unwrap();
        set.insert(Param::new("dec.w", rand_tensor(&mut rng, &[cmid, cin, 4, 4]))).unwrap();
        set.insert(Param::new("dec.b", rand_tensor(&mut rng, &[cin]))).unwrap();
        set.insert(Param::new("theta", Tensor::scalar(0.3))).unwrap();

        let report = gradcheck::check_gradients(&mut set, 1e-3, 1e-3, 1e-5, |tape, set| {
            let x = tape.constant(x_const.clone());
            let w = tape.param(set, "conv.w")?;
            let b = tape.param(set, "conv.b")?;
            let dw = tape.param(set, "dec.w")?;
            let db = tape.param(set, "dec.b")?;
            let theta = tape.param(set, "theta")?;

            let y = tape.conv2d(x, w, Some(b), 2)?;
            let y = tape.leaky_relu(y, 0.1);
            let masked = tape.mul_const(y, mask.clone())?;
            let up = tape.conv_transpose2d(masked, dw, Some(db), 2)?;
            let sp = tape.softplus(up);
            let shifted = tape.add_scalar(sp, -0.4);
            let hb = tape.huber(shifted, 1.0);
            let tot = tape.sum(hb);

            let wgt = tape.softplus(theta);
            let wgt = tape.add_scalar(wgt, 0.01);
            let scaled = tape.scale(tot, wgt)?;

            // exercise sub, mul, sigmoid, tanh, slice on a second branch
            let s1 = tape.slice_channels(y, 0, 2)?;
            let s2 = tape.slice_channels(y, 1, 3)?;
            let d = tape.sub(s1, s2)?;
            let sg = tape.sigmoid(d);
            let th = tape.tanh(d);
            let pr = tape.mul(sg, th)?;
            let pr = tape.scale_const(pr, 0.7);
            let extra = tape.sum(pr);

            tape.add(scaled, extra)
        })
        .unwrap();
        assert!(
            report.passed(),
            "{} of {} gradient entries failed; worst {}",
            report.failures,
            report.checked,
            report.worst
        );
    }

    #[test]
    fn convlstm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (cin, c, h, w) = (2, 2, 4, 4);
        let x0 = rand_tensor(&mut rng, &[cin, h, w]);
        let x1 = rand_tensor(&mut rng, &[cin, h, w]);

        let mut set = ParamSet::new();
        let scale = |mut t: Tensor<f64>| {
            for v in t.data_mut() {
                *v *= 0.4;
            }
            t
        };
        set.insert(Param::new("wx", scale(rand_tensor(&mut rng, &[4 * c, cin, 3, 3])))).unwrap();
        set.insert(Param::new("wh", scale(rand_tensor(&mut rng, &[4 * c, c, 3, 3])))).unwrap();
        set.insert(Param::new("b", scale(rand_tensor(&mut rng, &[4 * c])))).unwrap();

        let report = gradcheck::check_gradients(&mut set, 1e-3, 1e-3, 1e-5, |tape, set| {
            let p = ConvLstmVars {
                wx: tape.param(set, "wx")?,
                wh: tape.param(set, "wh")?,
                b: tape.param(set, "b")?,
            };
            let zero = tape.constant(Tensor::zeros(&[c, h, w]));
            let mut state = ConvLstmState { h: zero, c: zero };
            for xv in [x0.clone(), x1.clone()] {
                let x = tape.constant(xv);
                state = convlstm_step(tape, x, state, p)?;
            }
            Ok(tape.sum(state.h))
        })
        .unwrap();
        assert!(
            report.passed(),
            "{} of {} gradient entries failed; worst {}",
            report.failures,
            report.checked,
            report.worst
        );
    }

    #[test]
    fn training_step_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut set: ParamSet<f32> = ParamSet::new();
            let data: Vec<f32> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            set.insert(Param::new("w", Tensor::from_vec(&[12], data).unwrap())).unwrap();
            for _ in 0..20 {
                let mut tape = Tape::new();
                let w = tape.param(&set, "w").unwrap();
                let sq = tape.mul(w, w).unwrap();
                let loss = tape.sum(sq);
                backward(&tape, loss, &mut set).unwrap();
                adam_step_default(&mut set, 1e-2);
            }
            set.get("w").unwrap().value.data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
