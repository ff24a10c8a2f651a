//! Central finite-difference gradient oracle.
//!
//! The checker never touches the backward pass: it re-evaluates the forward
//! graph at perturbed parameter values, so it independently validates every
//! gradient the tape produces.

use crate::error::Result;

use super::param::ParamSet;
use super::tape::{backward, Tape, Var};

/// Worst-case deviation between analytic and finite-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst: String,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares analytic gradients against central differences for every element
/// of every parameter in `set`.
///
/// `build_loss` must deterministically construct the loss from the parameter
/// values it reads off the set via [`Tape::param`]. An element passes when
/// the relative error is below `rel_tol`, or — for gradient magnitudes under
/// 1e-2, where finite differencing itself loses accuracy — when the absolute
/// error is below `abs_tol`.
pub fn check_gradients<B>(
    set: &mut ParamSet<f64>,
    eps: f64,
    rel_tol: f64,
    abs_tol: f64,
    build_loss: B,
) -> Result<GradCheckReport>
where
    B: Fn(&mut Tape<f64>, &ParamSet<f64>) -> Result<Var>,
{
    set.zero_grads();
    let mut tape = Tape::new();
    let loss = build_loss(&mut tape, set)?;
    backward(&tape, loss, set)?;
    let analytic: Vec<Vec<f64>> = set.params().iter().map(|p| p.grad.data().to_vec()).collect();

    let eval = |set: &ParamSet<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build_loss(&mut tape, set)?;
        Ok(tape.value(loss).item()?)
    };

    let mut report = GradCheckReport {
        checked: 0,
        failures: 0,
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: String::new(),
    };
    for pi in 0..set.len() {
        for ei in 0..set.params()[pi].value.len() {
            let orig = set.params()[pi].value.data()[ei];
            set.params_mut()[pi].value.data_mut()[ei] = orig + eps;
            let plus = eval(set)?;
            set.params_mut()[pi].value.data_mut()[ei] = orig - eps;
            let minus = eval(set)?;
            set.params_mut()[pi].value.data_mut()[ei] = orig;

            let fd = (plus - minus) / (2.0 * eps);
            let an = analytic[pi][ei];
            let abs_err = (fd - an).abs();
            let mag = fd.abs().max(an.abs());
            let rel_err = if mag > 0.0 { abs_err / mag } else { 0.0 };

            let ok = if mag < 1e-2 { abs_err < abs_tol || rel_err < rel_tol } else { rel_err < rel_tol };
            report.checked += 1;
            if !ok {
                report.failures += 1;
            }
            if rel_err > report.max_rel_err && mag >= 1e-2 {
                report.max_rel_err = rel_err;
                report.worst = format!("{}[{}]: fd {fd:.6e} vs analytic {an:.6e}", set.params()[pi].name, ei);
            }
            report.max_abs_err = report.max_abs_err.max(abs_err.min(mag));
        }
    }
    Ok(report)
}
