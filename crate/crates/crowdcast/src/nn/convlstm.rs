//! Convolutional LSTM cell: an LSTM whose gate transformations are 3×3
//! convolutions, so the recurrent state keeps its spatial layout.

use crate::error::Result;

use super::tape::{Tape, Var};
use super::tensor::{chw, Real};

/// Recurrent state `(h, c)`, both `[C, H', W']`.
#[derive(Debug, Clone, Copy)]
pub struct ConvLstmState {
    pub h: Var,
    pub c: Var,
}

/// Tape handles for one cell's parameters: `wx` is `[4C, Cin, 3, 3]`, `wh`
/// is `[4C, C, 3, 3]`, `b` is `[4C]`, gate order (i, f, g, o).
#[derive(Debug, Clone, Copy)]
pub struct ConvLstmVars {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
}

/// One recurrence step without peephole terms:
///
/// i = σ(Wxi∗x + Whi∗h + bi)    f = σ(Wxf∗x + Whf∗h + bf)
/// g = tanh(Wxg∗x + Whg∗h + bg) o = σ(Wxo∗x + Who∗h + bo)
/// c' = f⊙c + i⊙g               h' = o⊙tanh(c')
pub fn convlstm_step<F: Real>(
    tape: &mut Tape<F>,
    x: Var,
    state: ConvLstmState,
    p: ConvLstmVars,
) -> Result<ConvLstmState> {
    let from_x = tape.conv2d(x, p.wx, Some(p.b), 1)?;
    let from_h = tape.conv2d(state.h, p.wh, None, 1)?;
    let pre = tape.add(from_x, from_h)?;

    let (four_c, _, _) = chw(tape.value(pre))?;
    let c = four_c / 4;
    let i_pre = tape.slice_channels(pre, 0, c)?;
    let f_pre = tape.slice_channels(pre, c, 2 * c)?;
    let g_pre = tape.slice_channels(pre, 2 * c, 3 * c)?;
    let o_pre = tape.slice_channels(pre, 3 * c, 4 * c)?;

    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let g = tape.tanh(g_pre);
    let o = tape.sigmoid(o_pre);

    let carried = tape.mul(f, state.c)?;
    let written = tape.mul(i, g)?;
    let c_new = tape.add(carried, written)?;
    let c_act = tape.tanh(c_new);
    let h_new = tape.mul(o, c_act)?;
    Ok(ConvLstmState { h: h_new, c: c_new })
}

/// Offset of the forget-gate block inside the fused `[4C]` bias.
pub fn forget_gate_range(hidden: usize) -> std::ops::Range<usize> {
    hidden..2 * hidden
}
