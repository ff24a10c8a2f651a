//! Reverse-mode automatic differentiation over tensors.
//!
//! Operations are recorded onto a [`Tape`] in execution order; [`backward`]
//! traverses the records in exact reverse order, accumulating gradient
//! tensors per node and finally into the parameter set.

use crate::error::{Error, Result};

use super::kernels::{self, ConvDims};
use super::param::ParamSet;
use super::tensor::{chw, Real, Tensor};

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, dims: ConvDims },
    ConvT2d { x: Var, w: Var, b: Option<Var>, dims: ConvDims },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Broadcast multiply by a scalar node.
    Scale { x: Var, s: Var },
    /// Elementwise multiply by a constant tensor (weights, masks).
    MulConst { x: Var, c: Tensor<F> },
    /// Multiply by a plain constant.
    ScaleConst { x: Var, c: F },
    /// Add a plain constant.
    AddScalar { x: Var },
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu { x: Var, alpha: F },
    Softplus(Var),
    /// Elementwise smooth-L1 with the given transition point.
    Huber { x: Var, delta: F },
    /// Reduce all elements to a single scalar.
    Sum(Var),
    /// Channel sub-range of a `[C, H, W]` tensor.
    Slice { x: Var, from: usize },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
}

/// Recorded computation graph.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
    /// Leaf nodes bound to parameters: (node index, parameter index).
    param_leaves: Vec<(usize, usize)>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<F: Real>(x: F) -> F {
    let one = F::one();
    if x >= F::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

fn softplus<F: Real>(x: F) -> F {
    // ln(1 + e^x), stable on both tails.
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), param_leaves: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant (gradients flow into it but go nowhere).
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a leaf bound to `set[name]`; gradients accumulate into the
    /// parameter on [`backward`].
    pub fn param(&mut self, set: &ParamSet<F>, name: &str) -> Result<Var> {
        let idx = set.index_of(name)?;
        let v = self.push(set.params()[idx].value.clone(), Op::Leaf);
        self.param_leaves.push((v.0, idx));
        Ok(v)
    }

    fn binary_same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.value(a).shape()),
                got: format!("{:?}", self.value(b).shape()),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b)?;
        let mut out = self.value(a).clone();
        for (o, &x) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o += x;
        }
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b)?;
        let mut out = self.value(a).clone();
        for (o, &x) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o -= x;
        }
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b)?;
        let mut out = self.value(a).clone();
        for (o, &x) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= x;
        }
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Broadcast multiply by a one-element node.
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).item()?;
        let out = self.value(x).map(|v| v * sv);
        Ok(self.push(out, Op::Scale { x, s }))
    }

    pub fn mul_const(&mut self, x: Var, c: Tensor<F>) -> Result<Var> {
        if self.value(x).shape() != c.shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.value(x).shape()),
                got: format!("{:?}", c.shape()),
            });
        }
        let mut out = self.value(x).clone();
        for (o, &k) in out.data_mut().iter_mut().zip(c.data()) {
            *o *= k;
        }
        Ok(self.push(out, Op::MulConst { x, c }))
    }

    pub fn scale_const(&mut self, x: Var, c: F) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::ScaleConst { x, c })
    }

    pub fn add_scalar(&mut self, x: Var, c: F) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        self.push(out, Op::Tanh(x))
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: F) -> Var {
        let out = self.value(x).map(|v| if v > F::zero() { v } else { alpha * v });
        self.push(out, Op::LeakyRelu { x, alpha })
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(softplus);
        self.push(out, Op::Softplus(x))
    }

    /// Elementwise smooth-L1: ½x² for |x| < δ, δ(|x| − ½δ) beyond.
    pub fn huber(&mut self, x: Var, delta: F) -> Var {
        let half = F::from_f64(0.5);
        let out = self.value(x).map(|v| {
            if v.abs() < delta {
                half * v * v
            } else {
                delta * (v.abs() - half * delta)
            }
        });
        self.push(out, Op::Huber { x, delta })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: F = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Channels `[from, to)` of a `[C, H, W]` tensor.
    pub fn slice_channels(&mut self, x: Var, from: usize, to: usize) -> Result<Var> {
        let (c, h, w) = chw(self.value(x))?;
        if from >= to || to > c {
            return Err(Error::ShapeMismatch {
                expected: format!("channel range within 0..{c}"),
                got: format!("{from}..{to}"),
            });
        }
        let plane = h * w;
        let data = self.value(x).data()[from * plane..to * plane].to_vec();
        let out = Tensor::from_vec(&[to - from, h, w], data)?;
        Ok(self.push(out, Op::Slice { x, from }))
    }

    /// 3×3 convolution, zero padding 1, stride 1 or 2. `w` is
    /// `[Cout, Cin, 3, 3]`, optional bias `[Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let (cin, ih, iw) = chw(self.value(x))?;
        let ws = self.value(w).shape().to_vec();
        let [cout, wcin, kh, kw] = ws[..] else {
            return Err(Error::ShapeMismatch { expected: "[Cout, Cin, 3, 3] weight".into(), got: format!("{ws:?}") });
        };
        if wcin != cin || kh != 3 || kw != 3 {
            return Err(Error::ShapeMismatch {
                expected: format!("[Cout, {cin}, 3, 3] weight"),
                got: format!("{ws:?}"),
            });
        }
        if !(stride == 1 || stride == 2) {
            return Err(Error::InvalidConfig(format!("conv stride must be 1 or 2, got {stride}")));
        }
        if stride == 2 && (ih % 2 != 0 || iw % 2 != 0) {
            return Err(Error::ShapeMismatch {
                expected: "even spatial dims for stride 2".into(),
                got: format!("{ih}x{iw}"),
            });
        }
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(Error::ShapeMismatch {
                    expected: format!("[{cout}] bias"),
                    got: format!("{:?}", self.value(b).shape()),
                });
            }
        }
        let dims = ConvDims::conv(cin, cout, 3, ih, iw, stride, 1);
        let mut out = Tensor::zeros(&[cout, dims.oh, dims.ow]);
        kernels::conv2d_fwd(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &dims,
            out.data_mut(),
        );
        Ok(self.push(out, Op::Conv2d { x, w, b, dims }))
    }

    /// 4×4 transposed convolution, padding 1, stride 2 (exact ×2 upsampling).
    /// `w` is `[Cin, Cout, 4, 4]`, optional bias `[Cout]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let (cin, ih, iw) = chw(self.value(x))?;
        let ws = self.value(w).shape().to_vec();
        let [wcin, cout, kh, kw] = ws[..] else {
            return Err(Error::ShapeMismatch { expected: "[Cin, Cout, 4, 4] weight".into(), got: format!("{ws:?}") });
        };
        if wcin != cin || kh != 4 || kw != 4 {
            return Err(Error::ShapeMismatch {
                expected: format!("[{cin}, Cout, 4, 4] weight"),
                got: format!("{ws:?}"),
            });
        }
        if stride != 2 {
            return Err(Error::InvalidConfig(format!("conv_transpose stride must be 2, got {stride}")));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(Error::ShapeMismatch {
                    expected: format!("[{cout}] bias"),
                    got: format!("{:?}", self.value(b).shape()),
                });
            }
        }
        let dims = ConvDims::conv_transpose(cin, cout, 4, ih, iw, stride, 1);
        let mut out = Tensor::zeros(&[cout, dims.oh, dims.ow]);
        kernels::convt2d_fwd(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &dims,
            out.data_mut(),
        );
        Ok(self.push(out, Op::ConvT2d { x, w, b, dims }))
    }
}

fn accumulate<F: Real>(slot: &mut Option<Tensor<F>>, shape: &[usize], f: impl FnOnce(&mut Tensor<F>)) {
    let g = slot.get_or_insert_with(|| Tensor::zeros(shape));
    f(g);
}

/// Populates parameter gradients with d(loss)/d(param) for every parameter
/// leaf on the tape. Parameters not reachable from the loss keep their
/// (zero-initialized) gradients. The loss must be a one-element tensor.
pub fn backward<F: Real>(tape: &Tape<F>, loss: Var, params: &mut ParamSet<F>) -> Result<()> {
    if tape.value(loss).len() != 1 {
        return Err(Error::ShapeMismatch {
            expected: "scalar loss".into(),
            got: format!("{:?}", tape.value(loss).shape()),
        });
    }
    let mut grads: Vec<Option<Tensor<F>>> = (0..tape.nodes.len()).map(|_| None).collect();
    grads[loss.0] = Some(Tensor::scalar(F::one()));

    for idx in (0..=loss.0).rev() {
        let Some(g) = grads[idx].take() else {
            continue;
        };
        let node = &tape.nodes[idx];
        match &node.op {
            Op::Leaf => {
                grads[idx] = Some(g);
                continue;
            }
            Op::Add(a, b) => {
                let shape = tape.value(*a).shape().to_vec();
                accumulate(&mut grads[a.0], &shape, |t| {
                    for (d, &s) in t.data_mut().iter_mut().zip(g.data()) {
                        *d += s;
                    }
                });
                accumulate(&mut grads[b.0], &shape, |t| {
                    for (d, &s) in t.data_mut().iter_mut().zip(g.data()) {
                        *d += s;
                    }
                });
            }
            Op::Sub(a, b) => {
                let shape = tape.value(*a).shape().to_vec();
                accumulate(&mut grads[a.0], &shape, |t| {
                    for (d, &s) in t.data_mut().iter_mut().zip(g.data()) {
                        *d += s;
                    }
                });
                accumulate(&mut grads[b.0], &shape, |t| {
                    for (d, &s) in t.data_mut().iter_mut().zip(g.data()) {
                        *d -= s;
                    }
                });
            }
            Op::Mul(a, b) => {
                let shape = tape.value(*a).shape().to_vec();
                let (va, vb) = (tape.value(*a), tape.value(*b));
                accumulate(&mut grads[a.0], &shape, |t| {
                    for ((d, &s), &v) in t.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                        *d += s * v;
                    }
                });
                accumulate(&mut grads[b.0], &shape, |t| {
                    for ((d, &s), &v) in t.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *d += s * v;
                    }
                });
            }
            Op::Scale { x, s } => {
                let sv = tape.value(*s).item()?;
                let vx = tape.value(*x);
                accumulate(&mut grads[x.0], vx.shape(), |t| {
                    for (d, &gv) in t.data_mut().iter_mut().zip(g.data()) {
                        *d += gv * sv;
                    }
                });
                let ds: F = g.data().iter().zip(vx.data()).map(|(&gv, &xv)| gv * xv).sum();
                accumulate(&mut grads[s.0], &[1], |t| t.data_mut()[0] += ds);
            }
            Op::MulConst { x, c } => {
                accumulate(&mut grads[x.0], c.shape(), |t| {
                    for ((d, &s), &k) in t.data_mut().iter_mut().zip(g.data()).zip(c.data()) {
                        *d += s * k;
                    }
                });
            }
            Op::ScaleConst { x, c } => {
                let shape = tape.value(*x).shape().to_vec();
                accumulate(&mut grads[x.0], &shape, |t| {
                    for (d, &s) in t.data_mut().iter_mut().zip(g.data()) {
                        *d += s * *c;
                    }
                });
            }
            Op::AddScalar { x } => {
                let shape = tape.value(*x).shape().to_vec();
                accumulate(&mut grads[x.0], &shape, |t| {
                    for (d, &s) in t.data_mut().iter_mut().zip(g.data()) {
                        *d += s;
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                accumulate(&mut grads[x.0], y.shape(), |t| {
                    for ((d, &s), &yv) in t.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d += s * yv * (F::one() - yv);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = &node.value;
                accumulate(&mut grads[x.0], y.shape(), |t| {
                    for ((d, &s), &yv) in t.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d += s * (F::one() - yv * yv);
                    }
                });
            }
            Op::LeakyRelu { x, alpha } => {
                let vx = tape.value(*x);
                accumulate(&mut grads[x.0], vx.shape(), |t| {
                    for ((d, &s), &xv) in t.data_mut().iter_mut().zip(g.data()).zip(vx.data()) {
                        *d += s * if xv > F::zero() { F::one() } else { *alpha };
                    }
                });
            }
            Op::Softplus(x) => {
                let vx = tape.value(*x);
                accumulate(&mut grads[x.0], vx.shape(), |t| {
                    for ((d, &s), &xv) in t.data_mut().iter_mut().zip(g.data()).zip(vx.data()) {
                        *d += s * sigmoid(xv);
                    }
                });
            }
            Op::Huber { x, delta } => {
                let vx = tape.value(*x);
                accumulate(&mut grads[x.0], vx.shape(), |t| {
                    for ((d, &s), &xv) in t.data_mut().iter_mut().zip(g.data()).zip(vx.data()) {
                        // d/dx: x inside the quadratic region, ±δ beyond.
                        *d += s * xv.max(-*delta).min(*delta);
                    }
                });
            }
            Op::Sum(x) => {
                let gv = g.item()?;
                let shape = tape.value(*x).shape().to_vec();
                accumulate(&mut grads[x.0], &shape, |t| {
                    for d in t.data_mut() {
                        *d += gv;
                    }
                });
            }
            Op::Slice { x, from } => {
                let vx = tape.value(*x);
                let (_, h, w) = chw(vx)?;
                let plane = h * w;
                let start = from * plane;
                accumulate(&mut grads[x.0], vx.shape(), |t| {
                    for (d, &s) in t.data_mut()[start..start + g.len()].iter_mut().zip(g.data()) {
                        *d += s;
                    }
                });
            }
            Op::Conv2d { x, w, b, dims } => {
                let (vx, vw) = (tape.value(*x), tape.value(*w));
                accumulate(&mut grads[x.0], vx.shape(), |t| {
                    kernels::conv2d_bwd_input(g.data(), vw.data(), dims, t.data_mut());
                });
                accumulate(&mut grads[w.0], vw.shape(), |t| {
                    kernels::conv2d_bwd_weight(g.data(), vx.data(), dims, t.data_mut());
                });
                if let Some(b) = b {
                    accumulate(&mut grads[b.0], &[dims.cout], |t| {
                        kernels::conv2d_bwd_bias(g.data(), dims.oh * dims.ow, t.data_mut());
                    });
                }
            }
            Op::ConvT2d { x, w, b, dims } => {
                let (vx, vw) = (tape.value(*x), tape.value(*w));
                accumulate(&mut grads[x.0], vx.shape(), |t| {
                    kernels::convt2d_bwd_input(g.data(), vw.data(), dims, t.data_mut());
                });
                accumulate(&mut grads[w.0], vw.shape(), |t| {
                    kernels::convt2d_bwd_weight(g.data(), vx.data(), dims, t.data_mut());
                });
                if let Some(b) = b {
                    accumulate(&mut grads[b.0], &[dims.cout], |t| {
                        kernels::conv2d_bwd_bias(g.data(), dims.oh * dims.ow, t.data_mut());
                    });
                }
            }
        }
    }

    for &(node, pidx) in &tape.param_leaves {
        if let Some(g) = &grads[node] {
            let p = &mut params.params_mut()[pidx];
            for (d, &s) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *d += s;
            }
        }
    }
    Ok(())
}
