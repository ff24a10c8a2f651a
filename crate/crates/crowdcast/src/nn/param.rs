//! Named trainable parameters and the Adam optimizer.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::tensor::{Real, Tensor};

/// One trainable tensor with its gradient and Adam moment accumulators.
#[derive(Debug, Clone)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
    pub adam_m: Tensor<F>,
    pub adam_v: Tensor<F>,
    pub step: u64,
}

impl<F: Real> Param<F> {
    pub fn new(name: &str, value: Tensor<F>) -> Self {
        let shape = value.shape().to_vec();
        Self {
            name: name.to_string(),
            value,
            grad: Tensor::zeros(&shape),
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
            step: 0,
        }
    }
}

/// Ordered collection of uniquely named parameters. Iteration order is
/// insertion order, which keeps optimizer updates and checkpoints
/// deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<F> {
    params: Vec<Param<F>>,
    by_name: HashMap<String, usize>,
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn insert(&mut self, p: Param<F>) -> Result<()> {
        if self.by_name.contains_key(&p.name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter name {:?}", p.name)));
        }
        self.by_name.insert(p.name.clone(), self.params.len());
        self.params.push(p);
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter {name:?}")))
    }

    pub fn get(&self, name: &str) -> Result<&Param<F>> {
        Ok(&self.params[self.index_of(name)?])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<F>> {
        let i = self.index_of(name)?;
        Ok(&mut self.params[i])
    }

    pub fn params(&self) -> &[Param<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<F>] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(F::zero());
        }
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<G: Real>(&self) -> ParamSet<G> {
        let mut out = ParamSet::new();
        for p in &self.params {
            let mut q = Param::new(&p.name, p.value.cast());
            q.grad = p.grad.cast();
            q.adam_m = p.adam_m.cast();
            q.adam_v = p.adam_v.cast();
            q.step = p.step;
            out.insert(q).expect("names already unique");
        }
        out
    }
}

/// Standard Adam update with bias correction; gradients are zeroed after the
/// step.
pub fn adam_step<F: Real>(set: &mut ParamSet<F>, lr: F, beta1: F, beta2: F, eps: F) {
    let one = F::one();
    for p in set.params_mut() {
        p.step += 1;
        let t = p.step as i32;
        let bc1 = one - beta1.powi(t);
        let bc2 = one - beta2.powi(t);
        for i in 0..p.value.len() {
            let g = p.grad.data()[i];
            let m = beta1 * p.adam_m.data()[i] + (one - beta1) * g;
            let v = beta2 * p.adam_v.data()[i] + (one - beta2) * g * g;
            p.adam_m.data_mut()[i] = m;
            p.adam_v.data_mut()[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            p.value.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        p.grad.fill(F::zero());
    }
}

/// Adam with the defaults used throughout training.
pub fn adam_step_default<F: Real>(set: &mut ParamSet<F>, lr: F) {
    adam_step(set, lr, F::from_f64(0.9), F::from_f64(0.999), F::from_f64(1e-8));
}
