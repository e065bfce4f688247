use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::{Graph, NdError, Result, Tensor, Var};

/// Named trainable tensors with per-tensor learning-rate multipliers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    lr_scale: Vec<f64>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), lr_scale: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor.with_grad());
        self.lr_scale.push(1.0);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.tensors[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn set_lr_scale(&mut self, scale: f64) {
        self.lr_scale.iter_mut().for_each(|s| *s = scale);
    }

    pub fn lr_scale(&self, i: usize) -> f64 {
        self.lr_scale[i]
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Inserts every tensor as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| g.param(t)).collect()
    }

    /// Inserts every tensor as a constant (frozen) leaf.
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| g.constant(Tensor::new(t.shape().to_vec(), t.data().to_vec()).unwrap())).collect()
    }

    /// Adds the graph gradients of `vars` into the parameters' buffers.
    pub fn collect_grads(&mut self, g: &Graph<T>, vars: &[Var]) {
        for (t, v) in self.tensors.iter_mut().zip(vars) {
            match g.grad(*v) {
                Some(d) => t.accumulate_grad(d),
                None => t.accumulate_grad(&vec![T::zero(); t.numel()]),
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Bitwise snapshot of every value, for freezing checks.
    pub fn fingerprint(&self) -> Vec<u64> {
        self.tensors.iter().flat_map(|t| t.data().iter().map(|v| v.to_f64_lossy().to_bits())).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adam moments for one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step_count: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<T>> = (0..params.len()).map(|i| vec![T::zero(); params.get(i).numel()]).collect();
        Self { step_count: 0, first_moment: zeros.clone(), second_moment: zeros, config }
    }

    /// One bias-corrected Adam update. Gradients are left in place.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(NdError::Precondition(format!(
                "adam: state tracks {} tensors, parameter set has {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        if let Some(i) = (0..params.len()).find(|&i| params.get(i).grad().is_none()) {
            return Err(NdError::MissingGrad(params.name(i).to_string()));
        }
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as f64;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powf(t));
        let bc2 = T::lit(1.0 - c.beta2.powf(t));
        let eps = T::lit(c.epsilon);
        for i in 0..params.len() {
            let lr = T::lit(c.learning_rate * params.lr_scale(i));
            let p = params.get_mut(i);
            let grad = p.grad().expect("checked above").to_vec();
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.push("w", Tensor::scalar(value));
        p.get_mut(0).accumulate_grad(&[grad]);
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(1.5, 0.0);
        let mut adam = AdamState::new(&p, AdamConfig { learning_rate: 0.1, ..Default::default() });
        adam.step(&mut p).unwrap();
        assert_eq!(p.get(0).item(), 1.5);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = single(0.0, 1.0);
        let mut adam = AdamState::new(&p, AdamConfig { learning_rate: 0.1, ..Default::default() });
        adam.step(&mut p).unwrap();
        // m_hat = 1, v_hat = 1 -> delta = lr / (1 + eps)
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p.get(0).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_is_strictly_monotone() {
        let mut p = single(0.0, 1.0);
        let mut adam = AdamState::new(&p, AdamConfig { learning_rate: 0.1, ..Default::default() });
        let mut prev = p.get(0).item();
        for _ in 0..100 {
            adam.step(&mut p).unwrap();
            let now = p.get(0).item();
            assert!(now < prev);
            prev = now;
        }
        assert_eq!(adam.step_count, 100);
    }

    #[test]
    fn missing_grad_names_parameter() {
        let mut p: ParamSet<f64> = ParamSet::new();
        p.push("conv.weight", Tensor::zeros(&[2]));
        let mut adam = AdamState::new(&p, AdamConfig::default());
        let err = adam.step(&mut p).unwrap_err();
        assert!(err.to_string().contains("conv.weight"));
    }
}
