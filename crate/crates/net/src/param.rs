//! Named parameter storage shared by every layer.

use ndarray::{ArrayD, IxDyn};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: &'static str,
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
    /// False for running statistics, which are saved but not optimized.
    pub trainable: bool,
}

impl Param {
    pub fn new(name: &'static str, value: ArrayD<f64>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self {
            name,
            value,
            grad,
            trainable: true,
        }
    }

    pub fn zeros(name: &'static str, shape: &[usize]) -> Self {
        Self::new(name, ArrayD::zeros(IxDyn(shape)))
    }

    pub fn buffer(name: &'static str, value: ArrayD<f64>) -> Self {
        Self {
            trainable: false,
            ..Self::new(name, value)
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn values(&self) -> &[f64] {
        self.value.as_slice().expect("parameters are stored contiguously")
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.value.as_slice_mut().expect("parameters are stored contiguously")
    }

    pub fn grads(&self) -> &[f64] {
        self.grad.as_slice().expect("gradients are stored contiguously")
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        self.grad.as_slice_mut().expect("gradients are stored contiguously")
    }
}
