use ndarray::{Array1, Array2};

/// A trainable tensor with its gradient accumulator.
///
/// Weights are stored in the GEMM-ready `[out, in*k*k]` layout, so `matrix`
/// and `vector` are the only shapes layers need.
#[derive(Debug, Clone)]
pub enum Param {
    Matrix { value: Array2<f32>, grad: Array2<f32> },
    Vector { value: Array1<f32>, grad: Array1<f32> },
}

impl Param {
    pub fn matrix(value: Array2<f32>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Param::Matrix { value, grad }
    }

    pub fn vector(value: Array1<f32>) -> Self {
        let grad = Array1::zeros(value.raw_dim());
        Param::Vector { value, grad }
    }

    pub fn len(&self) -> usize {
        match self {
            Param::Matrix { value, .. } => value.len(),
            Param::Vector { value, .. } => value.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zero_grad(&mut self) {
        match self {
            Param::Matrix { grad, .. } => grad.fill(0.0),
            Param::Vector { grad, .. } => grad.fill(0.0),
        }
    }

    /// Contiguous value/grad slices, in a fixed layout. Used by optimizers
    /// and checkpointing, so visitation order is part of the format.
    pub fn slices_mut(&mut self) -> (&mut [f32], &mut [f32]) {
        match self {
            Param::Matrix { value, grad } => (
                value.as_slice_mut().expect("param is contiguous"),
                grad.as_slice_mut().expect("grad is contiguous"),
            ),
            Param::Vector { value, grad } => (
                value.as_slice_mut().expect("param is contiguous"),
                grad.as_slice_mut().expect("grad is contiguous"),
            ),
        }
    }

    pub fn value_slice(&self) -> &[f32] {
        match self {
            Param::Matrix { value, .. } => value.as_slice().expect("param is contiguous"),
            Param::Vector { value, .. } => value.as_slice().expect("param is contiguous"),
        }
    }
}
