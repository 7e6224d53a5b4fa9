//! Dense row-major tensors. The engine works in f64 so gradient checks at
//! 1e-4 relative tolerance are meaningful; storage on disk is f32.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dense numeric array with shape, values, and an optional gradient buffer.
///
/// `grad` is present iff `requires_grad` and is filled by accumulating
/// tape gradients after a backward pass; accumulation across batches sums.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                lhs: shape,
                rhs: vec![values.len()],
            });
        }
        Ok(Tensor {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    /// Mark as a learnable parameter: allocates the gradient buffer.
    pub fn into_param(mut self) -> Self {
        self.requires_grad = true;
        self.grad = Some(vec![0.0; self.values.len()]);
        self
    }

    /// Xavier-uniform initialized parameter, U(-a, a) with a = sqrt(6/(fan_in+fan_out)).
    pub fn xavier(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let numel: usize = shape.iter().product();
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let values = (0..numel).map(|_| rng.random_range(-a..a)).collect();
        Tensor {
            shape,
            values,
            requires_grad: true,
            grad: Some(vec![0.0; numel]),
        }
    }

    /// Zero-initialized parameter (biases).
    pub fn zeros_param(shape: Vec<usize>) -> Self {
        Tensor::zeros(shape).into_param()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    /// Add `delta` into the gradient buffer. Buffer must exist and match.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        let g = self
            .grad
            .as_mut()
            .expect("accumulate_grad on a non-parameter tensor");
        debug_assert_eq!(g.len(), delta.len());
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    /// Row-major element count check plus 2-D accessors used all over the
    /// sequence code: rows = shape[0], cols = shape[1].
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Build a [rows, cols] tensor from nested rows; all rows must have equal length.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
    let r = rows.len();
    let c = rows.first().map(|x| x.len()).unwrap_or(0);
    let mut values = Vec::with_capacity(r * c);
    for row in rows {
        if row.len() != c {
            return Err(Error::ShapeMismatch {
                op: "from_rows",
                lhs: vec![r, c],
                rhs: vec![row.len()],
            });
        }
        values.extend_from_slice(row);
    }
    Tensor::new(vec![r, c], values)
}
