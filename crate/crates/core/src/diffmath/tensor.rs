use crate::error::{Error, Result};

/// Shape of a dense array: a vector or a row-major matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Shape::Vector(n) => write!(f, "[{n}]"),
            Shape::Matrix(r, c) => write!(f, "[{r}x{c}]"),
        }
    }
}

/// Dense double-precision array, the carrier for every vector and matrix
/// in the network. Matrices are row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    /// Checked vector constructor: rejects NaN/Inf.
    pub fn vector(data: Vec<f64>) -> Result<Tensor> {
        check_finite(&data)?;
        Ok(Tensor {
            shape: Shape::Vector(data.len()),
            data,
        })
    }

    /// Checked matrix constructor: rejects NaN/Inf and length mismatches.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "matrix [{rows}x{cols}] needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Tensor {
            shape: Shape::Matrix(rows, cols),
            data,
        })
    }

    pub fn zeros(shape: Shape) -> Tensor {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn zeros_vector(n: usize) -> Tensor {
        Tensor::zeros(Shape::Vector(n))
    }

    pub fn zeros_matrix(rows: usize, cols: usize) -> Tensor {
        Tensor::zeros(Shape::Matrix(rows, cols))
    }

    /// Unchecked constructor for values produced by the ops themselves.
    pub(crate) fn from_computed(shape: Shape, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(shape.len(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows if matrix, length if vector.
    pub fn rows(&self) -> usize {
        match self.shape {
            Shape::Vector(n) => n,
            Shape::Matrix(r, _) => r,
        }
    }

    /// Cols if matrix, 1 if vector.
    pub fn cols(&self) -> usize {
        match self.shape {
            Shape::Vector(_) => 1,
            Shape::Matrix(_, c) => c,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, i: usize) -> f64 {
        self.data[i]
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert!(matches!(self.shape, Shape::Matrix(..)));
        self.data[r * self.cols() + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    /// Elementwise add-assign; shapes must agree.
    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Add `scale * other` into self.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) {
        assert_eq!(self.shape, other.shape, "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn expect_vector(&self, what: &str) -> Result<usize> {
        match self.shape {
            Shape::Vector(n) => Ok(n),
            s => Err(Error::ShapeMismatch(format!("{what}: expected vector, got {s}"))),
        }
    }
}

fn check_finite(data: &[f64]) -> Result<()> {
    for (i, v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("value {v} at index {i}")));
        }
    }
    Ok(())
}

/// A learned tensor together with its gradient accumulator. Gradients add
/// up across backward calls until `zero_grad`.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Param {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }
}

/// Anything holding learned parameters exposes them in a fixed,
/// documented order. That single order drives initialization, the
/// optimizer state layout, model serialization, and the
/// finite-difference checks.
pub trait HasParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grads(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.value.len());
        n
    }
}
