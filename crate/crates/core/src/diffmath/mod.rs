//! Deterministic dense numerical kernel.
//!
//! Everything runs in double precision with fixed left-to-right
//! accumulation, so identical inputs give bitwise identical outputs.
//! Each primitive has an explicit backward; `gradcheck` verifies them
//! all against the [`ops::finite_diff_grad`] oracle.

mod ops;
mod rng;
mod tensor;

pub use ops::*;
pub use rng::Rng;
pub use tensor::{HasParams, Param, Shape, Tensor};

/// Draw a weight matrix from uniform(-k, k) with k = 1/sqrt(fan_in).
/// The paper-side layers never state an init, so this is the documented
/// choice for all newly trained parameters.
pub fn init_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let k = 1.0 / (cols as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform(-k, k)).collect();
    Tensor::matrix(rows, cols, data).expect("init values are finite")
}

/// Draw a weight vector from uniform(-k, k) with k = 1/sqrt(fan_in).
pub fn init_vector(rng: &mut Rng, n: usize, fan_in: usize) -> Tensor {
    let k = 1.0 / (fan_in as f64).sqrt();
    let data = (0..n).map(|_| rng.uniform(-k, k)).collect();
    Tensor::vector(data).expect("init values are finite")
}
