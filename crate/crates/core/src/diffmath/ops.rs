//! Forward/backward primitives.
//!
//! Every op comes in a pair: `op` computes the forward value, and
//! `op_backward` takes the gradient of a scalar loss w.r.t. the op's
//! output and accumulates gradients into the inputs. Accumulation is
//! always `+=`, so ungated repeated backward calls add up. All
//! reductions run left-to-right, which makes results reproducible
//! bit-for-bit across runs.

use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

/// Clamp floor for log arguments; caps the NLL at -ln(1e-12) ~ 27.63.
pub const LOG_EPS: f64 = 1e-12;

/// `W x (+ b)` for a matrix `W [m x n]` and vector `x [n]`.
pub fn affine(w: &Tensor, x: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let n = x.expect_vector("affine input")?;
    let (rows, cols) = match w.shape() {
        Shape::Matrix(r, c) => (r, c),
        s => return Err(Error::ShapeMismatch(format!("affine weight: expected matrix, got {s}"))),
    };
    if cols != n {
        return Err(Error::ShapeMismatch(format!(
            "affine: weight {} vs input [{n}]",
            w.shape()
        )));
    }
    if let Some(b) = b {
        if b.expect_vector("affine bias")? != rows {
            return Err(Error::ShapeMismatch(format!(
                "affine: bias {} vs weight {}",
                b.shape(),
                w.shape()
            )));
        }
    }
    let mut out = vec![0.0; rows];
    let wd = w.as_slice();
    let xd = x.as_slice();
    for r in 0..rows {
        let mut acc = match b {
            Some(b) => b.at(r),
            None => 0.0,
        };
        let row = &wd[r * cols..(r + 1) * cols];
        for c in 0..cols {
            acc += row[c] * xd[c];
        }
        out[r] = acc;
    }
    Ok(Tensor::from_computed(Shape::Vector(rows), out))
}

/// Backward of [`affine`]. `grad_x` is optional because data inputs do
/// not need gradients.
pub fn affine_backward(
    w: &Tensor,
    x: &Tensor,
    grad_out: &Tensor,
    grad_w: &mut Tensor,
    grad_x: Option<&mut Tensor>,
    grad_b: Option<&mut Tensor>,
) {
    let (rows, cols) = (w.rows(), w.cols());
    debug_assert_eq!(grad_out.len(), rows);
    debug_assert_eq!(x.len(), cols);
    let g = grad_out.as_slice();
    let xd = x.as_slice();
    {
        let gw = grad_w.as_mut_slice();
        for r in 0..rows {
            let row = &mut gw[r * cols..(r + 1) * cols];
            for c in 0..cols {
                row[c] += g[r] * xd[c];
            }
        }
    }
    if let Some(gx) = grad_x {
        let wd = w.as_slice();
        let gx = gx.as_mut_slice();
        for r in 0..rows {
            let row = &wd[r * cols..(r + 1) * cols];
            for c in 0..cols {
                gx[c] += row[c] * g[r];
            }
        }
    }
    if let Some(gb) = grad_b {
        let gb = gb.as_mut_slice();
        for r in 0..rows {
            gb[r] += g[r];
        }
    }
}

/// Elementwise tanh.
pub fn tanh_map(x: &Tensor) -> Tensor {
    let data = x.as_slice().iter().map(|v| v.tanh()).collect();
    Tensor::from_computed(x.shape(), data)
}

/// Backward of tanh from its output `y`: dx = (1 - y^2) dy.
pub fn tanh_backward(y: &Tensor, grad_out: &Tensor, grad_x: &mut Tensor) {
    let gx = grad_x.as_mut_slice();
    for ((g, y), gx) in grad_out.as_slice().iter().zip(y.as_slice()).zip(gx) {
        *gx += g * (1.0 - y * y);
    }
}

/// Elementwise logistic sigmoid.
pub fn sigmoid_map(x: &Tensor) -> Tensor {
    let data = x.as_slice().iter().map(|v| sigmoid(*v)).collect();
    Tensor::from_computed(x.shape(), data)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Backward of sigmoid from its output `y`: dx = y (1 - y) dy.
pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor, grad_x: &mut Tensor) {
    let gx = grad_x.as_mut_slice();
    for ((g, y), gx) in grad_out.as_slice().iter().zip(y.as_slice()).zip(gx) {
        *gx += g * y * (1.0 - y);
    }
}

/// Max-shifted softmax over a vector; the output sums to 1 within 1e-12.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    let n = x.expect_vector("softmax input")?;
    if n == 0 {
        return Err(Error::InvalidArgument("softmax: empty vector".into()));
    }
    let xd = x.as_slice();
    let mut max = xd[0];
    for v in &xd[1..] {
        if *v > max {
            max = *v;
        }
    }
    let mut out = vec![0.0; n];
    let mut sum = 0.0;
    for i in 0..n {
        let e = (xd[i] - max).exp();
        out[i] = e;
        sum += e;
    }
    for v in &mut out {
        *v /= sum;
    }
    Ok(Tensor::from_computed(Shape::Vector(n), out))
}

/// Backward of softmax from its output `y`:
/// dx_i = y_i (dy_i - sum_j dy_j y_j).
pub fn softmax_backward(y: &Tensor, grad_out: &Tensor, grad_x: &mut Tensor) {
    let yd = y.as_slice();
    let g = grad_out.as_slice();
    let mut dot = 0.0;
    for i in 0..yd.len() {
        dot += g[i] * yd[i];
    }
    let gx = grad_x.as_mut_slice();
    for i in 0..yd.len() {
        gx[i] += yd[i] * (g[i] - dot);
    }
}

/// Concatenate vectors in order.
pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument("concat: no parts".into()));
    }
    let mut data = Vec::new();
    for p in parts {
        p.expect_vector("concat part")?;
        data.extend_from_slice(p.as_slice());
    }
    let n = data.len();
    Ok(Tensor::from_computed(Shape::Vector(n), data))
}

/// Backward of [`concat`]: split the output gradient at the same offsets.
pub fn concat_split(grad_out: &Tensor, lens: &[usize]) -> Vec<Tensor> {
    debug_assert_eq!(lens.iter().sum::<usize>(), grad_out.len());
    let g = grad_out.as_slice();
    let mut parts = Vec::with_capacity(lens.len());
    let mut off = 0;
    for &len in lens {
        parts.push(Tensor::from_computed(
            Shape::Vector(len),
            g[off..off + len].to_vec(),
        ));
        off += len;
    }
    parts
}

/// Attention-weighted sum of rows: `sum_i alpha_i f_i`, accumulated
/// left-to-right.
pub fn weighted_sum(rows: &[Tensor], alpha: &Tensor) -> Result<Tensor> {
    let n = alpha.expect_vector("weighted_sum alpha")?;
    if rows.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "weighted_sum: {} rows vs alpha [{n}]",
            rows.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("weighted_sum: no rows".into()));
    }
    let d = rows[0].expect_vector("weighted_sum row")?;
    let mut out = vec![0.0; d];
    for (row, a) in rows.iter().zip(alpha.as_slice()) {
        if row.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "weighted_sum: row {} vs [{d}]",
                row.shape()
            )));
        }
        for (o, r) in out.iter_mut().zip(row.as_slice()) {
            *o += a * r;
        }
    }
    Ok(Tensor::from_computed(Shape::Vector(d), out))
}

/// Backward of [`weighted_sum`] into both the rows and the weights.
pub fn weighted_sum_backward(
    rows: &[Tensor],
    alpha: &Tensor,
    grad_out: &Tensor,
    row_grads: &mut [Tensor],
    grad_alpha: Option<&mut Tensor>,
) {
    debug_assert_eq!(rows.len(), row_grads.len());
    for ((row_grad, a), row) in row_grads.iter_mut().zip(alpha.as_slice()).zip(rows) {
        row_grad.add_scaled(grad_out, *a);
        let _ = row;
    }
    if let Some(ga) = grad_alpha {
        let ga = ga.as_mut_slice();
        for (i, row) in rows.iter().enumerate() {
            let mut dot = 0.0;
            for (g, r) in grad_out.as_slice().iter().zip(row.as_slice()) {
                dot += g * r;
            }
            ga[i] += dot;
        }
    }
}

/// Arithmetic mean of rows. Implemented as a weighted sum with uniform
/// weights 1/N so that it is bitwise identical to
/// `weighted_sum(rows, uniform)`.
pub fn mean_rows(rows: &[Tensor]) -> Result<Tensor> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("mean_rows: no rows".into()));
    }
    let alpha = uniform_weights(rows.len());
    weighted_sum(rows, &alpha)
}

/// Backward of [`mean_rows`]: each row receives grad_out / N.
pub fn mean_rows_backward(grad_out: &Tensor, row_grads: &mut [Tensor]) {
    let w = 1.0 / row_grads.len() as f64;
    for rg in row_grads {
        rg.add_scaled(grad_out, w);
    }
}

pub fn uniform_weights(n: usize) -> Tensor {
    Tensor::from_computed(Shape::Vector(n), vec![1.0 / n as f64; n])
}

/// Negative log-likelihood of `target` under probability vector `p`,
/// clamped at [`LOG_EPS`] so it stays finite.
pub fn nll_from_probs(p: &Tensor, target: usize) -> Result<f64> {
    let n = p.expect_vector("nll probs")?;
    if target >= n {
        return Err(Error::InvalidArgument(format!(
            "nll: target {target} out of range for [{n}]"
        )));
    }
    Ok(-p.at(target).max(LOG_EPS).ln())
}

/// Backward of [`nll_from_probs`]: sends -1/p[target] (clamped) to the
/// target coordinate.
pub fn nll_backward(p: &Tensor, target: usize, grad_out: f64, grad_p: &mut Tensor) {
    let pt = p.at(target).max(LOG_EPS);
    grad_p.as_mut_slice()[target] += grad_out * (-1.0 / pt);
}

/// Central-difference gradient oracle:
/// (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut xs = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = xs[i];
        xs[i] = orig + h;
        let fp = f(&xs);
        xs[i] = orig - h;
        let fm = f(&xs);
        xs[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}
