//! Dense row-major `f64` arrays and the numeric kernels shared by the eager
//! evaluator and the recorded graph.
//!
//! Tensors are at most two-dimensional. A 2-D tensor is `[batch, features]`;
//! a 1-D tensor `[n]` behaves like a single row `[1, n]` when combined with a
//! batch; a 0-D tensor (`shape == []`) is a scalar.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.len() > 2 {
            return Err(crate::error::contract(format!(
                "tensors are at most 2-D, got shape {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Stack equally sized rows into a `[rows.len(), width]` matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            if r.len() != width {
                return Err(Error::ShapeMismatch {
                    op: "from_rows",
                    left: vec![width],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), width], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when viewed as a matrix (1 for vectors and scalars).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Size of the last axis (1 for scalars).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Replace the contents with another tensor of the same shape.
    pub fn assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "assign",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        self.data.copy_from_slice(&other.data);
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

// ---------------------------------------------------------------------------
// kernels

/// `a[m,k] · b[k,n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, &a.data, (k, 1), &b.data, (n, 1), &mut out, 0.0);
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// `c = a·b + beta·c` with explicit (row, column) strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the slices cover every index addressed by the given dimensions
    // and strides; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// How the right operand of a binary op lines up with the left one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// right is a single row repeated over the left's batch
    RightRow,
    /// left is a single row repeated over the right's batch
    LeftRow,
    /// right is a scalar
    RightScalar,
    /// left is a scalar
    LeftScalar,
}

pub(crate) fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape == b.shape {
        return Ok(Broadcast::Same);
    }
    if b.shape.is_empty() {
        return Ok(Broadcast::RightScalar);
    }
    if a.shape.is_empty() {
        return Ok(Broadcast::LeftScalar);
    }
    let is_row = |t: &Tensor| t.shape.len() == 1 || (t.shape.len() == 2 && t.shape[0] == 1);
    if a.shape.len() == 2 && is_row(b) && a.cols() == b.cols() {
        return Ok(Broadcast::RightRow);
    }
    if b.shape.len() == 2 && is_row(a) && a.cols() == b.cols() {
        return Ok(Broadcast::LeftRow);
    }
    Err(Error::ShapeMismatch {
        op,
        left: a.shape.clone(),
        right: b.shape.clone(),
    })
}

pub(crate) fn zip_with(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let kind = broadcast_kind(op, a, b)?;
    let (shape, data) = match kind {
        Broadcast::Same => (
            a.shape.clone(),
            a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        ),
        Broadcast::RightScalar => {
            let y = b.data[0];
            (a.shape.clone(), a.data.iter().map(|&x| f(x, y)).collect())
        }
        Broadcast::LeftScalar => {
            let x = a.data[0];
            (b.shape.clone(), b.data.iter().map(|&y| f(x, y)).collect())
        }
        Broadcast::RightRow => {
            let c = a.cols();
            (
                a.shape.clone(),
                a.data
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, b.data[i % c]))
                    .collect(),
            )
        }
        Broadcast::LeftRow => {
            let c = b.cols();
            (
                b.shape.clone(),
                b.data
                    .iter()
                    .enumerate()
                    .map(|(i, &y)| f(a.data[i % c], y))
                    .collect(),
            )
        }
    };
    Ok(Tensor { shape, data })
}

/// Fold a gradient of the broadcast output shape back to an operand shape.
pub(crate) fn reduce_to(grad: &Tensor, target_shape: &[usize]) -> Tensor {
    if grad.shape == target_shape {
        return grad.clone();
    }
    let n: usize = target_shape.iter().product();
    if n == 1 {
        return Tensor {
            shape: target_shape.to_vec(),
            data: vec![grad.data.iter().sum()],
        };
    }
    // row broadcast: sum over the batch
    let c = grad.cols();
    let mut out = vec![0.0; c];
    for row in grad.data.chunks(c) {
        for (o, g) in out.iter_mut().zip(row) {
            *o += g;
        }
    }
    Tensor {
        shape: target_shape.to_vec(),
        data: out,
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sum(a: &Tensor) -> Tensor {
    Tensor::scalar(a.data.iter().sum())
}

/// Max over the last axis, returning values and argmax (first maximal index).
pub fn max_last(a: &Tensor) -> (Tensor, Vec<usize>) {
    let c = a.cols();
    let mut vals = Vec::with_capacity(a.rows());
    let mut idx = Vec::with_capacity(a.rows());
    for row in a.data.chunks(c.max(1)) {
        let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
        for (i, &v) in row.iter().enumerate() {
            if v > best {
                best = v;
                best_i = i;
            }
        }
        vals.push(best);
        idx.push(best_i);
    }
    (reduced_last(a, vals), idx)
}

/// Euclidean norm over the last axis.
pub fn norm_last(a: &Tensor) -> Tensor {
    let c = a.cols();
    let vals = a
        .data
        .chunks(c.max(1))
        .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    reduced_last(a, vals)
}

/// Sum over the last axis.
pub fn sum_last(a: &Tensor) -> Tensor {
    let c = a.cols();
    let vals = a.data.chunks(c.max(1)).map(|row| row.iter().sum()).collect();
    reduced_last(a, vals)
}

/// Euclidean distances between all pairs of rows of `[n, c]`, as `[n, n]`.
pub fn pairwise_dist(a: &Tensor) -> Tensor {
    let n = a.rows();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = a.row(i).iter().zip(a.row(j)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }
    Tensor {
        shape: vec![n, n],
        data: out,
    }
}

fn reduced_last(a: &Tensor, vals: Vec<f64>) -> Tensor {
    let shape = match a.shape.len() {
        2 => vec![a.shape[0]],
        _ => vec![],
    };
    Tensor { shape, data: vals }
}

pub fn softmax(a: &Tensor) -> Tensor {
    let c = a.cols();
    let mut data = Vec::with_capacity(a.len());
    for row in a.data.chunks(c.max(1)) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        data.extend(exps.into_iter().map(|e| e / z));
    }
    Tensor {
        shape: a.shape.clone(),
        data,
    }
}

pub fn log_softmax(a: &Tensor) -> Tensor {
    let c = a.cols();
    let mut data = Vec::with_capacity(a.len());
    for row in a.data.chunks(c.max(1)) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        data.extend(row.iter().map(|v| v - lse));
    }
    Tensor {
        shape: a.shape.clone(),
        data,
    }
}

/// Concatenate along the last axis; all parts must share the row count.
pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| crate::error::contract("concat of zero tensors"))?;
    let rows = first.rows();
    let two_d = first.shape.len() == 2;
    for p in parts {
        if p.rows() != rows || (p.shape.len() == 2) != two_d || p.shape.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "concat",
                left: first.shape.clone(),
                right: p.shape.clone(),
            });
        }
    }
    let total: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    let shape = if two_d { vec![rows, total] } else { vec![total] };
    Ok(Tensor { shape, data })
}

/// Columns `start..end` of the last axis.
pub fn slice_last(a: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    if a.shape.is_empty() || start > end || end > a.cols() {
        return Err(Error::ShapeMismatch {
            op: "slice",
            left: a.shape.clone(),
            right: vec![start, end],
        });
    }
    let c = a.cols();
    let mut data = Vec::with_capacity(a.rows() * (end - start));
    for row in a.data.chunks(c) {
        data.extend_from_slice(&row[start..end]);
    }
    let mut shape = a.shape.clone();
    *shape.last_mut().unwrap() = end - start;
    Ok(Tensor { shape, data })
}

/// Build a matrix whose i-th row is row `picks[i].1` of `picks[i].0`.
pub fn gather_rows(picks: &[(&Tensor, usize)]) -> Result<Tensor> {
    let (first, _) = picks
        .first()
        .ok_or_else(|| crate::error::contract("gather of zero rows"))?;
    let c = first.cols();
    let mut data = Vec::with_capacity(picks.len() * c);
    for (t, r) in picks {
        if t.cols() != c || *r >= t.rows() || t.shape.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                left: first.shape.clone(),
                right: t.shape.clone(),
            });
        }
        data.extend_from_slice(t.row(*r));
    }
    Ok(Tensor {
        shape: vec![picks.len(), c],
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 2, 2], vec![0.0; 8]).is_err());
        assert_eq!(Tensor::new(vec![], vec![1.0]).unwrap().item(), 1.0);
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::matrix(3, 2, vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[58., 64., 139., 154.]);
        let err = matmul(&a, &a).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn row_broadcast_and_reduce() {
        let a = Tensor::matrix(2, 2, vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::vector(vec![10., 20.]);
        let c = zip_with("add", &a, &b, |x, y| x + y).unwrap();
        assert_eq!(c.data(), &[11., 22., 13., 24.]);
        assert_eq!(reduce_to(&c, &[2]).data(), &[24., 46.]);
        let bad = Tensor::vector(vec![1., 2., 3.]);
        assert!(zip_with("add", &a, &bad, |x, y| x + y).is_err());
    }

    #[test]
    fn norm_and_softmax() {
        assert_eq!(norm_last(&Tensor::vector(vec![3., 4.])).item(), 5.0);
        let s = softmax(&Tensor::vector(vec![0.0; 10]));
        assert!(s.data().iter().all(|&p| (p - 0.1).abs() < 1e-15));
        let ls = log_softmax(&Tensor::vector(vec![1000.0, 0.0]));
        assert!(ls.is_finite());
        assert!(ls.data()[0].abs() < 1e-12);
    }

    #[test]
    fn max_ties_pick_first() {
        let (v, i) = max_last(&Tensor::matrix(2, 4, vec![5., 5., 0., 0., 1., 3., 2., 0.]).unwrap());
        assert_eq!(v.data(), &[5., 3.]);
        assert_eq!(i, vec![0, 1]);
    }
}
