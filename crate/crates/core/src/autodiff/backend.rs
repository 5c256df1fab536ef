use crate::error::Result;
use crate::tensor::{self, Tensor};

/// The primitive operation set shared by eager evaluation and the recorded
/// graph. Model code is written once against this trait and runs either way.
pub trait Backend {
    type T: Clone;

    fn constant(&mut self, t: Tensor) -> Self::T;
    fn value<'a>(&'a self, x: &'a Self::T) -> &'a Tensor;

    fn matmul(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn add(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn sub(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn mul(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn div(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    /// `scale * x + shift`, elementwise.
    fn affine(&mut self, x: &Self::T, scale: f64, shift: f64) -> Self::T;
    fn sigmoid(&mut self, x: &Self::T) -> Self::T;
    fn tanh(&mut self, x: &Self::T) -> Self::T;
    fn exp(&mut self, x: &Self::T) -> Self::T;
    fn ln(&mut self, x: &Self::T) -> Self::T;
    fn square(&mut self, x: &Self::T) -> Self::T;
    fn sqrt(&mut self, x: &Self::T) -> Self::T;
    /// `max(x, c)` elementwise; the gradient at `x == c` is zero.
    fn max_const(&mut self, x: &Self::T, c: f64) -> Self::T;
    fn sum(&mut self, x: &Self::T) -> Self::T;
    /// Max over the last axis; the argmax is the first maximal index.
    fn max_last(&mut self, x: &Self::T) -> (Self::T, Vec<usize>);
    fn concat(&mut self, parts: &[Self::T]) -> Result<Self::T>;
    fn slice(&mut self, x: &Self::T, start: usize, end: usize) -> Result<Self::T>;
    /// Euclidean norm over the last axis. The gradient at zero is zero.
    fn norm_last(&mut self, x: &Self::T) -> Self::T;
    /// Row sums of a matrix.
    fn sum_last(&mut self, x: &Self::T) -> Self::T;
    /// `[n, c] -> [n, n]` Euclidean distances between rows. The gradient of a
    /// zero distance is zero.
    fn pairwise_dist(&mut self, x: &Self::T) -> Self::T;
    fn softmax(&mut self, x: &Self::T) -> Self::T;
    fn log_softmax(&mut self, x: &Self::T) -> Self::T;
    fn gather_rows(&mut self, picks: &[(Self::T, usize)]) -> Result<Self::T>;

    fn neg(&mut self, x: &Self::T) -> Self::T {
        self.affine(x, -1.0, 0.0)
    }

    fn mean(&mut self, x: &Self::T) -> Self::T {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.affine(&s, 1.0 / n, 0.0)
    }
}

/// Gradient-free evaluation: every op computes its value and forgets history.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl Backend for Eager {
    type T = Tensor;

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn value<'a>(&'a self, x: &'a Tensor) -> &'a Tensor {
        x
    }

    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::matmul(a, b)
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::zip_with("add", a, b, |x, y| x + y)
    }

    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::zip_with("sub", a, b, |x, y| x - y)
    }

    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::zip_with("mul", a, b, |x, y| x * y)
    }

    fn div(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        tensor::zip_with("div", a, b, |x, y| x / y)
    }

    fn affine(&mut self, x: &Tensor, scale: f64, shift: f64) -> Tensor {
        x.map(|v| scale * v + shift)
    }

    fn sigmoid(&mut self, x: &Tensor) -> Tensor {
        x.map(tensor::sigmoid)
    }

    fn tanh(&mut self, x: &Tensor) -> Tensor {
        x.map(f64::tanh)
    }

    fn exp(&mut self, x: &Tensor) -> Tensor {
        x.map(f64::exp)
    }

    fn ln(&mut self, x: &Tensor) -> Tensor {
        x.map(f64::ln)
    }

    fn square(&mut self, x: &Tensor) -> Tensor {
        x.map(|v| v * v)
    }

    fn sqrt(&mut self, x: &Tensor) -> Tensor {
        x.map(f64::sqrt)
    }

    fn max_const(&mut self, x: &Tensor, c: f64) -> Tensor {
        x.map(|v| v.max(c))
    }

    fn sum(&mut self, x: &Tensor) -> Tensor {
        tensor::sum(x)
    }

    fn max_last(&mut self, x: &Tensor) -> (Tensor, Vec<usize>) {
        tensor::max_last(x)
    }

    fn concat(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let refs: Vec<&Tensor> = parts.iter().collect();
        tensor::concat(&refs)
    }

    fn slice(&mut self, x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
        tensor::slice_last(x, start, end)
    }

    fn norm_last(&mut self, x: &Tensor) -> Tensor {
        tensor::norm_last(x)
    }

    fn sum_last(&mut self, x: &Tensor) -> Tensor {
        tensor::sum_last(x)
    }

    fn pairwise_dist(&mut self, x: &Tensor) -> Tensor {
        tensor::pairwise_dist(x)
    }

    fn softmax(&mut self, x: &Tensor) -> Tensor {
        tensor::softmax(x)
    }

    fn log_softmax(&mut self, x: &Tensor) -> Tensor {
        tensor::log_softmax(x)
    }

    fn gather_rows(&mut self, picks: &[(Tensor, usize)]) -> Result<Tensor> {
        let refs: Vec<(&Tensor, usize)> = picks.iter().map(|(t, r)| (t, *r)).collect();
        tensor::gather_rows(&refs)
    }
}
