//! Read access to collections of input sequences without materializing them.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An indexed collection of variable-length sequences of `input_dim` vectors.
pub trait Sequences: Sync {
    fn count(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn seq_len(&self, i: usize) -> usize;
    /// Write step `t` (0-based) of sequence `i` into `out` (`input_dim` long).
    fn fill_step(&self, i: usize, t: usize, out: &mut [f64]);

    /// `[batch, input_dim]` inputs at step `t`; sequences already finished
    /// contribute zero rows.
    fn batch_step(&self, batch: &[usize], t: usize) -> Tensor {
        let dim = self.input_dim();
        let mut data = vec![0.0; batch.len() * dim];
        for (r, &i) in batch.iter().enumerate() {
            if t < self.seq_len(i) {
                self.fill_step(i, t, &mut data[r * dim..(r + 1) * dim]);
            }
        }
        Tensor::matrix(batch.len(), dim, data).expect("batch shape")
    }

    /// Sequence `i` as a `[T, input_dim]` tensor.
    fn sequence(&self, i: usize) -> Tensor {
        let (len, dim) = (self.seq_len(i), self.input_dim());
        let mut data = vec![0.0; len * dim];
        for t in 0..len {
            self.fill_step(i, t, &mut data[t * dim..(t + 1) * dim]);
        }
        Tensor::matrix(len, dim, data).expect("sequence shape")
    }
}

/// Sequences stored as `[T_i, dim]` tensors. All must share one width.
#[derive(Clone, Debug, Default)]
pub struct DenseSequences {
    seqs: Vec<Tensor>,
    dim: usize,
}

impl DenseSequences {
    pub fn new(seqs: Vec<Tensor>) -> Result<Self> {
        let dim = seqs.first().map_or(0, Tensor::cols);
        for s in &seqs {
            if s.shape().len() != 2 || s.cols() != dim {
                return Err(Error::ShapeMismatch {
                    op: "sequence width",
                    left: s.shape().to_vec(),
                    right: vec![dim],
                });
            }
        }
        Ok(DenseSequences { seqs, dim })
    }

    pub fn with_dim(seqs: Vec<Tensor>, dim: usize) -> Result<Self> {
        let mut d = DenseSequences::new(seqs)?;
        if d.seqs.is_empty() {
            d.dim = dim;
        } else if d.dim != dim {
            return Err(Error::ShapeMismatch {
                op: "sequence width",
                left: vec![d.dim],
                right: vec![dim],
            });
        }
        Ok(d)
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.seqs[i]
    }

    pub fn push(&mut self, s: Tensor) -> Result<()> {
        if s.shape().len() != 2 || s.cols() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "sequence width",
                left: s.shape().to_vec(),
                right: vec![self.dim],
            });
        }
        self.seqs.push(s);
        Ok(())
    }
}

impl Sequences for DenseSequences {
    fn count(&self) -> usize {
        self.seqs.len()
    }

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn seq_len(&self, i: usize) -> usize {
        self.seqs[i].rows()
    }

    fn fill_step(&self, i: usize, t: usize, out: &mut [f64]) {
        out.copy_from_slice(self.seqs[i].row(t));
    }
}

/// Plain tensor slices; the width is taken from the first sequence.
impl Sequences for [Tensor] {
    fn count(&self) -> usize {
        self.len()
    }

    fn input_dim(&self) -> usize {
        self.first().map_or(0, Tensor::cols)
    }

    fn seq_len(&self, i: usize) -> usize {
        self[i].rows()
    }

    fn fill_step(&self, i: usize, t: usize, out: &mut [f64]) {
        out.copy_from_slice(self[i].row(t));
    }
}

impl Sequences for Vec<Tensor> {
    fn count(&self) -> usize {
        self.as_slice().count()
    }

    fn input_dim(&self) -> usize {
        self.as_slice().input_dim()
    }

    fn seq_len(&self, i: usize) -> usize {
        self[i].rows()
    }

    fn fill_step(&self, i: usize, t: usize, out: &mut [f64]) {
        self.as_slice().fill_step(i, t, out)
    }
}
