//! Dynamic computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so parents always precede their
//! children and the backward sweep is a single reverse pass over the node
//! list. The graph is rebuilt for every forward pass.

use crate::autodiff::backend::Backend;
use crate::error::{contract, Result};
use crate::tensor::{self, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Sqrt(Var),
    MaxConst(Var, f64),
    Sum(Var),
    MaxLast(Var, Vec<usize>),
    Concat(Vec<Var>),
    Slice(Var, usize),
    NormLast(Var),
    SumLast(Var),
    PairwiseDist(Var),
    Softmax(Var),
    LogSoftmax(Var),
    GatherRows(Vec<(Var, usize)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// true when some trainable leaf is upstream of this node
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

/// Result of a backward sweep: one gradient per node that received one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root with respect to the parameter `v`; zeros when `v`
    /// did not participate. Only parameter gradients are kept.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        let v = self.push(t, Op::Leaf, true);
        self.params.push(v);
        v
    }

    /// Trainable leaves in registration order.
    pub fn params(&self) -> &[Var] {
        &self.params
    }

    pub fn get(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].tracked)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[x.0].value.map(f);
        let tracked = self.tracked(&[x]);
        self.push(value, op, tracked)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let value = tensor::zip_with(name, &self.nodes[a.0].value, &self.nodes[b.0].value, f)?;
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(value, op, tracked))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(contract(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(root_value.shape(), 1.0));

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
            // interior gradients are dropped once propagated to bound memory
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads.resize_with(self.nodes.len(), || None);
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].tracked {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: &Var| &self.nodes[v.0].value;
        let zip = |a: &Tensor, b: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
            let data = a.data().iter().zip(b.data()).map(|(&x, &z)| f(x, z)).collect();
            Tensor::new(a.shape().to_vec(), data).expect("same shape")
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.nodes[a.0].tracked {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    tensor::gemm(m, n, k, g.data(), (n, 1), bv.data(), (1, n), &mut da, 0.0);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], da)?);
                }
                if self.nodes[b.0].tracked {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    tensor::gemm(k, m, n, av.data(), (1, k), g.data(), (n, 1), &mut db, 0.0);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, tensor::reduce_to(g, val(a).shape()));
                self.accumulate(grads, *b, tensor::reduce_to(g, val(b).shape()));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, tensor::reduce_to(g, val(a).shape()));
                let neg = g.map(|v| -v);
                self.accumulate(grads, *b, tensor::reduce_to(&neg, val(b).shape()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                if self.nodes[a.0].tracked {
                    let ga = tensor::zip_with("mul", g, bv, |x, y| x * y)?;
                    self.accumulate(grads, *a, tensor::reduce_to(&ga, av.shape()));
                }
                if self.nodes[b.0].tracked {
                    let gb = tensor::zip_with("mul", g, av, |x, y| x * y)?;
                    self.accumulate(grads, *b, tensor::reduce_to(&gb, bv.shape()));
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(a), val(b));
                if self.nodes[a.0].tracked {
                    let ga = tensor::zip_with("div", g, bv, |x, y| x / y)?;
                    self.accumulate(grads, *a, tensor::reduce_to(&ga, av.shape()));
                }
                if self.nodes[b.0].tracked {
                    // d(a/b)/db = -y/b
                    let gy = zip(g, y, &|x, z| x * z);
                    let gb = tensor::zip_with("div", &gy, bv, |x, z| -x / z)?;
                    self.accumulate(grads, *b, tensor::reduce_to(&gb, bv.shape()));
                }
            }
            Op::Affine(x, scale) => {
                let s = *scale;
                self.accumulate(grads, *x, g.map(|v| s * v));
            }
            Op::Sigmoid(x) => self.accumulate(grads, *x, zip(g, y, &|gv, s| gv * s * (1.0 - s))),
            Op::Tanh(x) => self.accumulate(grads, *x, zip(g, y, &|gv, t| gv * (1.0 - t * t))),
            Op::Exp(x) => self.accumulate(grads, *x, zip(g, y, &|gv, e| gv * e)),
            Op::Ln(x) => self.accumulate(grads, *x, zip(g, val(x), &|gv, xv| gv / xv)),
            Op::Square(x) => self.accumulate(grads, *x, zip(g, val(x), &|gv, xv| 2.0 * gv * xv)),
            Op::Sqrt(x) => self.accumulate(
                grads,
                *x,
                zip(g, y, &|gv, s| if s > 0.0 { gv / (2.0 * s) } else { 0.0 }),
            ),
            Op::MaxConst(x, c) => {
                let c = *c;
                self.accumulate(grads, *x, zip(g, val(x), &|gv, xv| if xv > c { gv } else { 0.0 }));
            }
            Op::Sum(x) => {
                let gv = g.item();
                self.accumulate(grads, *x, Tensor::full(val(x).shape(), gv));
            }
            Op::MaxLast(x, idx) => {
                let xv = val(x);
                let c = xv.cols();
                let mut gx = Tensor::zeros(xv.shape());
                for (r, &j) in idx.iter().enumerate() {
                    gx.data_mut()[r * c + j] = g.data()[r];
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = val(p).cols();
                    let gp = tensor::slice_last(g, start, start + w)?;
                    let gp = Tensor::new(val(p).shape().to_vec(), gp.into_data())?;
                    self.accumulate(grads, *p, gp);
                    start += w;
                }
            }
            Op::Slice(x, start) => {
                let xv = val(x);
                let (c, w) = (xv.cols(), g.cols());
                let mut gx = Tensor::zeros(xv.shape());
                for r in 0..xv.rows() {
                    gx.data_mut()[r * c + start..r * c + start + w].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::NormLast(x) => {
                let xv = val(x);
                let c = xv.cols();
                let mut gx = Tensor::zeros(xv.shape());
                for r in 0..xv.rows() {
                    let nrm = y.data()[r];
                    if nrm > 0.0 {
                        let scale = g.data()[r] / nrm;
                        for j in 0..c {
                            gx.data_mut()[r * c + j] = scale * xv.data()[r * c + j];
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SumLast(x) => {
                let xv = val(x);
                let c = xv.cols();
                let mut gx = Tensor::zeros(xv.shape());
                for (r, row) in gx.data_mut().chunks_mut(c.max(1)).enumerate() {
                    row.fill(g.data()[r]);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::PairwiseDist(x) => {
                let xv = val(x);
                let (n, c) = (xv.rows(), xv.cols());
                let mut gx = Tensor::zeros(xv.shape());
                for i in 0..n {
                    for j in 0..n {
                        let d = y.data()[i * n + j];
                        if i == j || d == 0.0 {
                            continue;
                        }
                        // d_ij and d_ji both depend on x_i with the same sign
                        let scale = (g.data()[i * n + j] + g.data()[j * n + i]) / d;
                        for k in 0..c {
                            gx.data_mut()[i * c + k] += scale * (xv.data()[i * c + k] - xv.data()[j * c + k]);
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax(x) => {
                let c = y.cols();
                let mut gx = Tensor::zeros(y.shape());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx.data_mut()[r * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::LogSoftmax(x) => {
                let c = y.cols();
                let mut gx = Tensor::zeros(y.shape());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let gsum: f64 = gr.iter().sum();
                    for j in 0..c {
                        gx.data_mut()[r * c + j] = gr[j] - yr[j].exp() * gsum;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::GatherRows(picks) => {
                let c = g.cols();
                for (out_row, (v, r)) in picks.iter().enumerate() {
                    if !self.nodes[v.0].tracked {
                        continue;
                    }
                    let mut gv = Tensor::zeros(val(v).shape());
                    gv.data_mut()[r * c..(r + 1) * c].copy_from_slice(g.row(out_row));
                    self.accumulate(grads, *v, gv);
                }
            }
        }
        Ok(())
    }
}

impl Backend for Graph {
    type T = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn value<'a>(&'a self, x: &'a Var) -> &'a Tensor {
        &self.nodes[x.0].value
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = tensor::matmul(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        let tracked = self.tracked(&[*a, *b]);
        Ok(self.push(value, Op::MatMul(*a, *b), tracked))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.binary("add", *a, *b, |x, y| x + y, Op::Add(*a, *b))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.binary("sub", *a, *b, |x, y| x - y, Op::Sub(*a, *b))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.binary("mul", *a, *b, |x, y| x * y, Op::Mul(*a, *b))
    }

    fn div(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.binary("div", *a, *b, |x, y| x / y, Op::Div(*a, *b))
    }

    fn affine(&mut self, x: &Var, scale: f64, shift: f64) -> Var {
        self.unary(*x, |v| scale * v + shift, Op::Affine(*x, scale))
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        self.unary(*x, tensor::sigmoid, Op::Sigmoid(*x))
    }

    fn tanh(&mut self, x: &Var) -> Var {
        self.unary(*x, f64::tanh, Op::Tanh(*x))
    }

    fn exp(&mut self, x: &Var) -> Var {
        self.unary(*x, f64::exp, Op::Exp(*x))
    }

    fn ln(&mut self, x: &Var) -> Var {
        self.unary(*x, f64::ln, Op::Ln(*x))
    }

    fn square(&mut self, x: &Var) -> Var {
        self.unary(*x, |v| v * v, Op::Square(*x))
    }

    fn sqrt(&mut self, x: &Var) -> Var {
        self.unary(*x, f64::sqrt, Op::Sqrt(*x))
    }

    fn max_const(&mut self, x: &Var, c: f64) -> Var {
        self.unary(*x, |v| v.max(c), Op::MaxConst(*x, c))
    }

    fn sum(&mut self, x: &Var) -> Var {
        let value = tensor::sum(&self.nodes[x.0].value);
        let tracked = self.tracked(&[*x]);
        self.push(value, Op::Sum(*x), tracked)
    }

    fn max_last(&mut self, x: &Var) -> (Var, Vec<usize>) {
        let (value, idx) = tensor::max_last(&self.nodes[x.0].value);
        let tracked = self.tracked(&[*x]);
        let v = self.push(value, Op::MaxLast(*x, idx.clone()), tracked);
        (v, idx)
    }

    fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| &self.nodes[p.0].value).collect();
        let value = tensor::concat(&refs)?;
        let tracked = self.tracked(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), tracked))
    }

    fn slice(&mut self, x: &Var, start: usize, end: usize) -> Result<Var> {
        let value = tensor::slice_last(&self.nodes[x.0].value, start, end)?;
        let tracked = self.tracked(&[*x]);
        Ok(self.push(value, Op::Slice(*x, start), tracked))
    }

    fn norm_last(&mut self, x: &Var) -> Var {
        let value = tensor::norm_last(&self.nodes[x.0].value);
        let tracked = self.tracked(&[*x]);
        self.push(value, Op::NormLast(*x), tracked)
    }

    fn sum_last(&mut self, x: &Var) -> Var {
        let value = tensor::sum_last(&self.nodes[x.0].value);
        let tracked = self.tracked(&[*x]);
        self.push(value, Op::SumLast(*x), tracked)
    }

    fn pairwise_dist(&mut self, x: &Var) -> Var {
        let value = tensor::pairwise_dist(&self.nodes[x.0].value);
        let tracked = self.tracked(&[*x]);
        self.push(value, Op::PairwiseDist(*x), tracked)
    }

    fn softmax(&mut self, x: &Var) -> Var {
        let value = tensor::softmax(&self.nodes[x.0].value);
        let tracked = self.tracked(&[*x]);
        self.push(value, Op::Softmax(*x), tracked)
    }

    fn log_softmax(&mut self, x: &Var) -> Var {
        let value = tensor::log_softmax(&self.nodes[x.0].value);
        let tracked = self.tracked(&[*x]);
        self.push(value, Op::LogSoftmax(*x), tracked)
    }

    fn gather_rows(&mut self, picks: &[(Var, usize)]) -> Result<Var> {
        let refs: Vec<(&Tensor, usize)> = picks
            .iter()
            .map(|(v, r)| (&self.nodes[v.0].value, *r))
            .collect();
        let value = tensor::gather_rows(&refs)?;
        let vars: Vec<Var> = picks.iter().map(|(v, _)| *v).collect();
        let tracked = self.tracked(&vars);
        Ok(self.push(value, Op::GatherRows(picks.to_vec()), tracked))
    }
}
