//! Stacked recurrent networks, the split double-layer variant, output heads
//! and the parameter store.
//!
//! Layer `l` receives the output of layer `l - 1` (the network input for
//! `l = 0`). In double-layer mode each layer is made of a warmed block and a
//! plain block that read the same input and never exchange state; the layer
//! output is the concatenation `[warmed h, plain h]`. The initial state is
//! always zero.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Backend, Graph, Var};
use crate::cells::{BoundCell, CellKind, CellParams};
use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: CellKind,
    pub width: usize,
    /// Fraction of the width that belongs to the warmed block (double mode).
    #[serde(default = "half")]
    pub warmed_fraction: f64,
}

fn half() -> f64 {
    0.5
}

impl LayerSpec {
    pub fn new(kind: CellKind, width: usize) -> Self {
        LayerSpec {
            kind,
            width,
            warmed_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    /// Split every layer into a warmed and a plain block.
    #[serde(default)]
    pub double: bool,
    /// Width of the linear output head, if any.
    #[serde(default)]
    pub output_dim: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockRole {
    /// the only block of a stacked (non-double) layer
    Cell,
    Warm,
    Plain,
}

impl BlockRole {
    fn name(self) -> &'static str {
        match self {
            BlockRole::Cell => "cell",
            BlockRole::Warm => "warm",
            BlockRole::Plain => "plain",
        }
    }
}

impl NetworkSpec {
    pub fn stacked(input_dim: usize, kind: CellKind, widths: &[usize], output_dim: Option<usize>) -> Self {
        NetworkSpec {
            input_dim,
            layers: widths.iter().map(|&w| LayerSpec::new(kind, w)).collect(),
            double: false,
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(contract("network input width must be positive"));
        }
        if self.layers.is_empty() {
            return Err(contract("network needs at least one recurrent layer"));
        }
        for (l, ls) in self.layers.iter().enumerate() {
            ls.kind.validate()?;
            if ls.width == 0 {
                return Err(contract(format!("layer {l} has zero width")));
            }
            if !(0.0..=1.0).contains(&ls.warmed_fraction) {
                return Err(contract(format!(
                    "layer {l} warmed fraction {} outside [0, 1]",
                    ls.warmed_fraction
                )));
            }
        }
        if self.output_dim == Some(0) {
            return Err(contract("output head width must be positive"));
        }
        Ok(())
    }

    /// Block layout `(role, width)` of layer `l`.
    pub fn blocks(&self, l: usize) -> Vec<(BlockRole, usize)> {
        let ls = &self.layers[l];
        if !self.double {
            return vec![(BlockRole::Cell, ls.width)];
        }
        let warm = (ls.warmed_fraction * ls.width as f64).round() as usize;
        let warm = warm.min(ls.width);
        let mut out = Vec::with_capacity(2);
        if warm > 0 {
            out.push((BlockRole::Warm, warm));
        }
        if ls.width - warm > 0 {
            out.push((BlockRole::Plain, ls.width - warm));
        }
        out
    }

    pub fn layer_input(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.layers[l - 1].width
        }
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.width)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub role: BlockRole,
    pub cell: CellParams,
}

/// All trainable parameters θ of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub spec: NetworkSpec,
    pub layers: Vec<Vec<Block>>,
    pub head: Option<Linear>,
}

/// Indices (into [`NetworkParams::tensors`]) of the warmed and frozen parts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamPartition {
    pub warmed: Vec<usize>,
    pub frozen: Vec<usize>,
}

impl NetworkParams {
    /// Seeded initialisation; identical seeds give bit-identical parameters.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for l in 0..spec.layers.len() {
            let kind = spec.layers[l].kind;
            let input = spec.layer_input(l);
            let mut blocks = Vec::new();
            for (role, width) in spec.blocks(l) {
                blocks.push(Block {
                    role,
                    cell: CellParams::init(kind, input, width, &mut rng)?,
                });
            }
            layers.push(blocks);
        }
        let head = match spec.output_dim {
            Some(out) => {
                use rand::Rng;
                let fan_in = spec.output_width();
                let bound = 1.0 / (fan_in as f64).sqrt();
                let w = (0..fan_in * out).map(|_| rng.gen_range(-bound..bound)).collect();
                Some(Linear {
                    w: Tensor::matrix(fan_in, out, w)?,
                    b: Tensor::zeros(&[out]),
                })
            }
            None => None,
        };
        Ok(NetworkParams {
            spec: spec.clone(),
            layers,
            head,
        })
    }

    /// Parameter tensors in canonical order: per layer, per block
    /// `w_x, w_h, bias`; then the head `w, b`.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for blocks in &self.layers {
            for b in blocks {
                out.extend(b.cell.tensors());
            }
        }
        if let Some(h) = &self.head {
            out.push(&h.w);
            out.push(&h.b);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for blocks in &mut self.layers {
            for b in blocks {
                out.extend(b.cell.tensors_mut());
            }
        }
        if let Some(h) = &mut self.head {
            out.push(&mut h.w);
            out.push(&mut h.b);
        }
        out
    }

    /// Names matching [`Self::tensors`], e.g. `layers.1.warm.w_h`.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (l, blocks) in self.layers.iter().enumerate() {
            for b in blocks {
                for t in ["w_x", "w_h", "bias"] {
                    out.push(format!("layers.{l}.{}.{t}", b.role.name()));
                }
            }
        }
        if self.head.is_some() {
            out.push("head.w".into());
            out.push("head.b".into());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Split the parameters into the warmed blocks and everything else.
    pub fn warmed_partition(&self) -> Result<ParamPartition> {
        if !self.spec.double {
            return Err(contract(
                "warmed/frozen partition requested on a network without double layers",
            ));
        }
        let mut part = ParamPartition {
            warmed: Vec::new(),
            frozen: Vec::new(),
        };
        let mut idx = 0;
        for blocks in &self.layers {
            for b in blocks {
                let dst = if b.role == BlockRole::Warm {
                    &mut part.warmed
                } else {
                    &mut part.frozen
                };
                dst.extend(idx..idx + 3);
                idx += 3;
            }
        }
        if self.head.is_some() {
            part.frozen.extend([idx, idx + 1]);
        }
        Ok(part)
    }

    /// Index of the block that warmup targets in layer `l`: the warmed block
    /// in double mode, the only block otherwise.
    pub fn warm_block(&self, l: usize) -> Option<usize> {
        self.layers[l]
            .iter()
            .position(|b| matches!(b.role, BlockRole::Warm | BlockRole::Cell))
    }

    /// Lift the parameters into a backend. `leaf(b, i, t)` creates the handle
    /// for canonical tensor `i`.
    pub fn bind<B: Backend>(
        &self,
        b: &mut B,
        mut leaf: impl FnMut(&mut B, usize, &Tensor) -> B::T,
    ) -> Result<BoundNetwork<B::T>> {
        let mut leaves = Vec::new();
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut i = 0;
        for blocks in &self.layers {
            let mut bound = Vec::with_capacity(blocks.len());
            for blk in blocks {
                let c = &blk.cell;
                let wx = leaf(b, i, &c.w_x);
                let wh = leaf(b, i + 1, &c.w_h);
                let bias = leaf(b, i + 2, &c.bias);
                i += 3;
                bound.push(BoundCell::new(b, c.kind, c.input, c.hidden, &wx, &wh, &bias)?);
                leaves.extend([wx, wh, bias]);
            }
            layers.push(bound);
        }
        let head = match &self.head {
            Some(h) => {
                let w = leaf(b, i, &h.w);
                let bb = leaf(b, i + 1, &h.b);
                leaves.extend([w.clone(), bb.clone()]);
                Some((w, bb))
            }
            None => None,
        };
        Ok(BoundNetwork {
            layers,
            head,
            leaves,
            input_dim: self.spec.input_dim,
        })
    }

    /// Evaluation binding (no gradient tracking).
    pub fn bind_eager(&self) -> Result<BoundNetwork<Tensor>> {
        self.bind(&mut crate::autodiff::Eager, |_, _, t| t.clone())
    }

    /// Register every tensor as a trainable graph leaf.
    pub fn bind_graph(&self, g: &mut Graph) -> Result<BoundNetwork<Var>> {
        self.bind(g, |g, _, t| g.param(t.clone()))
    }

    /// Add `scale * delta[i]` to every tensor `i`.
    pub fn axpy(&mut self, scale: f64, delta: &[Tensor]) -> Result<()> {
        let mut ts = self.tensors_mut();
        if ts.len() != delta.len() {
            return Err(contract(format!(
                "update has {} tensors, parameters have {}",
                delta.len(),
                ts.len()
            )));
        }
        for (t, d) in ts.iter_mut().zip(delta) {
            if t.shape() != d.shape() {
                return Err(Error::ShapeMismatch {
                    op: "axpy",
                    left: t.shape().to_vec(),
                    right: d.shape().to_vec(),
                });
            }
            for (a, b) in t.data_mut().iter_mut().zip(d.data()) {
                *a += scale * b;
            }
        }
        Ok(())
    }

    /// Overwrite all tensors from another parameter set with the same layout.
    pub fn copy_from(&mut self, other: &NetworkParams) -> Result<()> {
        let src = other.tensors();
        let mut dst = self.tensors_mut();
        if src.len() != dst.len() {
            return Err(contract("parameter layouts differ"));
        }
        for (d, s) in dst.iter_mut().zip(src) {
            d.assign(s)?;
        }
        Ok(())
    }

    /// FNV-1a over the bit patterns of every parameter, in canonical order.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in self.tensors() {
            for v in t.data() {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }

    /// JSON checkpoint: architecture plus a map from parameter name to shape
    /// and row-major values.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let tensors = self
            .names()
            .into_iter()
            .zip(self.tensors())
            .map(|(n, t)| {
                (
                    n,
                    StoredTensor {
                        shape: t.shape().to_vec(),
                        values: t.data().to_vec(),
                    },
                )
            })
            .collect();
        Checkpoint {
            spec: self.spec.clone(),
            tensors,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut p = NetworkParams::init(&ck.spec, 0)?;
        let names = p.names();
        for (name, t) in names.iter().zip(p.tensors_mut()) {
            let stored = ck
                .tensors
                .get(name)
                .ok_or_else(|| contract(format!("checkpoint lacks tensor {name}")))?;
            let loaded = Tensor::new(stored.shape.clone(), stored.values.clone())?;
            t.assign(&loaded)?;
        }
        if ck.tensors.len() != names.len() {
            return Err(contract(format!(
                "checkpoint has {} tensors, architecture expects {}",
                ck.tensors.len(),
                names.len()
            )));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&s)?;
        Self::from_checkpoint(&ck)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub tensors: BTreeMap<String, StoredTensor>,
}

/// Per-layer, per-block recurrent states, each `[batch, state width]`.
#[derive(Clone, Debug)]
pub struct HiddenState<T> {
    pub layers: Vec<Vec<T>>,
}

/// Parameters lifted into a backend.
#[derive(Clone, Debug)]
pub struct BoundNetwork<T> {
    pub layers: Vec<Vec<BoundCell<T>>>,
    pub head: Option<(T, T)>,
    /// handles in canonical tensor order
    pub leaves: Vec<T>,
    pub input_dim: usize,
}

impl<T: Clone> BoundNetwork<T> {
    /// The zero initial state `h(θ)` for a batch.
    pub fn initial_state<B: Backend<T = T>>(&self, b: &mut B, batch: usize) -> HiddenState<T> {
        let layers = self
            .layers
            .iter()
            .map(|blocks| {
                blocks
                    .iter()
                    .map(|c| b.constant(Tensor::zeros(&[batch, c.state_width()])))
                    .collect()
            })
            .collect();
        HiddenState { layers }
    }

    /// Advance one layer given its input; returns new block states and the
    /// layer output.
    pub fn layer_step<B: Backend<T = T>>(
        &self,
        b: &mut B,
        l: usize,
        states: &[T],
        input: &T,
    ) -> Result<(Vec<T>, T)> {
        let blocks = &self.layers[l];
        let mut next = Vec::with_capacity(blocks.len());
        let mut outs = Vec::with_capacity(blocks.len());
        for (cell, s) in blocks.iter().zip(states) {
            let xp = cell.project(b, input)?;
            let ns = cell.step(b, s, &xp)?;
            outs.push(cell.output(b, &ns)?);
            next.push(ns);
        }
        let out = if outs.len() == 1 {
            outs.pop().expect("one block")
        } else {
            b.concat(&outs)?
        };
        Ok((next, out))
    }

    /// One network step: each layer feeds the next; returns the new state and
    /// the last layer's output.
    pub fn step<B: Backend<T = T>>(
        &self,
        b: &mut B,
        state: &HiddenState<T>,
        input: &T,
    ) -> Result<(HiddenState<T>, T)> {
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for l in 0..self.layers.len() {
            let (ns, out) = self.layer_step(b, l, &state.layers[l], &x)?;
            layers.push(ns);
            x = out;
        }
        Ok((HiddenState { layers }, x))
    }

    /// Run the network over a sequence of `[batch, input]` tensors.
    pub fn unroll<B: Backend<T = T>>(
        &self,
        b: &mut B,
        inputs: &[T],
        initial: HiddenState<T>,
    ) -> Result<(Vec<HiddenState<T>>, Vec<T>)> {
        if inputs.is_empty() {
            return Err(contract("unroll needs a sequence of length >= 1"));
        }
        let mut states = Vec::with_capacity(inputs.len());
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut s = initial;
        for x in inputs {
            let (ns, out) = self.step(b, &s, x)?;
            states.push(ns.clone());
            outputs.push(out);
            s = ns;
        }
        Ok((states, outputs))
    }

    /// Linear head on a layer output.
    pub fn head<B: Backend<T = T>>(&self, b: &mut B, x: &T) -> Result<T> {
        let (w, bias) = self
            .head
            .as_ref()
            .ok_or_else(|| contract("network has no output head"))?;
        let y = b.matmul(x, w)?;
        b.add(&y, bias)
    }

    /// Concatenation of every block state of every layer.
    pub fn full_state<B: Backend<T = T>>(&self, b: &mut B, state: &HiddenState<T>) -> Result<T> {
        let parts: Vec<T> = state.layers.iter().flatten().cloned().collect();
        if parts.len() == 1 {
            return Ok(parts[0].clone());
        }
        b.concat(&parts)
    }
}
