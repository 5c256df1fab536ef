//! Warmup: gradient steps that push the VAA* of every layer towards a target
//! before any task training.
//!
//! Each step samples a batch of sequences, one hidden state per sequence at a
//! random timestep, a stabilization period `M ~ U{1..M_max(s)}` with
//! `M_max(s) = min(M*, 1 + c·s)`, and per layer a perturbation
//! `u ~ N(0, I)` of that layer's input width. The layer is then iterated `M`
//! times with its input held at `u` and the loss
//! `1/L Σ_l (VAA*_l - k)²` is reduced by plain SGD. Gradients flow through
//! the stabilization and through the unroll that produced the states.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Backend, Graph, Var};
use crate::error::{contract, Result};
use crate::network::NetworkParams;
use crate::sequences::Sequences;
use crate::tensor::Tensor;
use crate::vaa::{self, DEFAULT_EPSILON};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarmupConfig {
    /// gradient steps S
    pub steps: usize,
    /// batch size n
    pub batch_size: usize,
    pub lr: f64,
    /// target VAA* k
    pub target: f64,
    /// maximum stabilization period M*
    pub max_period: usize,
    /// stabilization period increment c
    pub period_increment: usize,
    pub eps: f64,
    /// Raise M* by c after every step instead of keeping it fixed.
    pub grow_max_period: bool,
    /// Keep gradients only for the last `window` steps of the unroll that
    /// produces the hidden states. `None` backpropagates through all of it.
    pub unroll_window: Option<usize>,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        WarmupConfig {
            steps: 100,
            batch_size: 200,
            lr: 1e-2,
            target: 0.95,
            max_period: 200,
            period_increment: 10,
            eps: DEFAULT_EPSILON,
            grow_max_period: false,
            unroll_window: None,
        }
    }
}

impl WarmupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(contract("warmup batch size must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.target) {
            return Err(contract(format!("warmup target must lie in [0, 1], got {}", self.target)));
        }
        if self.max_period == 0 {
            return Err(contract("maximum stabilization period must be >= 1"));
        }
        if !(self.eps > 0.0) || !(self.lr >= 0.0) {
            return Err(contract("warmup needs eps > 0 and lr >= 0"));
        }
        Ok(())
    }
}

/// `min(M*, 1 + c·s)` for step `s >= 1`.
pub fn max_stabilization_period(s: usize, max_period: usize, increment: usize) -> usize {
    max_period.min(1 + increment * s)
}

/// `1/L Σ (v_l - k)²` on any backend.
pub fn warmup_loss<B: Backend>(b: &mut B, v: &[B::T], k: f64) -> Result<B::T> {
    if v.is_empty() {
        return Err(contract("warmup loss needs at least one layer"));
    }
    let sq: Vec<B::T> = v
        .iter()
        .map(|x| {
            let d = b.affine(x, 1.0, -k);
            b.square(&d)
        })
        .collect();
    let mut acc = sq[0].clone();
    for s in &sq[1..] {
        acc = b.add(&acc, s)?;
    }
    Ok(b.affine(&acc, 1.0 / v.len() as f64, 0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupRow {
    pub step: usize,
    pub sampled_m: usize,
    pub layer: usize,
    pub vaa_star: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WarmupTrace {
    pub rows: Vec<WarmupRow>,
}

impl WarmupTrace {
    pub const HEADER: &'static str = "step,sampled_M,layer,vaa_star,loss";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.step, r.sampled_m, r.layer, r.vaa_star, r.loss));
        }
        out
    }

    /// VAA* values of one layer in step order.
    pub fn layer_series(&self, layer: usize) -> Vec<f64> {
        self.rows.iter().filter(|r| r.layer == layer).map(|r| r.vaa_star).collect()
    }
}

/// Result of one warmup gradient step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub sampled_m: usize,
    pub vaa_star: Vec<f64>,
    pub loss: f64,
    /// gradients in canonical parameter order (zeros for untouched tensors)
    pub grads: Vec<Tensor>,
}

/// Indices of the parameter tensors warmup may change. In double mode that is
/// the warmed partition; otherwise every recurrent tensor (the head, if any,
/// never receives a warmup gradient).
pub fn trainable_indices(params: &NetworkParams) -> Result<Vec<usize>> {
    if params.spec.double {
        return Ok(params.warmed_partition()?.warmed);
    }
    let recurrent: usize = params.layers.iter().map(|b| b.len() * 3).sum();
    Ok((0..recurrent).collect())
}

/// Loss and gradients of one warmup step with a given `M` and batch.
pub fn warmup_gradient<S: Sequences + ?Sized>(
    dataset: &S,
    params: &NetworkParams,
    batch: &[usize],
    m: usize,
    config: &WarmupConfig,
    rng: &mut impl Rng,
) -> Result<StepOutcome> {
    let trainable = trainable_indices(params)?;
    let mut mask = vec![false; params.tensors().len()];
    for &i in &trainable {
        mask[i] = true;
    }
    let mut g = Graph::new();
    let net = params.bind(&mut g, |g, i, t| if mask[i] { g.param(t.clone()) } else { g.constant(t.clone()) })?;
    let detached = match config.unroll_window {
        Some(w) => Some((params.bind(&mut g, |g, _, t| g.constant(t.clone()))?, w)),
        None => None,
    };
    let lens: Vec<usize> = batch.iter().map(|&i| dataset.seq_len(i)).collect();
    let ts = vaa::sample_timesteps(&lens, rng)?;
    let states = vaa::collect_states(&mut g, &net, dataset, batch, &ts, detached.as_ref().map(|(n, w)| (n, *w)))?;

    let mut v: Vec<Var> = Vec::with_capacity(net.layers.len());
    for l in 0..net.layers.len() {
        let blk = params
            .warm_block(l)
            .ok_or_else(|| contract(format!("layer {l} has no block to warm up")))?;
        let cell = &net.layers[l][blk];
        let u = vaa::sample_perturbation(cell.input, rng);
        let u = g.constant(u);
        let f = vaa::cell_dynamics(&mut g, cell, &u)?;
        v.push(vaa::vaa_star(&mut g, f, &states.layers[l][blk], m, config.eps)?);
    }
    let loss = warmup_loss(&mut g, &v, config.target)?;
    let grads = g.backward(loss)?;
    Ok(StepOutcome {
        sampled_m: m,
        vaa_star: v.iter().map(|x| g.get(*x).item()).collect(),
        loss: g.get(loss).item(),
        grads: net.leaves.iter().map(|x| grads.get(*x)).collect(),
    })
}

/// Run warmup in place and return the per-step trace.
pub fn warmup<S: Sequences + ?Sized>(
    dataset: &S,
    params: &mut NetworkParams,
    config: &WarmupConfig,
    rng: &mut impl Rng,
) -> Result<WarmupTrace> {
    config.validate()?;
    if config.steps == 0 {
        return Ok(WarmupTrace::default());
    }
    if dataset.count() == 0 {
        return Err(contract("warmup needs a non-empty dataset"));
    }
    if config.batch_size > dataset.count() {
        return Err(contract(format!(
            "warmup batch size {} exceeds dataset size {}",
            config.batch_size,
            dataset.count()
        )));
    }
    let trainable = trainable_indices(params)?;
    let mut cap = config.max_period;
    let mut trace = WarmupTrace::default();
    for s in 1..=config.steps {
        let batch = vaa::sample_batch(dataset.count(), config.batch_size, rng);
        let m_max = max_stabilization_period(s, cap, config.period_increment);
        let m = rng.gen_range(1..=m_max);
        let out = warmup_gradient(dataset, params, &batch, m, config, rng)?;
        let mut tensors = params.tensors_mut();
        for &i in &trainable {
            let g = &out.grads[i];
            for (p, d) in tensors[i].data_mut().iter_mut().zip(g.data()) {
                *p -= config.lr * d;
            }
        }
        for (layer, &v) in out.vaa_star.iter().enumerate() {
            trace.rows.push(WarmupRow {
                step: s,
                sampled_m: m,
                layer,
                vaa_star: v,
                loss: out.loss,
            });
        }
        if config.grow_max_period {
            cap += config.period_increment;
        }
    }
    Ok(trace)
}
