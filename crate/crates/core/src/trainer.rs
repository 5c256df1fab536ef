//! Supervised training with Adam, evaluation, and periodic VAA probes.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Backend, Eager, Graph};
use crate::benchmarks::{batch_loss, correct_predictions, Dataset, Target};
use crate::error::{contract, Error, Result};
use crate::network::{BoundNetwork, NetworkParams};
use crate::par;
use crate::sequences::Sequences;
use crate::tensor::Tensor;
use crate::vaa::{self, VaaConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam state for a list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(contract(format!("learning rate must be > 0, got {}", config.lr)));
        }
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(Adam {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// One update. Non-finite gradients abort before anything changes.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(contract("Adam: parameter/gradient count differs from its state"));
        }
        for (i, g) in grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter tensor {i}")));
            }
            if g.shape() != self.m[i].shape() {
                return Err(Error::ShapeMismatch {
                    op: "Adam gradient",
                    left: g.shape().to_vec(),
                    right: self.m[i].shape().to_vec(),
                });
            }
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (k, (w, &g)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                *w -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Scale gradients so that their global norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// fraction of the training set held out for validation
    pub validation_fraction: f64,
    /// run a VAA probe every this many epochs (0 disables probing)
    pub probe_every: usize,
    pub probe: VaaConfig,
    /// number of training sequences in each probe state set
    pub probe_set_size: usize,
    /// global-norm gradient clipping; off when `None`
    pub clip: Option<f64>,
    /// every batch is split into this many fixed shards whose gradients are
    /// computed independently and summed in order
    pub shards: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 100,
            adam: AdamConfig::default(),
            validation_fraction: 0.1,
            probe_every: 1,
            probe: VaaConfig {
                m: 2000,
                ..VaaConfig::default()
            },
            probe_set_size: 100,
            clip: None,
            shards: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.shards == 0 {
            return Err(contract("batch size and shard count must be >= 1"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(contract(format!("learning rate must be > 0, got {}", self.adam.lr)));
        }
        if self.probe_every > 0 {
            self.probe.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub vaa: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainTrace {
    pub const HEADER: &'static str = "epoch,split,loss,accuracy,vaa,wall_time_s";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{:.3}\n",
                r.epoch,
                r.split.name(),
                r.loss,
                opt(r.accuracy),
                opt(r.vaa),
                r.wall_time_s
            ));
        }
        out
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn last_loss(&self, split: Split) -> Option<f64> {
        self.split(split).last().map(|r| r.loss)
    }

    /// VAA values in epoch order (rows without a probe are skipped).
    pub fn vaa_series(&self) -> Vec<f64> {
        self.split(Split::Train).filter_map(|r| r.vaa).collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub trace: TrainTrace,
    /// set when training stopped early on a non-finite loss or gradient
    pub aborted: Option<String>,
}

/// Head outputs for the final `window` steps of equal-length sequences.
pub fn forward_window<B: Backend>(
    b: &mut B,
    net: &BoundNetwork<B::T>,
    data: &Dataset,
    batch: &[usize],
    window: usize,
) -> Result<Vec<B::T>> {
    let len = data.seq_len(batch[0]);
    if batch.iter().any(|&i| data.seq_len(i) != len) {
        return Err(contract("a batch must hold sequences of one length"));
    }
    if window > len {
        return Err(contract(format!("loss window {window} exceeds sequence length {len}")));
    }
    let mut state = net.initial_state(b, batch.len());
    let mut outs = Vec::with_capacity(window);
    for t in 0..len {
        let x = b.constant(data.batch_step(batch, t));
        let (ns, y) = net.step(b, &state, &x)?;
        state = ns;
        if t + window >= len {
            outs.push(net.head(b, &y)?);
        }
    }
    Ok(outs)
}

fn shard_bounds(n: usize, shards: usize) -> Vec<(usize, usize)> {
    let shards = shards.min(n).max(1);
    (0..shards).map(|s| (s * n / shards, (s + 1) * n / shards)).collect()
}

/// Mean batch loss and its gradient, computed over fixed shards.
pub fn batch_gradient(
    data: &Dataset,
    params: &NetworkParams,
    batch: &[usize],
    shards: usize,
) -> Result<(f64, Vec<Tensor>)> {
    if batch.is_empty() {
        return Err(contract("empty training batch"));
    }
    let bounds = shard_bounds(batch.len(), shards);
    let parts = par::try_map_range(bounds.len(), |s| -> Result<(f64, Vec<Tensor>)> {
        let rows = &batch[bounds[s].0..bounds[s].1];
        let mut g = Graph::new();
        let net = params.bind_graph(&mut g)?;
        let outs = forward_window(&mut g, &net, data, rows, data.loss.window())?;
        let targets: Vec<&Target> = rows.iter().map(|&i| &data.targets[i]).collect();
        let loss = batch_loss(&mut g, data.loss, &outs, &targets)?;
        let grads = g.backward(loss)?;
        Ok((g.get(loss).item(), net.leaves.iter().map(|v| grads.get(*v)).collect()))
    })?;
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut total: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    for ((lo, hi), (l, grads)) in bounds.iter().zip(parts) {
        let w = (hi - lo) as f64 / n;
        loss += w * l;
        for (acc, g) in total.iter_mut().zip(&grads) {
            for (a, x) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += w * x;
            }
        }
    }
    Ok((loss, total))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

/// Mean loss (and accuracy for classification) over `indices`, in chunks of
/// `batch_size`. Does not touch the parameters.
pub fn evaluate(data: &Dataset, params: &NetworkParams, indices: &[usize], batch_size: usize) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(contract("evaluation over an empty index set"));
    }
    let net = params.bind_eager()?;
    let chunks: Vec<&[usize]> = indices.chunks(batch_size.max(1)).collect();
    let parts = par::try_map_range(chunks.len(), |c| -> Result<(f64, usize)> {
        let rows = chunks[c];
        let outs = forward_window(&mut Eager, &net, data, rows, data.loss.window())?;
        let targets: Vec<&Target> = rows.iter().map(|&i| &data.targets[i]).collect();
        let loss = batch_loss(&mut Eager, data.loss, &outs, &targets)?.item();
        let correct = if data.loss.is_classification() {
            correct_predictions(&outs[0], &targets)
        } else {
            0
        };
        Ok((loss * rows.len() as f64, correct))
    })?;
    let n = indices.len() as f64;
    let loss = parts.iter().map(|p| p.0).sum::<f64>() / n;
    let accuracy = data
        .loss
        .is_classification()
        .then(|| parts.iter().map(|p| p.1).sum::<usize>() as f64 / n);
    Ok(Evaluation { loss, accuracy })
}

/// Train on `train` indices with Adam, evaluating on `validation` (and
/// optionally a test set) after every epoch. A non-finite loss or gradient
/// stops training; the trace up to that point is kept.
pub fn train_supervised(
    data: &Dataset,
    train: &[usize],
    validation: &[usize],
    test: Option<&Dataset>,
    params: &mut NetworkParams,
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() && config.epochs > 0 {
        return Err(contract("training set is empty"));
    }
    let mut adam = Adam::new(config.adam, &params.tensors())?;
    let mut trace = TrainTrace::default();
    let start = Instant::now();
    let mut order = train.to_vec();
    for epoch in 1..=config.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, mut grads) = batch_gradient(data, params, batch, config.shards)?;
            if !loss.is_finite() {
                return Ok(TrainOutcome {
                    trace,
                    aborted: Some(format!("non-finite training loss in epoch {epoch}")),
                });
            }
            if let Some(max) = config.clip {
                clip_global_norm(&mut grads, max);
            }
            if let Err(e) = adam.step(&mut params.tensors_mut(), &grads) {
                return Ok(TrainOutcome {
                    trace,
                    aborted: Some(format!("epoch {epoch}: {e}")),
                });
            }
            epoch_loss += loss * batch.len() as f64;
        }
        let vaa = if config.probe_every > 0 && epoch % config.probe_every == 0 {
            let probe_data = TrainSubset { data, indices: train };
            match vaa::estimate_vaa_mean(&probe_data, params, &config.probe, config.probe_set_size, rng) {
                Ok(e) => Some(e.mean),
                Err(Error::Divergent(msg)) => {
                    return Ok(TrainOutcome {
                        trace,
                        aborted: Some(format!("epoch {epoch}: VAA probe diverged: {msg}")),
                    })
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        trace.rows.push(TraceRow {
            epoch,
            split: Split::Train,
            loss: epoch_loss / order.len() as f64,
            accuracy: None,
            vaa,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        if !validation.is_empty() {
            let ev = evaluate(data, params, validation, config.batch_size)?;
            trace.rows.push(TraceRow {
                epoch,
                split: Split::Validation,
                loss: ev.loss,
                accuracy: ev.accuracy,
                vaa,
                wall_time_s: start.elapsed().as_secs_f64(),
            });
            if !ev.loss.is_finite() {
                return Ok(TrainOutcome {
                    trace,
                    aborted: Some(format!("non-finite validation loss in epoch {epoch}")),
                });
            }
        }
        if let Some(test) = test {
            let all: Vec<usize> = (0..test.len()).collect();
            let ev = evaluate(test, params, &all, config.batch_size)?;
            trace.rows.push(TraceRow {
                epoch,
                split: Split::Test,
                loss: ev.loss,
                accuracy: ev.accuracy,
                vaa: None,
                wall_time_s: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(TrainOutcome { trace, aborted: None })
}

/// A view of some sequences of a dataset, renumbered from zero.
pub struct TrainSubset<'a, S: ?Sized> {
    pub data: &'a S,
    pub indices: &'a [usize],
}

impl<S: Sequences + ?Sized> Sequences for TrainSubset<'_, S> {
    fn count(&self) -> usize {
        self.indices.len()
    }

    fn input_dim(&self) -> usize {
        self.data.input_dim()
    }

    fn seq_len(&self, i: usize) -> usize {
        self.data.seq_len(self.indices[i])
    }

    fn fill_step(&self, i: usize, t: usize, out: &mut [f64]) {
        self.data.fill_step(self.indices[i], t, out)
    }
}
