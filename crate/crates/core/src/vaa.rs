//! Variability Amongst Attractors.
//!
//! Given a set of initial states `X = {x_1..x_n}`, a constant perturbation
//! input `u` and a stabilization period `M`, every state is iterated `M`
//! times under `f(·, u)` and
//!
//! ```text
//! VAA_{M,ε} = 1/n Σ_i 1 / Σ_j [ ‖f^M(x_i) - f^M(x_j)‖ ≤ ε ]
//! ```
//!
//! so that `n · VAA` counts the distinct attractors reached. The pairwise
//! indicator is used exactly as written, without transitive grouping.
//!
//! The differentiable proxy replaces the indicator with
//!
//! ```text
//! C*_ij = 1 - max(0, d_ij - ε) / d_ij,   d_ij = ‖tanh f^M(x_i) - tanh f^M(x_j)‖
//! ```
//!
//! with `C*_ij = 1` when `d_ij = 0`. It is evaluated as
//! `1 - max(d - ε, 0) / max(d, ε)`, which agrees with the formula for every
//! `d > 0` and needs no special case at zero.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Backend, Eager};
use crate::cells::BoundCell;
use crate::error::{contract, Error, Result};
use crate::network::{BoundNetwork, HiddenState, NetworkParams};
use crate::par;
use crate::sequences::Sequences;
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaaConfig {
    /// stabilization period M
    pub m: usize,
    /// state-similarity tolerance ε
    pub eps: f64,
    /// estimation iterations I
    pub iterations: usize,
}

impl Default for VaaConfig {
    fn default() -> Self {
        VaaConfig {
            m: 2000,
            eps: DEFAULT_EPSILON,
            iterations: 1,
        }
    }
}

impl VaaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(contract("stabilization period must be >= 1"));
        }
        if !(self.eps > 0.0) {
            return Err(contract(format!("VAA tolerance must be > 0, got {}", self.eps)));
        }
        if self.iterations == 0 {
            return Err(contract("VAA estimation needs at least one iteration"));
        }
        Ok(())
    }
}

/// Hidden states gathered at random timesteps, one row per sequence.
#[derive(Clone, Debug)]
pub struct StateSet<T> {
    pub states: HiddenState<T>,
    /// (index of the sequence in the dataset, sampled timestep, 1-based)
    pub provenance: Vec<(usize, usize)>,
}

impl<T> StateSet<T> {
    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }
}

/// Draw `u ~ N(0, I)` as a `[1, dim]` row.
pub fn sample_perturbation(dim: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(1, dim, data).expect("row shape")
}

/// Sample `t_i ~ U{1..T_i}` for every sequence length.
pub fn sample_timesteps(lengths: &[usize], rng: &mut impl Rng) -> Result<Vec<usize>> {
    lengths
        .iter()
        .map(|&len| {
            if len == 0 {
                Err(contract("sequences must have length >= 1"))
            } else {
                Ok(rng.gen_range(1..=len))
            }
        })
        .collect()
}

/// Run sequences `batch` of `data` from the zero state through their first
/// `ts[r]` inputs and collect the resulting per-layer states, one row per
/// batch entry.
///
/// With `detached`, steps before `max(ts) - window` use that (constant)
/// binding so no gradient flows through them.
pub fn collect_states<B: Backend, S: Sequences + ?Sized>(
    b: &mut B,
    net: &BoundNetwork<B::T>,
    data: &S,
    batch: &[usize],
    ts: &[usize],
    detached: Option<(&BoundNetwork<B::T>, usize)>,
) -> Result<HiddenState<B::T>> {
    if batch.is_empty() {
        return Err(contract("RandomHiddenStates needs a non-empty batch"));
    }
    if batch.len() != ts.len() {
        return Err(contract("one timestep per batch entry is required"));
    }
    if data.input_dim() != net.input_dim {
        return Err(Error::ShapeMismatch {
            op: "sequence input",
            left: vec![data.input_dim()],
            right: vec![net.input_dim],
        });
    }
    for (&i, &t) in batch.iter().zip(ts) {
        if t == 0 || t > data.seq_len(i) {
            return Err(contract(format!(
                "timestep {t} outside sequence {i} of length {}",
                data.seq_len(i)
            )));
        }
    }
    let n = batch.len();
    let t_max = *ts.iter().max().expect("non-empty");
    let cut = detached.map_or(0, |(_, w)| t_max.saturating_sub(w));

    let mut state = net.initial_state(b, n);
    // picks[layer][block][row]
    let mut picks: Vec<Vec<Vec<Option<(B::T, usize)>>>> = state
        .layers
        .iter()
        .map(|blocks| blocks.iter().map(|_| vec![None; n]).collect())
        .collect();
    for k in 1..=t_max {
        let x = b.constant(data.batch_step(batch, k - 1));
        let stepper = match detached {
            Some((frozen, _)) if k <= cut => frozen,
            _ => net,
        };
        let (ns, _) = stepper.step(b, &state, &x)?;
        state = ns;
        for (r, &t) in ts.iter().enumerate() {
            if t == k {
                for (l, blocks) in state.layers.iter().enumerate() {
                    for (blk, s) in blocks.iter().enumerate() {
                        picks[l][blk][r] = Some((s.clone(), r));
                    }
                }
            }
        }
    }
    let mut layers = Vec::with_capacity(picks.len());
    for blocks in picks {
        let mut out = Vec::with_capacity(blocks.len());
        for rows in blocks {
            let rows: Vec<(B::T, usize)> = rows.into_iter().map(|p| p.expect("every row picked")).collect();
            out.push(b.gather_rows(&rows)?);
        }
        layers.push(out);
    }
    Ok(HiddenState { layers })
}

/// Algorithm `RandomHiddenStates`: one state per sequence at a uniformly
/// drawn timestep.
pub fn random_hidden_states<B: Backend, S: Sequences + ?Sized>(
    b: &mut B,
    net: &BoundNetwork<B::T>,
    data: &S,
    batch: &[usize],
    rng: &mut impl Rng,
) -> Result<StateSet<B::T>> {
    let lens: Vec<usize> = batch.iter().map(|&i| data.seq_len(i)).collect();
    let ts = sample_timesteps(&lens, rng)?;
    let states = collect_states(b, net, data, batch, &ts, None)?;
    Ok(StateSet {
        states,
        provenance: batch.iter().copied().zip(ts).collect(),
    })
}

/// Iterate `f` `m` times from the given batch of states.
pub fn stabilize<B: Backend>(
    b: &mut B,
    mut f: impl FnMut(&mut B, &B::T) -> Result<B::T>,
    x: &B::T,
    m: usize,
) -> Result<B::T> {
    let mut s = x.clone();
    for _ in 0..m {
        s = f(b, &s)?;
    }
    Ok(s)
}

/// The layer update `f_l(·, u)` of one cell with its input held at `u`.
pub fn cell_dynamics<'a, B: Backend>(
    b: &mut B,
    cell: &'a BoundCell<B::T>,
    u: &B::T,
) -> Result<impl FnMut(&mut B, &B::T) -> Result<B::T> + 'a>
where
    B::T: 'a,
{
    let xp = cell.project(b, u)?;
    Ok(move |b: &mut B, s: &B::T| cell.step(b, s, &xp))
}

/// Stabilize the whole network jointly under a constant network input `u`.
pub fn stabilize_network<B: Backend>(
    b: &mut B,
    net: &BoundNetwork<B::T>,
    state: HiddenState<B::T>,
    u: &B::T,
    m: usize,
) -> Result<HiddenState<B::T>> {
    let mut s = state;
    for _ in 0..m {
        s = net.step(b, &s, u)?.0;
    }
    Ok(s)
}

/// Truncated VAA from already stabilized states (`[n, width]`).
pub fn vaa_from_finals(finals: &Tensor, eps: f64) -> Result<f64> {
    let n = finals.rows();
    if n == 0 || finals.shape().len() != 2 {
        return Err(contract("VAA needs at least one state"));
    }
    if !finals.is_finite() {
        return Err(Error::Divergent("non-finite state after stabilization".into()));
    }
    let counts = par::map_range(n, |i| {
        let xi = finals.row(i);
        (0..n)
            .filter(|&j| {
                let d2: f64 = xi.iter().zip(finals.row(j)).map(|(a, c)| (a - c) * (a - c)).sum();
                d2.sqrt() <= eps
            })
            .count()
    });
    // group equal counts so that k rows sharing a count contribute k / c in one
    // division; a single attractor then gives exactly 1 / n
    let mut hist = std::collections::BTreeMap::new();
    for c in counts {
        *hist.entry(c).or_insert(0usize) += 1;
    }
    Ok(hist.iter().map(|(&c, &k)| k as f64 / c as f64).sum::<f64>() / n as f64)
}

/// `VAA_{M,ε}(f, X, u)` where `f` is one update step with `u` already bound.
pub fn truncated_vaa(
    f: impl FnMut(&mut Eager, &Tensor) -> Result<Tensor>,
    x: &Tensor,
    m: usize,
    eps: f64,
) -> Result<f64> {
    let finals = stabilize(&mut Eager, f, x, m)?;
    vaa_from_finals(&finals, eps)
}

/// `C*` similarity matrix row sums and the proxy value, on any backend.
pub fn vaa_star_from_finals<B: Backend>(b: &mut B, finals: &B::T, eps: f64) -> Result<B::T> {
    let n = b.value(finals).rows();
    if n == 0 || b.value(finals).shape().len() != 2 {
        return Err(contract("VAA* needs at least one state"));
    }
    if !b.value(finals).is_finite() {
        return Err(Error::Divergent("non-finite state after stabilization".into()));
    }
    let y = b.tanh(finals);
    let d = b.pairwise_dist(&y);
    let over = b.affine(&d, 1.0, -eps);
    let num = b.max_const(&over, 0.0);
    let den = b.max_const(&d, eps);
    let ratio = b.div(&num, &den)?;
    let c = b.affine(&ratio, -1.0, 1.0);
    let rows = b.sum_last(&c);
    let one = b.constant(Tensor::scalar(1.0));
    let inv = b.div(&one, &rows)?;
    let total = b.sum(&inv);
    Ok(b.affine(&total, 1.0 / n as f64, 0.0))
}

/// `VAA*_{M,ε}(f, X, u)`, differentiable when `B` is a graph.
pub fn vaa_star<B: Backend>(
    b: &mut B,
    f: impl FnMut(&mut B, &B::T) -> Result<B::T>,
    x: &B::T,
    m: usize,
    eps: f64,
) -> Result<B::T> {
    let finals = stabilize(b, f, x, m)?;
    vaa_star_from_finals(b, &finals, eps)
}

/// Draw a batch of `n` distinct indices (all indices when `n >= len`).
pub fn sample_batch(len: usize, n: usize, rng: &mut impl Rng) -> Vec<usize> {
    if n >= len {
        return (0..len).collect();
    }
    index::sample(rng, len, n).into_vec()
}

#[derive(Clone, Debug)]
pub struct VaaEstimate {
    pub mean: f64,
    pub values: Vec<f64>,
    pub set_size: usize,
}

/// Mean truncated VAA of the whole network over `I` fresh batches, fresh
/// hidden-state draws and fresh perturbations of the network input.
pub fn estimate_vaa_mean<S: Sequences + ?Sized>(
    dataset: &S,
    params: &NetworkParams,
    config: &VaaConfig,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<VaaEstimate> {
    config.validate()?;
    if dataset.count() == 0 {
        return Err(contract("VAA estimation needs a non-empty dataset"));
    }
    let net = params.bind_eager()?;
    let mut values = Vec::with_capacity(config.iterations);
    let mut set_size = 0;
    for _ in 0..config.iterations {
        let batch = sample_batch(dataset.count(), batch_size.max(1), rng);
        let set = random_hidden_states(&mut Eager, &net, dataset, &batch, rng)?;
        let u = sample_perturbation(params.spec.input_dim, rng);
        set_size = set.len();
        let finals = stabilize_network_chunked(&net, &set.states, &u, config.m)?;
        values.push(vaa_from_finals(&finals, config.eps)?);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(VaaEstimate {
        mean,
        values,
        set_size,
    })
}

const STABILIZE_CHUNK: usize = 16;

/// Network stabilization split into fixed row chunks that run in parallel;
/// returns the concatenated full states.
pub fn stabilize_network_chunked(
    net: &BoundNetwork<Tensor>,
    states: &HiddenState<Tensor>,
    u: &Tensor,
    m: usize,
) -> Result<Tensor> {
    let n = states.layers[0][0].rows();
    let chunks = n.div_ceil(STABILIZE_CHUNK);
    let parts = par::try_map_range(chunks, |c| -> Result<Tensor> {
        let rows: Vec<usize> = (c * STABILIZE_CHUNK..((c + 1) * STABILIZE_CHUNK).min(n)).collect();
        let sub = select_rows(states, &rows)?;
        let mut e = Eager;
        let fin = stabilize_network(&mut e, net, sub, u, m)?;
        net.full_state(&mut e, &fin)
    })?;
    stack_rows(&parts)
}

/// Per-layer stabilization of the block `block` of layer `l`.
pub fn stabilize_block_chunked(cell: &BoundCell<Tensor>, states: &Tensor, u: &Tensor, m: usize) -> Result<Tensor> {
    let n = states.rows();
    let chunks = n.div_ceil(STABILIZE_CHUNK);
    let parts = par::try_map_range(chunks, |c| -> Result<Tensor> {
        let rows: Vec<(&Tensor, usize)> = (c * STABILIZE_CHUNK..((c + 1) * STABILIZE_CHUNK).min(n))
            .map(|r| (states, r))
            .collect();
        let sub = crate::tensor::gather_rows(&rows)?;
        let mut e = Eager;
        let f = cell_dynamics(&mut e, cell, u)?;
        stabilize(&mut e, f, &sub, m)
    })?;
    stack_rows(&parts)
}

fn select_rows(states: &HiddenState<Tensor>, rows: &[usize]) -> Result<HiddenState<Tensor>> {
    let layers = states
        .layers
        .iter()
        .map(|blocks| {
            blocks
                .iter()
                .map(|t| {
                    let picks: Vec<(&Tensor, usize)> = rows.iter().map(|&r| (t, r)).collect();
                    crate::tensor::gather_rows(&picks)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HiddenState { layers })
}

fn stack_rows(parts: &[Tensor]) -> Result<Tensor> {
    let cols = parts.first().map_or(0, Tensor::cols);
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        data.extend_from_slice(p.data());
        rows += p.rows();
    }
    Tensor::matrix(rows, cols, data)
}

/// One probe measurement, emitted as a CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub step: usize,
    /// layer index, or `None` for the whole network
    pub layer: Option<usize>,
    pub vaa: f64,
    pub vaa_star: Option<f64>,
    pub set_size: usize,
    pub m: usize,
    pub eps: f64,
}

impl ProbeRow {
    pub const HEADER: &'static str = "step,layer,vaa,vaa_star,set_size,M,eps";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.layer.map_or("network".to_string(), |l| l.to_string()),
            self.vaa,
            self.vaa_star.map_or(String::new(), |v| v.to_string()),
            self.set_size,
            self.m,
            self.eps
        )
    }
}

/// Network-level VAA plus per-layer VAA and VAA* of the warmed blocks, all
/// on one batch. Read-only on the parameters.
pub fn probe<S: Sequences + ?Sized>(
    dataset: &S,
    params: &NetworkParams,
    config: &VaaConfig,
    batch_size: usize,
    step: usize,
    rng: &mut impl Rng,
) -> Result<Vec<ProbeRow>> {
    config.validate()?;
    if dataset.count() == 0 {
        return Err(contract("VAA probe needs a non-empty dataset"));
    }
    let net = params.bind_eager()?;
    let batch = sample_batch(dataset.count(), batch_size.max(1), rng);
    let set = random_hidden_states(&mut Eager, &net, dataset, &batch, rng)?;
    let n = set.len();
    let u = sample_perturbation(params.spec.input_dim, rng);
    let finals = stabilize_network_chunked(&net, &set.states, &u, config.m)?;
    let mut rows = vec![ProbeRow {
        step,
        layer: None,
        vaa: vaa_from_finals(&finals, config.eps)?,
        vaa_star: Some(vaa_star_from_finals(&mut Eager, &finals, config.eps)?.item()),
        set_size: n,
        m: config.m,
        eps: config.eps,
    }];
    for l in 0..net.layers.len() {
        let Some(blk) = params.warm_block(l) else { continue };
        let cell = &net.layers[l][blk];
        let u = sample_perturbation(cell.input, rng);
        let fin = stabilize_block_chunked(cell, &set.states.layers[l][blk], &u, config.m)?;
        rows.push(ProbeRow {
            step,
            layer: Some(l),
            vaa: vaa_from_finals(&fin, config.eps)?,
            vaa_star: Some(vaa_star_from_finals(&mut Eager, &fin, config.eps)?.item()),
            set_size: n,
            m: config.m,
            eps: config.eps,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use crate::cells::CellKind;
    use crate::network::NetworkSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f64]) -> Tensor {
        Tensor::matrix(v.len(), 1, v.to_vec()).unwrap()
    }

    fn tanh3(_: &mut Eager, s: &Tensor) -> Result<Tensor> {
        Ok(s.map(|x| (3.0 * x).tanh()))
    }

    #[test]
    fn two_symmetric_attractors() {
        let v = truncated_vaa(tanh3, &col(&[-0.5, 0.5, 0.7]), 100, 1e-4).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn monostable_and_all_distinct() {
        let same = col(&[0.3, 0.3, 0.3, 0.3]);
        assert_eq!(vaa_from_finals(&same, 1e-4).unwrap(), 0.25);
        let apart = col(&[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(vaa_from_finals(&apart, 1e-4).unwrap(), 1.0);
    }

    #[test]
    fn threshold_counts_as_same() {
        let x = col(&[0.0, 0.5]);
        assert_eq!(vaa_from_finals(&x, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn divergence_is_reported() {
        let r = truncated_vaa(|_, s| Ok(s.map(|x| 10.0 * x * x + 1.0)), &col(&[1.0, 2.0]), 50, 1e-4);
        assert!(matches!(r, Err(Error::Divergent(_))));
    }

    #[test]
    fn c_star_values() {
        // d = 2ε in tanh space → C* = 1/2 for the off-diagonal pair
        let eps = 1e-2;
        let a = 0.1f64;
        let b = (a.tanh() + 2.0 * eps).atanh();
        let v = vaa_star_from_finals(&mut Eager, &col(&[a, b]), eps).unwrap().item();
        // each row sum is 1 + 0.5
        assert!((v - 1.0 / 1.5).abs() < 1e-9, "{v}");
        // within ε → exactly 1 similarity, VAA* = 1/2
        let v = vaa_star_from_finals(&mut Eager, &col(&[0.1, 0.1 + 1e-5]), 1e-4).unwrap().item();
        assert_eq!(v, 0.5);
        // identical rows: guarded, no NaN
        let v = vaa_star_from_finals(&mut Eager, &col(&[0.2, 0.2]), 1e-4).unwrap().item();
        assert_eq!(v, 0.5);
    }

    #[test]
    fn zero_distance_has_finite_gradient() {
        let mut g = Graph::new();
        let x = g.param(col(&[0.2, 0.2, 0.9]));
        let v = vaa_star_from_finals(&mut g, &x, 1e-4).unwrap();
        let grads = g.backward(v).unwrap();
        assert!(grads.get(x).is_finite());
    }

    #[test]
    fn proxy_gradient_matches_differences() {
        use crate::autodiff::gradient_check;
        let x = Tensor::matrix(4, 2, vec![0.1, -0.3, 0.5, 0.2, 0.1003, -0.2995, -0.7, 0.4]).unwrap();
        let rep = gradient_check(|g, p| vaa_star_from_finals(g, &p[0], 1e-3), &[x], 1e-7, 1e-4).unwrap();
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn zero_network_is_monostable() {
        let spec = NetworkSpec::stacked(2, CellKind::Gru, &[4, 4], None);
        let mut p = NetworkParams::init(&spec, 0).unwrap();
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let data: Vec<Tensor> = (0..10)
            .map(|i| Tensor::matrix(5 + i, 2, vec![1.0 + i as f64; 2 * (5 + i)]).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = p.bind_eager().unwrap();
        let set = random_hidden_states(&mut Eager, &net, &data, &(0..10).collect::<Vec<_>>(), &mut rng).unwrap();
        let full = net.full_state(&mut Eager, &set.states).unwrap();
        for r in 1..10 {
            assert_eq!(full.row(r), full.row(0));
        }
        let cfg = VaaConfig { m: 20, eps: 1e-4, iterations: 3 };
        let est = estimate_vaa_mean(&data, &p, &cfg, 10, &mut rng).unwrap();
        assert_eq!(est.values, vec![0.1; 3]);
    }

    #[test]
    fn single_step_sequence() {
        let spec = NetworkSpec::stacked(1, CellKind::Gru, &[3], None);
        let p = NetworkParams::init(&spec, 4).unwrap();
        let net = p.bind_eager().unwrap();
        let seq = Tensor::matrix(1, 1, vec![0.7]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = random_hidden_states(&mut Eager, &net, std::slice::from_ref(&seq), &[0], &mut rng).unwrap();
        assert_eq!(set.provenance, vec![(0, 1)]);
        let s0 = net.initial_state(&mut Eager, 1);
        let x = Tensor::matrix(1, 1, vec![0.7]).unwrap();
        let (s1, _) = net.step(&mut Eager, &s0, &x).unwrap();
        assert_eq!(set.states.layers[0][0], s1.layers[0][0]);
        assert!(random_hidden_states(&mut Eager, &net, &vec![seq], &[], &mut rng).is_err());
    }
}
