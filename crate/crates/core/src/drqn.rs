//! Deep recurrent Q-learning on the T-Maze.
//!
//! The Q-network reads a history `x_0 = (0, o_0)`, `x_k = (a_{k-1}, o_k)`
//! (one-hot action, one-hot observation) and its head emits one Q-value per
//! action. Episodes are generated ε-greedily, every transition goes to a FIFO
//! replay buffer, and after each episode `I` Adam steps reduce
//! `Σ_b (y_b - Q_θ(η_b, a_b))²` with `y = r` on terminal next observations and
//! `y = r + γ max_a Q_θ'(η', a)` otherwise, `θ'` being a copy of `θ` refreshed
//! every `C` episodes.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Backend, Eager, Graph};
use crate::error::{contract, Error, Result};
use crate::network::{BoundNetwork, HiddenState, NetworkParams};
use crate::sequences::Sequences;
use crate::tensor::{self, Tensor};
use crate::tmaze::{
    exploration_action, Action, Observation, TMaze, TMazeConfig, NUM_ACTIONS, NUM_OBSERVATIONS, TREASURE_REWARD,
};
use crate::trainer::{Adam, AdamConfig};
use crate::vaa::{self, VaaConfig};
use crate::warmup::{self, WarmupConfig, WarmupTrace};

/// Width of one history input: one-hot action then one-hot observation.
pub const HISTORY_INPUT: usize = NUM_ACTIONS + NUM_OBSERVATIONS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrqnConfig {
    /// replay capacity N (transitions)
    pub capacity: usize,
    /// target update period C (episodes)
    pub target_period: usize,
    /// episodes E
    pub episodes: usize,
    /// truncation horizon H; `None` uses `⌈3L⌉`
    pub horizon: Option<usize>,
    /// gradient steps I after each episode
    pub grad_steps: usize,
    /// exploration rate ε
    pub epsilon: f64,
    pub adam: AdamConfig,
    /// batch size B
    pub batch_size: usize,
    /// fraction of N filled with exploration transitions before training
    pub prefill_fraction: f64,
    /// warm up on the pre-filled histories when set
    pub warmup: Option<WarmupConfig>,
    /// greedy evaluation every this many episodes (0 disables it)
    pub eval_every: usize,
    /// consecutive optimal evaluations that certify an optimal policy
    pub optimal_window: usize,
    /// stop once optimality is certified
    pub stop_when_optimal: bool,
    /// buffer VAA probe every this many episodes (0 disables it)
    pub vaa_every: usize,
    pub vaa: VaaConfig,
    pub vaa_set_size: usize,
    /// window of the smoothed-return column
    pub smoothing: usize,
}

impl Default for DrqnConfig {
    fn default() -> Self {
        DrqnConfig {
            capacity: 50_000,
            target_period: 25,
            episodes: 5000,
            horizon: None,
            grad_steps: 10,
            epsilon: 0.1,
            adam: AdamConfig::default(),
            batch_size: 32,
            prefill_fraction: 0.1,
            warmup: None,
            eval_every: 1,
            optimal_window: 50,
            stop_when_optimal: false,
            vaa_every: 0,
            vaa: VaaConfig {
                m: 10_000,
                ..VaaConfig::default()
            },
            vaa_set_size: 100,
            smoothing: 50,
        }
    }
}

impl DrqnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 || self.target_period == 0 || self.batch_size == 0 {
            return Err(contract("capacity, target period and batch size must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(contract(format!("exploration rate must lie in [0, 1], got {}", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.prefill_fraction) {
            return Err(contract("prefill fraction must lie in [0, 1]"));
        }
        if self.horizon == Some(0) {
            return Err(contract("truncation horizon must be >= 1"));
        }
        if let Some(w) = &self.warmup {
            w.validate()?;
        }
        Ok(())
    }
}

/// One recorded episode: observations `o_0..o_T`, actions and rewards
/// `0..T-1`, and whether `o_T` is terminal.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Episode {
    pub observations: Vec<Observation>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub terminal: bool,
}

impl Episode {
    pub fn start(o0: Observation) -> Self {
        Episode {
            observations: vec![o0],
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Network input `x_k` of this episode's history.
    pub fn fill_input(&self, k: usize, out: &mut [f64]) {
        out.fill(0.0);
        if k > 0 {
            out[self.actions[k - 1].index()] = 1.0;
        }
        out[NUM_ACTIONS + self.observations[k].index()] = 1.0;
    }

    /// History `η_{0:t}` as a `[t+1, 8]` tensor.
    pub fn history(&self, t: usize) -> Tensor {
        let mut data = vec![0.0; (t + 1) * HISTORY_INPUT];
        for k in 0..=t {
            self.fill_input(k, &mut data[k * HISTORY_INPUT..(k + 1) * HISTORY_INPUT]);
        }
        Tensor::matrix(t + 1, HISTORY_INPUT, data).expect("history shape")
    }
}

/// `(η_{0:t}, a_t, r_t, o_{t+1}, η_{0:t+1})`, stored as a step of a shared
/// episode record.
#[derive(Clone, Debug)]
pub struct Transition {
    pub episode: Arc<Episode>,
    pub t: usize,
}

impl Transition {
    pub fn action(&self) -> Action {
        self.episode.actions[self.t]
    }

    pub fn reward(&self) -> f64 {
        self.episode.rewards[self.t]
    }

    pub fn next_observation(&self) -> Observation {
        self.episode.observations[self.t + 1]
    }

    /// Whether `o_{t+1}` is the terminal observation of the episode.
    pub fn next_is_terminal(&self) -> bool {
        self.episode.terminal && self.t + 1 == self.episode.len()
    }
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(contract("replay capacity must be >= 1"));
        }
        Ok(ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Append, evicting the oldest transition when full.
    pub fn push(&mut self, tr: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(tr);
    }

    pub fn push_episode(&mut self, ep: Episode) {
        let ep = Arc::new(ep);
        for t in 0..ep.len() {
            self.push(Transition { episode: ep.clone(), t });
        }
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        (0..n).map(|_| rng.gen_range(0..self.items.len())).collect()
    }
}

/// Histories `η_{0:len-1}` of episode records, as network input sequences.
pub struct Histories<'a> {
    pub items: Vec<(&'a Episode, usize)>,
}

impl Histories<'_> {
    /// `η_{0:t}` (with `next`, `η_{0:t+1}`) of every buffer transition.
    pub fn of_buffer(buffer: &ReplayBuffer, next: bool) -> Histories<'_> {
        let extra = if next { 2 } else { 1 };
        Histories {
            items: buffer.iter().map(|tr| (&*tr.episode, tr.t + extra)).collect(),
        }
    }
}

impl Sequences for Histories<'_> {
    fn count(&self) -> usize {
        self.items.len()
    }

    fn input_dim(&self) -> usize {
        HISTORY_INPUT
    }

    fn seq_len(&self, i: usize) -> usize {
        self.items[i].1
    }

    fn fill_step(&self, i: usize, t: usize, out: &mut [f64]) {
        self.items[i].0.fill_input(t, out)
    }
}

/// Head outputs at the last step of each sequence `batch[r]`, as `[n, out]`.
pub fn final_outputs<B: Backend, S: Sequences + ?Sized>(
    b: &mut B,
    net: &BoundNetwork<B::T>,
    data: &S,
    batch: &[usize],
) -> Result<B::T> {
    if batch.is_empty() {
        return Err(contract("empty history batch"));
    }
    let lens: Vec<usize> = batch.iter().map(|&i| data.seq_len(i)).collect();
    if lens.contains(&0) {
        return Err(contract("histories must have length >= 1"));
    }
    let t_max = *lens.iter().max().expect("non-empty");
    let mut state = net.initial_state(b, batch.len());
    let mut picks: Vec<Option<(B::T, usize)>> = vec![None; batch.len()];
    for k in 1..=t_max {
        let x = b.constant(data.batch_step(batch, k - 1));
        let (ns, y) = net.step(b, &state, &x)?;
        state = ns;
        if lens.contains(&k) {
            let q = net.head(b, &y)?;
            for (r, &len) in lens.iter().enumerate() {
                if len == k {
                    picks[r] = Some((q.clone(), r));
                }
            }
        }
    }
    let rows: Vec<(B::T, usize)> = picks.into_iter().map(|p| p.expect("every row ends")).collect();
    b.gather_rows(&rows)
}

/// Q-values of one history `η_{0:t}` (a `[t+1, 8]` tensor).
pub fn q_forward(params: &NetworkParams, history: &Tensor) -> Result<Vec<f64>> {
    let net = params.bind_eager()?;
    let seqs = vec![history.clone()];
    Ok(final_outputs(&mut Eager, &net, &seqs, &[0])?.into_data())
}

/// Greedy action: argmax with ties going to the lowest index.
pub fn greedy_action(q: &[f64]) -> Action {
    let (_, idx) = tensor::max_last(&Tensor::vector(q.to_vec()));
    Action::from_index(idx[0]).expect("four Q-values")
}

pub fn act_epsilon_greedy(q: &[f64], epsilon: f64, rng: &mut impl Rng) -> Action {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        exploration_action(rng)
    } else {
        greedy_action(q)
    }
}

/// Q-network state carried along one episode for incremental acting.
pub struct Actor<'a> {
    net: &'a BoundNetwork<Tensor>,
    state: HiddenState<Tensor>,
}

impl<'a> Actor<'a> {
    pub fn new(net: &'a BoundNetwork<Tensor>) -> Self {
        Actor {
            net,
            state: net.initial_state(&mut Eager, 1),
        }
    }

    /// Feed the next input `x_k` and return the Q-values.
    pub fn observe(&mut self, prev_action: Option<Action>, obs: Observation) -> Result<Vec<f64>> {
        let mut x = vec![0.0; HISTORY_INPUT];
        if let Some(a) = prev_action {
            x[a.index()] = 1.0;
        }
        x[NUM_ACTIONS + obs.index()] = 1.0;
        let x = Tensor::matrix(1, HISTORY_INPUT, x)?;
        let (ns, y) = self.net.step(&mut Eager, &self.state, &x)?;
        self.state = ns;
        Ok(self.net.head(&mut Eager, &y)?.into_data())
    }
}

/// Play one episode. `policy` maps Q-values (or `None` when no network
/// drives the episode) to an action.
pub fn run_episode(
    env: &TMaze,
    net: Option<&BoundNetwork<Tensor>>,
    horizon: usize,
    rng: &mut impl Rng,
    mut policy: impl FnMut(Option<&[f64]>, &mut dyn rand::RngCore) -> Action,
) -> Result<Episode> {
    let (mut s, o0) = env.reset(rng);
    run_from(env, net, horizon, &mut s, o0, rng, &mut policy)
}

fn run_from(
    env: &TMaze,
    net: Option<&BoundNetwork<Tensor>>,
    horizon: usize,
    s: &mut crate::tmaze::MazeState,
    o0: Observation,
    rng: &mut impl Rng,
    policy: &mut impl FnMut(Option<&[f64]>, &mut dyn rand::RngCore) -> Action,
) -> Result<Episode> {
    let mut ep = Episode::start(o0);
    let mut actor = net.map(Actor::new);
    let mut q = match actor.as_mut() {
        Some(a) => Some(a.observe(None, o0)?),
        None => None,
    };
    for _ in 0..horizon {
        let a = policy(q.as_deref(), rng);
        let r = env.step(s, a);
        *s = r.state;
        ep.actions.push(a);
        ep.rewards.push(r.reward);
        ep.observations.push(r.observation);
        if r.terminal {
            ep.terminal = true;
            break;
        }
        if let Some(actor) = actor.as_mut() {
            q = Some(actor.observe(Some(a), r.observation)?);
        }
    }
    Ok(ep)
}

/// Greedy return on both layouts; the mean equals 4 only when the greedy
/// policy finds the treasure in both.
pub fn greedy_evaluation(env: &TMaze, net: &BoundNetwork<Tensor>, horizon: usize) -> Result<f64> {
    let mut total = 0.0;
    for layout in [crate::tmaze::Layout::Up, crate::tmaze::Layout::Down] {
        let mut s = crate::tmaze::MazeState { layout, pos: (0, 0) };
        let o0 = env.observe(&s);
        let mut policy = |q: Option<&[f64]>, _: &mut dyn rand::RngCore| greedy_action(q.expect("network"));
        // the rng is unused by a greedy policy
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let ep = run_from(env, Some(net), horizon, &mut s, o0, &mut rng, &mut policy)?;
        total += ep.total_return();
    }
    Ok(total / 2.0)
}

/// Targets `y_b` for buffer transitions `batch` under the target network.
pub fn compute_targets(
    buffer: &ReplayBuffer,
    batch: &[usize],
    target: &BoundNetwork<Tensor>,
    discount: f64,
) -> Result<Vec<f64>> {
    let hist = Histories {
        items: batch
            .iter()
            .map(|&i| {
                let tr = buffer.get(i);
                (&*tr.episode, tr.t + 2)
            })
            .collect(),
    };
    let idx: Vec<usize> = (0..batch.len()).collect();
    let q_next = final_outputs(&mut Eager, target, &hist, &idx)?;
    let (max_q, _) = tensor::max_last(&q_next);
    Ok(batch
        .iter()
        .zip(max_q.data())
        .map(|(&i, &m)| {
            let tr = buffer.get(i);
            if tr.next_is_terminal() {
                tr.reward()
            } else {
                tr.reward() + discount * m
            }
        })
        .collect())
}

/// Squared TD loss `Σ_b (y_b - Q_θ(η_b, a_b))²` and its gradient.
pub fn td_gradient(
    buffer: &ReplayBuffer,
    batch: &[usize],
    online: &NetworkParams,
    targets: &[f64],
) -> Result<(f64, Vec<Tensor>)> {
    let hist = Histories {
        items: batch
            .iter()
            .map(|&i| {
                let tr = buffer.get(i);
                (&*tr.episode, tr.t + 1)
            })
            .collect(),
    };
    let n = batch.len();
    let mut g = Graph::new();
    let net = online.bind_graph(&mut g)?;
    let idx: Vec<usize> = (0..n).collect();
    let q = final_outputs(&mut g, &net, &hist, &idx)?;
    let mut mask = vec![0.0; n * NUM_ACTIONS];
    for (r, &i) in batch.iter().enumerate() {
        mask[r * NUM_ACTIONS + buffer.get(i).action().index()] = 1.0;
    }
    let mask = g.constant(Tensor::matrix(n, NUM_ACTIONS, mask)?);
    let picked = g.mul(&q, &mask)?;
    let qa = g.sum_last(&picked);
    let y = g.constant(Tensor::vector(targets.to_vec()));
    let d = g.sub(&y, &qa)?;
    let sq = g.square(&d);
    let loss = g.sum(&sq);
    let grads = g.backward(loss)?;
    Ok((g.get(loss).item(), net.leaves.iter().map(|v| grads.get(*v)).collect()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrqnRow {
    pub episode: usize,
    pub episode_return: f64,
    pub smoothed_return: f64,
    pub eval_return: Option<f64>,
    pub vaa: Option<f64>,
    pub epsilon: f64,
    pub buffer_size: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DrqnTrace {
    pub rows: Vec<DrqnRow>,
}

impl DrqnTrace {
    pub const HEADER: &'static str = "episode,return,smoothed_return,eval_return,vaa,epsilon,buffer_size";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.episode,
                r.episode_return,
                r.smoothed_return,
                opt(r.eval_return),
                opt(r.vaa),
                r.epsilon,
                r.buffer_size
            ));
        }
        out
    }
}

/// First episode from which `window` consecutive evaluations are optimal.
pub fn first_optimal_episode(evals: &[(usize, f64)], window: usize) -> Option<usize> {
    let mut run = 0;
    for (k, &(_, r)) in evals.iter().enumerate() {
        if r == TREASURE_REWARD {
            run += 1;
            if run == window {
                return Some(evals[k + 1 - window].0);
            }
        } else {
            run = 0;
        }
    }
    None
}

#[derive(Clone, Debug)]
pub struct DrqnOutcome {
    pub trace: DrqnTrace,
    pub warmup: Option<WarmupTrace>,
    pub optimal_episode: Option<usize>,
    /// episodes at whose start the target network was refreshed
    pub target_syncs: Vec<usize>,
    pub aborted: Option<String>,
    pub wall_time_s: f64,
}

/// Pre-fill the buffer with exploration episodes until it holds `count`
/// transitions (or is full).
pub fn prefill(env: &TMaze, buffer: &mut ReplayBuffer, count: usize, horizon: usize, rng: &mut impl Rng) -> Result<()> {
    let target = count.min(buffer.capacity());
    while buffer.len() < target {
        let ep = run_episode(env, None, horizon, rng, |_, r| exploration_action(&mut RngRef(r)))?;
        buffer.push_episode(ep);
    }
    Ok(())
}

/// Full DRQN run; `params` holds the online network on return.
pub fn train_drqn(
    env_config: &TMazeConfig,
    params: &mut NetworkParams,
    config: &DrqnConfig,
    rng: &mut impl Rng,
) -> Result<DrqnOutcome> {
    config.validate()?;
    if params.spec.input_dim != HISTORY_INPUT || params.spec.output_dim != Some(NUM_ACTIONS) {
        return Err(contract(format!(
            "Q-network needs input {HISTORY_INPUT} and a {NUM_ACTIONS}-wide head"
        )));
    }
    let start = Instant::now();
    let env = TMaze::new(env_config)?;
    let horizon = config.horizon.unwrap_or_else(|| crate::tmaze::default_horizon(env.length()));
    let mut buffer = ReplayBuffer::new(config.capacity)?;
    let fill = (config.prefill_fraction * config.capacity as f64).round() as usize;
    prefill(&env, &mut buffer, fill, horizon, rng)?;

    let warm_trace = match &config.warmup {
        Some(w) => {
            let hist = Histories::of_buffer(&buffer, true);
            let w = WarmupConfig {
                batch_size: w.batch_size.min(hist.count()),
                ..w.clone()
            };
            Some(warmup::warmup(&hist, params, &w, rng)?)
        }
        None => None,
    };

    let mut target = params.clone();
    let mut adam = Adam::new(config.adam, &params.tensors())?;
    let mut trace = DrqnTrace::default();
    let mut evals: Vec<(usize, f64)> = Vec::new();
    let mut returns: VecDeque<f64> = VecDeque::new();
    let mut aborted = None;
    let mut optimal_episode = None;
    let mut target_syncs = Vec::new();

    'episodes: for e in 0..config.episodes {
        if e % config.target_period == 0 {
            target.copy_from(params)?;
            target_syncs.push(e);
        }
        let ep = {
            let net = params.bind_eager()?;
            let eps = config.epsilon;
            run_episode(&env, Some(&net), horizon, rng, |q, r| {
                act_epsilon_greedy(q.expect("network"), eps, &mut RngRef(r))
            })?
        };
        let ret = ep.total_return();
        buffer.push_episode(ep);

        if !buffer.is_empty() {
            let target_net = target.bind_eager()?;
            for _ in 0..config.grad_steps {
                let batch = buffer.sample(config.batch_size, rng);
                let y = compute_targets(&buffer, &batch, &target_net, env_config.discount)?;
                let (loss, grads) = td_gradient(&buffer, &batch, params, &y)?;
                if !loss.is_finite() {
                    aborted = Some(format!("non-finite TD loss in episode {e}"));
                    break 'episodes;
                }
                if let Err(err) = adam.step(&mut params.tensors_mut(), &grads) {
                    aborted = Some(format!("episode {e}: {err}"));
                    break 'episodes;
                }
            }
        }

        returns.push_back(ret);
        if returns.len() > config.smoothing.max(1) {
            returns.pop_front();
        }
        let eval_return = if config.eval_every > 0 && e % config.eval_every == 0 {
            let net = params.bind_eager()?;
            let r = greedy_evaluation(&env, &net, horizon)?;
            evals.push((e, r));
            Some(r)
        } else {
            None
        };
        let vaa = if config.vaa_every > 0 && e % config.vaa_every == 0 {
            let hist = Histories::of_buffer(&buffer, false);
            match vaa::estimate_vaa_mean(&hist, params, &config.vaa, config.vaa_set_size, rng) {
                Ok(v) => Some(v.mean),
                Err(Error::Divergent(msg)) => {
                    aborted = Some(format!("episode {e}: VAA probe diverged: {msg}"));
                    break;
                }
                Err(err) => return Err(err),
            }
        } else {
            None
        };
        trace.rows.push(DrqnRow {
            episode: e,
            episode_return: ret,
            smoothed_return: returns.iter().sum::<f64>() / returns.len() as f64,
            eval_return,
            vaa,
            epsilon: config.epsilon,
            buffer_size: buffer.len(),
        });
        if optimal_episode.is_none() {
            optimal_episode = first_optimal_episode(&evals, config.optimal_window);
            if optimal_episode.is_some() && config.stop_when_optimal {
                break;
            }
        }
    }
    Ok(DrqnOutcome {
        trace,
        warmup: warm_trace,
        optimal_episode,
        target_syncs,
        aborted,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Adapter giving a `dyn RngCore` the `Rng` extension methods by value.
struct RngRef<'a>(&'a mut dyn rand::RngCore);

impl rand::RngCore for RngRef<'_> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}
