//! Gated recurrent cells.
//!
//! Every cell keeps its weights as three tensors: `w_x` of shape
//! `[input, G·H]`, `w_h` of shape `[H, G·H]` and `bias` of shape `[G·H]`,
//! where `G` is the number of gate blocks and `H` the hidden width. Gate
//! blocks are laid out left to right in the order listed below. `σ` is the
//! logistic function, `∘` the elementwise product and `[a]_k` the k-th block
//! of a pre-activation.
//!
//! GRU (blocks r, z, n):
//! ```text
//! r  = σ(x W_xr + h W_hr + b_r)
//! z  = σ(x W_xz + h W_hz + b_z)
//! n  = tanh(x W_xn + (r ∘ h) W_hn + b_n)
//! h' = (1 - z) ∘ h + z ∘ n
//! ```
//!
//! LSTM (blocks i, f, g, o), state is the concatenation `[h, c]`:
//! ```text
//! i  = σ(x W_xi + h W_hi + b_i)
//! f  = σ(x W_xf + h W_hf + b_f)
//! g  = tanh(x W_xg + h W_hg + b_g)
//! o  = σ(x W_xo + h W_ho + b_o)
//! c' = f ∘ c + i ∘ g
//! h' = o ∘ tanh(c')
//! ```
//!
//! MGU (blocks f, n):
//! ```text
//! f  = σ(x W_xf + h W_hf + b_f)
//! n  = tanh(x W_xn + (f ∘ h) W_hn + b_n)
//! h' = (1 - f) ∘ h + f ∘ n
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Backend;
use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm {
        /// Chrono initialisation of the forget/input biases with this `T_max`.
        #[serde(default)]
        chrono: Option<usize>,
    },
    Mgu,
}

impl CellKind {
    pub const LSTM: CellKind = CellKind::Lstm { chrono: None };

    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm { .. } => 4,
            CellKind::Mgu => 2,
        }
    }

    /// Width of the recurrent state vector for a hidden width `h`.
    pub fn state_width(self, hidden: usize) -> usize {
        match self {
            CellKind::Lstm { .. } => 2 * hidden,
            _ => hidden,
        }
    }

    pub fn validate(self) -> Result<()> {
        if let CellKind::Lstm { chrono: Some(t) } = self {
            if t < 2 {
                return Err(contract(format!("chrono T_max must be >= 2, got {t}")));
            }
        }
        Ok(())
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Gru => "gru",
            CellKind::Lstm { chrono: None } => "lstm",
            CellKind::Lstm { chrono: Some(_) } => "chrono",
            CellKind::Mgu => "mgu",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellParams {
    pub kind: CellKind,
    pub input: usize,
    pub hidden: usize,
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub bias: Tensor,
}

impl CellParams {
    pub fn zeros(kind: CellKind, input: usize, hidden: usize) -> Self {
        let gh = kind.gates() * hidden;
        CellParams {
            kind,
            input,
            hidden,
            w_x: Tensor::zeros(&[input, gh]),
            w_h: Tensor::zeros(&[hidden, gh]),
            bias: Tensor::zeros(&[gh]),
        }
    }

    /// Uniform(-1/√fan_in, 1/√fan_in) weights with `fan_in = input + hidden`,
    /// zero biases, and chrono biases for chrono LSTMs.
    pub fn init(kind: CellKind, input: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        kind.validate()?;
        if input == 0 || hidden == 0 {
            return Err(contract(format!(
                "cell widths must be positive (input {input}, hidden {hidden})"
            )));
        }
        let mut p = CellParams::zeros(kind, input, hidden);
        let bound = 1.0 / ((input + hidden) as f64).sqrt();
        for w in p.w_x.data_mut().iter_mut().chain(p.w_h.data_mut().iter_mut()) {
            *w = rng.gen_range(-bound..bound);
        }
        if let CellKind::Lstm { chrono: Some(t_max) } = kind {
            let b = p.bias.data_mut();
            for j in 0..hidden {
                let v: f64 = if t_max > 2 {
                    rng.gen_range(1.0..(t_max - 1) as f64)
                } else {
                    1.0
                };
                b[hidden + j] = v.ln();
                b[j] = -b[hidden + j];
            }
        }
        Ok(p)
    }

    pub fn state_width(&self) -> usize {
        self.kind.state_width(self.hidden)
    }

    pub fn param_count(&self) -> usize {
        self.w_x.len() + self.w_h.len() + self.bias.len()
    }

    pub fn tensors(&self) -> [&Tensor; 3] {
        [&self.w_x, &self.w_h, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.w_x, &mut self.w_h, &mut self.bias]
    }
}

/// Cell weights lifted into a backend, pre-split into the column blocks the
/// update equations consume.
#[derive(Clone, Debug)]
pub struct BoundCell<T> {
    pub kind: CellKind,
    pub input: usize,
    pub hidden: usize,
    /// input weights feeding the sigmoid gates (all blocks for the LSTM)
    w_x_gates: T,
    /// input weights feeding the candidate (GRU/MGU only)
    w_x_cand: Option<T>,
    w_h_gates: T,
    w_h_cand: Option<T>,
    b_gates: T,
    b_cand: Option<T>,
}

/// Input projection `x W_x + b` of one step, split like the weights.
#[derive(Clone, Debug)]
pub struct Projection<T> {
    gates: T,
    cand: Option<T>,
}

impl<T: Clone> BoundCell<T> {
    /// Split already-registered leaves `[w_x, w_h, bias]`.
    pub fn new<B: Backend<T = T>>(
        b: &mut B,
        kind: CellKind,
        input: usize,
        hidden: usize,
        w_x: &T,
        w_h: &T,
        bias: &T,
    ) -> Result<Self> {
        let gh = kind.gates() * hidden;
        match kind {
            CellKind::Lstm { .. } => Ok(BoundCell {
                kind,
                input,
                hidden,
                w_x_gates: w_x.clone(),
                w_x_cand: None,
                w_h_gates: w_h.clone(),
                w_h_cand: None,
                b_gates: bias.clone(),
                b_cand: None,
            }),
            CellKind::Gru | CellKind::Mgu => {
                let split = gh - hidden;
                Ok(BoundCell {
                    kind,
                    input,
                    hidden,
                    w_x_gates: b.slice(w_x, 0, split)?,
                    w_x_cand: Some(b.slice(w_x, split, gh)?),
                    w_h_gates: b.slice(w_h, 0, split)?,
                    w_h_cand: Some(b.slice(w_h, split, gh)?),
                    b_gates: b.slice(bias, 0, split)?,
                    b_cand: Some(b.slice(bias, split, gh)?),
                })
            }
        }
    }

    pub fn state_width(&self) -> usize {
        self.kind.state_width(self.hidden)
    }

    /// `x W_x + b` for an input batch `[B, input]` (or a single row).
    pub fn project<B: Backend<T = T>>(&self, b: &mut B, x: &T) -> Result<Projection<T>> {
        let w = b.value(x).cols();
        if w != self.input {
            return Err(Error::ShapeMismatch {
                op: "cell input",
                left: b.value(x).shape().to_vec(),
                right: vec![self.input],
            });
        }
        let g = b.matmul(x, &self.w_x_gates)?;
        let gates = b.add(&g, &self.b_gates)?;
        let cand = match (&self.w_x_cand, &self.b_cand) {
            (Some(wc), Some(bc)) => {
                let c = b.matmul(x, wc)?;
                Some(b.add(&c, bc)?)
            }
            _ => None,
        };
        Ok(Projection { gates, cand })
    }

    /// One update `state' = f(state, x)` given the projection of `x`.
    pub fn step<B: Backend<T = T>>(&self, b: &mut B, state: &T, xp: &Projection<T>) -> Result<T> {
        let sw = b.value(state).cols();
        if sw != self.state_width() {
            return Err(Error::ShapeMismatch {
                op: "cell state",
                left: b.value(state).shape().to_vec(),
                right: vec![self.state_width()],
            });
        }
        let h = self.hidden;
        match self.kind {
            CellKind::Gru => {
                let hg = b.matmul(state, &self.w_h_gates)?;
                let pre = b.add(&xp.gates, &hg)?;
                let gates = b.sigmoid(&pre);
                let r = b.slice(&gates, 0, h)?;
                let z = b.slice(&gates, h, 2 * h)?;
                let rh = b.mul(&r, state)?;
                let n = self.candidate(b, &rh, xp)?;
                // (1 - z) h + z n  ==  h + z (n - h)
                let diff = b.sub(&n, state)?;
                let upd = b.mul(&z, &diff)?;
                b.add(state, &upd)
            }
            CellKind::Mgu => {
                let hg = b.matmul(state, &self.w_h_gates)?;
                let pre = b.add(&xp.gates, &hg)?;
                let f = b.sigmoid(&pre);
                let fh = b.mul(&f, state)?;
                let n = self.candidate(b, &fh, xp)?;
                let diff = b.sub(&n, state)?;
                let upd = b.mul(&f, &diff)?;
                b.add(state, &upd)
            }
            CellKind::Lstm { .. } => {
                let hp = b.slice(state, 0, h)?;
                let c = b.slice(state, h, 2 * h)?;
                let hg = b.matmul(&hp, &self.w_h_gates)?;
                let pre = b.add(&xp.gates, &hg)?;
                let sig = b.sigmoid(&pre);
                let i = b.slice(&sig, 0, h)?;
                let f = b.slice(&sig, h, 2 * h)?;
                let o = b.slice(&sig, 3 * h, 4 * h)?;
                let g_pre = b.slice(&pre, 2 * h, 3 * h)?;
                let g = b.tanh(&g_pre);
                let fc = b.mul(&f, &c)?;
                let ig = b.mul(&i, &g)?;
                let c_next = b.add(&fc, &ig)?;
                let tc = b.tanh(&c_next);
                let h_next = b.mul(&o, &tc)?;
                b.concat(&[h_next, c_next])
            }
        }
    }

    fn candidate<B: Backend<T = T>>(&self, b: &mut B, gated: &T, xp: &Projection<T>) -> Result<T> {
        let (wc, xc) = match (&self.w_h_cand, &xp.cand) {
            (Some(w), Some(x)) => (w, x),
            _ => return Err(contract("candidate weights missing for a gated cell")),
        };
        let hc = b.matmul(gated, wc)?;
        let pre = b.add(xc, &hc)?;
        Ok(b.tanh(&pre))
    }

    /// The part of a state that the cell emits as output (`h`).
    pub fn output<B: Backend<T = T>>(&self, b: &mut B, state: &T) -> Result<T> {
        match self.kind {
            CellKind::Lstm { .. } => b.slice(state, 0, self.hidden),
            _ => Ok(state.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Eager;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bind(p: &CellParams) -> BoundCell<Tensor> {
        BoundCell::new(&mut Eager, p.kind, p.input, p.hidden, &p.w_x, &p.w_h, &p.bias).unwrap()
    }

    fn step(p: &CellParams, state: &Tensor, x: &Tensor) -> Tensor {
        let c = bind(p);
        let xp = c.project(&mut Eager, x).unwrap();
        c.step(&mut Eager, state, &xp).unwrap()
    }

    #[test]
    fn zero_gru_halves_the_state() {
        let p = CellParams::zeros(CellKind::Gru, 2, 3);
        let s = Tensor::matrix(1, 3, vec![1.0, -2.0, 0.4]).unwrap();
        let x = Tensor::matrix(1, 2, vec![5.0, -7.0]).unwrap();
        let next = step(&p, &s, &x);
        assert_eq!(next.data(), &[0.5, -1.0, 0.2]);
    }

    #[test]
    fn saturated_lstm_keeps_its_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = CellParams::init(CellKind::LSTM, 1, 4, &mut rng).unwrap();
        for j in 0..4 {
            p.bias.data_mut()[j] = -20.0; // input gate
            p.bias.data_mut()[4 + j] = 20.0; // forget gate
        }
        let mut s = Tensor::matrix(1, 8, vec![0.1, 0.2, -0.3, 0.0, 0.7, -0.4, 0.2, 0.9]).unwrap();
        for t in 0..50 {
            let x = Tensor::matrix(1, 1, vec![(t as f64).sin()]).unwrap();
            let next = step(&p, &s, &x);
            for j in 4..8 {
                assert!((next.data()[j] - s.data()[j]).abs() < 1e-6);
            }
            s = next;
        }
    }

    #[test]
    fn chrono_biases_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = CellParams::init(CellKind::Lstm { chrono: Some(600) }, 1, 64, &mut rng).unwrap();
        let b = p.bias.data();
        for j in 0..64 {
            let bf = b[64 + j];
            assert!((0.0..=599f64.ln()).contains(&bf));
            assert_eq!(b[j], -bf);
        }
        assert!(CellParams::init(CellKind::Lstm { chrono: Some(1) }, 1, 4, &mut rng).is_err());
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let p = CellParams::zeros(CellKind::Mgu, 2, 3);
        let c = bind(&p);
        let x = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
        assert!(c.project(&mut Eager, &x).is_err());
        let xp = c.project(&mut Eager, &Tensor::matrix(1, 2, vec![0.0; 2]).unwrap()).unwrap();
        assert!(c.step(&mut Eager, &Tensor::matrix(1, 4, vec![0.0; 4]).unwrap(), &xp).is_err());
    }

    #[test]
    fn gru_parameter_count() {
        let p = CellParams::zeros(CellKind::Gru, 2, 256);
        assert_eq!(p.param_count(), 3 * (256 * (256 + 2) + 256));
        assert_eq!(p.param_count(), 198_912);
    }

    #[test]
    fn gates_stay_in_open_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in [CellKind::Gru, CellKind::LSTM, CellKind::Mgu] {
            let p = CellParams::init(kind, 3, 5, &mut rng).unwrap();
            let mut s = Tensor::zeros(&[2, p.state_width()]);
            for _ in 0..20 {
                let x = Tensor::matrix(2, 3, (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
                s = step(&p, &s, &x);
                // h stays in (-1, 1) for every kind when started inside it
                for r in 0..2 {
                    for v in &s.row(r)[..5] {
                        assert!(v.abs() < 1.0);
                    }
                }
            }
        }
    }
}
