//! Finite-difference checks of BPTT and of the VAA* gradient.

use multistab::autodiff::{gradient_check, Backend, GradCheckReport, Graph, Var};
use multistab::cells::CellKind;
use multistab::network::{NetworkParams, NetworkSpec};
use multistab::vaa::{cell_dynamics, vaa_star, DEFAULT_EPSILON};
use multistab::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

fn uniform_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let d = Uniform::new(-2.0, 2.0);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| d.sample(rng)).collect()).expect("shape")
}

fn bind_vars(g: &mut Graph, params: &NetworkParams, vars: &[Var]) -> multistab::Result<multistab::network::BoundNetwork<Var>> {
    params.bind(g, |_, i, _| vars[i])
}

/// Sum of squared head outputs over a `len`-step unroll of a one-layer
/// network of the given cell, differentiated with respect to every tensor.
pub fn cell_gradcheck(kind: CellKind, width: usize, len: usize, seed: u64) -> multistab::Result<GradCheckReport> {
    let spec = NetworkSpec::stacked(3, kind, &[width], Some(2));
    let params = NetworkParams::init(&spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor> = (0..len).map(|_| uniform_tensor(2, 3, &mut rng)).collect();
    let values: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    gradient_check(
        |g, vars| {
            let net = bind_vars(g, &params, vars)?;
            let xs: Vec<Var> = inputs.iter().map(|x| g.constant(x.clone())).collect();
            let init = net.initial_state(g, 2);
            let (_, outs) = net.unroll(g, &xs, init)?;
            let mut total = None;
            for o in &outs {
                let y = net.head(g, o)?;
                let sq = g.square(&y);
                let s = g.sum(&sq);
                total = Some(match total {
                    None => s,
                    Some(t) => g.add(&t, &s)?,
                });
            }
            Ok(total.expect("len >= 1"))
        },
        &values,
        STEP,
        TOLERANCE,
    )
}

/// VAA* of a `width`-unit GRU cell after `m` steps from `n` random states.
pub fn vaa_star_gradcheck(width: usize, n: usize, m: usize, seed: u64) -> multistab::Result<GradCheckReport> {
    let spec = NetworkSpec::stacked(3, CellKind::Gru, &[width], None);
    let params = NetworkParams::init(&spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = uniform_tensor(n, width, &mut rng);
    let u = uniform_tensor(1, 3, &mut rng);
    let values: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    gradient_check(
        |g, vars| {
            let net = bind_vars(g, &params, vars)?;
            let cell = &net.layers[0][0];
            let uv = g.constant(u.clone());
            let x = g.constant(states.clone());
            let f = cell_dynamics(g, cell, &uv)?;
            vaa_star(g, f, &x, m, DEFAULT_EPSILON)
        },
        &values,
        STEP,
        TOLERANCE,
    )
}

/// The standard suite: GRU, LSTM and MGU (width 4, length 6) and VAA*
/// (M = 8, three states).
pub fn standard_suite(seed: u64) -> multistab::Result<Vec<(String, GradCheckReport)>> {
    let mut out = Vec::new();
    for kind in [CellKind::Gru, CellKind::LSTM, CellKind::Mgu] {
        out.push((format!("bptt-{}", kind.name()), cell_gradcheck(kind, 4, 6, seed)?));
    }
    out.push(("vaa-star-gru".to_string(), vaa_star_gradcheck(4, 3, 8, seed)?));
    Ok(out)
}
