//! Central-difference verification of reverse-mode gradients.

use crate::autodiff::graph::{Graph, Var};
use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (tensor index, flat component index) of the worst component
    pub worst: Option<(usize, usize)>,
    pub components: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Compare analytic gradients of a scalar function with central differences.
///
/// `f` records its computation on the supplied graph, reading parameters
/// from the given leaf handles, and returns the scalar root. The relative
/// error per component is `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn gradient_check<F>(f: F, params: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(contract(format!("finite-difference step must be > 0, got {step}")));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p.clone())).collect();
        let root = f(&mut g, &vars)?;
        Ok(g.get(root).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let root = f(&mut g, &vars)?;
    let base = g.get(root).item();
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("f = {base} at the unperturbed parameters")));
    }
    let grads = g.backward(root)?;

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        components: 0,
        tolerance: tol,
    };
    for (ti, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v);
        for ci in 0..params[ti].len() {
            let orig = params[ti].data()[ci];
            work[ti].data_mut()[ci] = orig + step;
            let plus = eval(&work)?;
            work[ti].data_mut()[ci] = orig - step;
            let minus = eval(&work)?;
            work[ti].data_mut()[ci] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "f not finite when perturbing parameter {ti} component {ci}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[ci];
            let denom = a.abs().max(numeric.abs()).max(1e-12);
            let rel = (a - numeric).abs() / denom;
            report.components += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((ti, ci));
            }
        }
    }
    Ok(report)
}
