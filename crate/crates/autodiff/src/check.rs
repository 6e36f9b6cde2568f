//! Central finite-difference verification of reverse-mode gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::param::ParamStore;
use crate::tensor::Tensor;

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone)]
pub struct CheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// Location of the largest error, e.g. `param w_ih[3]` or `input 0[7]`.
    pub worst: String,
    pub checked: usize,
}

/// Denominator floor of the relative error, so that gradients that are
/// numerically zero are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the gradients produced by [`Graph::backward`] for every
/// parameter and every input element against central differences with
/// step `h`. `build` must return a scalar loss.
pub fn gradient_check<F>(
    store: &mut ParamStore<f64>,
    inputs: &[Tensor<f64>],
    h: f64,
    build: F,
) -> Result<CheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> Result<Var>,
{
    let eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, store, &vars)?;
        Ok(g.value(loss).item())
    };

    store.zero_grad();
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = build(&mut g, store, &vars)?;
    let grads = g.backward(loss, store)?;

    let mut report = CheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut record = |analytic: f64, numeric: f64, what: String| {
        let e = rel_error(analytic, numeric);
        report.checked += 1;
        if e > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = e.max(report.max_rel_error);
            report.worst = what;
        }
    };

    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).value.numel();
        for i in 0..n {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + h;
            let plus = eval(store, inputs)?;
            store.get_mut(id).value.data_mut()[i] = orig - h;
            let minus = eval(store, inputs)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let p = store.get(id);
            record(p.grad.data()[i], numeric, format!("param {}[{i}]", p.name));
        }
    }

    let mut perturbed = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(inputs[k].shape());
        let analytic = grads.get(*var).unwrap_or(&zeros).clone();
        for i in 0..inputs[k].numel() {
            let orig = inputs[k].data()[i];
            perturbed[k].data_mut()[i] = orig + h;
            let plus = eval(store, &perturbed)?;
            perturbed[k].data_mut()[i] = orig - h;
            let minus = eval(store, &perturbed)?;
            perturbed[k].data_mut()[i] = orig;
            record(
                analytic.data()[i],
                (plus - minus) / (2.0 * h),
                format!("input {k}[{i}]"),
            );
        }
    }
    Ok(report)
}
