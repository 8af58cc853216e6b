//! Central finite-difference gradient checking against the tape.

use crate::autodiff::{Tape, Tensor, Var};
use crate::nn::{Ctx, ParamStore};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

impl GradCheckReport {
    fn new() -> Self {
        Self {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            checked: 0,
        }
    }

    /// The relative error of one entry is `|a - n| / max(|a| + |n|, 1e-6)`,
    /// so entries whose true derivative is (numerically) zero are judged by
    /// their absolute error.
    fn record(&mut self, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        let rel = abs / (analytic.abs() + numeric.abs()).max(1e-6);
        self.max_abs_error = self.max_abs_error.max(abs);
        self.max_rel_error = self.max_rel_error.max(rel);
        self.checked += 1;
    }
}

/// Compares `analytic[k]` with central differences of `eval` around `inputs`.
pub fn compare_with_finite_differences(
    inputs: &[Tensor],
    analytic: &[Tensor],
    h: f64,
    eval: impl Fn(&[Tensor]) -> f64,
) -> GradCheckReport {
    let mut report = GradCheckReport::new();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for k in 0..inputs.len() {
        for idx in 0..inputs[k].len() {
            let orig = inputs[k].as_slice().unwrap()[idx];
            work[k].as_slice_mut().unwrap()[idx] = orig + h;
            let plus = eval(&work);
            work[k].as_slice_mut().unwrap()[idx] = orig - h;
            let minus = eval(&work);
            work[k].as_slice_mut().unwrap()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            report.record(analytic[k].as_slice().unwrap()[idx], numeric);
        }
    }
    report
}

/// Gradient check of the scalar built by `f` with respect to every input.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, f: F) -> GradCheckReport
where
    F: Fn(&Tape, &[Var]) -> Var,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars);
    let grads = tape.backward(out);
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.raw_dim())))
        .collect();
    compare_with_finite_differences(inputs, &analytic, h, |values| {
        let tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars);
        tape.scalar_value(out)
    })
}

/// Gradient check with respect to inputs of a model forward pass that
/// needs a parameter context (`train` selects the normalization mode).
pub fn check_ctx_gradients<F>(store: &ParamStore, train: bool, inputs: &[Tensor], h: f64, f: F) -> GradCheckReport
where
    F: Fn(&Ctx, &[Var]) -> Var,
{
    let ctx = Ctx::with_mode(store, train, false);
    let vars: Vec<Var> = inputs.iter().map(|t| ctx.tape.leaf(t.clone())).collect();
    let out = f(&ctx, &vars);
    let grads = ctx.tape.backward(out);
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.raw_dim())))
        .collect();
    compare_with_finite_differences(inputs, &analytic, h, |values| {
        let ctx = Ctx::with_mode(store, train, false);
        let vars: Vec<Var> = values.iter().map(|t| ctx.tape.constant(t.clone())).collect();
        let out = f(&ctx, &vars);
        ctx.tape.scalar_value(out)
    })
}

/// Gradient check with respect to every trainable parameter in `store`.
pub fn check_param_gradients<F>(store: &ParamStore, h: f64, train: bool, f: F) -> GradCheckReport
where
    F: Fn(&Ctx) -> Var,
{
    let ctx = Ctx::with_mode(store, train, true);
    let out = f(&ctx);
    let mut grads = ctx.tape.backward(out);
    let by_id = ctx.param_grads(&mut grads);
    let ids = store.trainable_ids();
    let inputs: Vec<Tensor> = ids.iter().map(|id| store.get(*id).clone()).collect();
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(&inputs)
        .map(|(id, t)| {
            by_id
                .iter()
                .find(|(pid, _)| pid == id)
                .map(|(_, g)| g.clone())
                .unwrap_or_else(|| Tensor::zeros(t.raw_dim()))
        })
        .collect();
    compare_with_finite_differences(&inputs, &analytic, h, |values| {
        let mut perturbed = store.clone();
        for (id, v) in ids.iter().zip(values) {
            *perturbed.get_mut(*id) = v.clone();
        }
        let ctx = Ctx::with_mode(&perturbed, train, false);
        let out = f(&ctx);
        ctx.tape.scalar_value(out)
    })
}
