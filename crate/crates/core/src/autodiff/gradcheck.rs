//! Central finite-difference gradient checking in `f64`.

use ndarray::ArrayD;

use super::{ParamStore, Tape, Var};

/// Relative error between an analytic and a numerical derivative.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Analytic gradients of a scalar-valued graph with respect to its inputs.
pub fn analytic_grads(
    build: impl Fn(&Tape<f64>, &[Var]) -> Var,
    inputs: &[ArrayD<f64>],
) -> (f64, Vec<ArrayD<f64>>) {
    let tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = build(&tape, &vars);
    let value = tape.scalar(out);
    let grads = tape.backward(out);
    let out_grads = vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| {
            grads
                .get(*v)
                .cloned()
                .unwrap_or_else(|| ArrayD::zeros(x.shape()))
        })
        .collect();
    (value, out_grads)
}

fn eval_scalar(build: &impl Fn(&Tape<f64>, &[Var]) -> Var, inputs: &[ArrayD<f64>]) -> f64 {
    let tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = build(&tape, &vars);
    tape.scalar(out)
}

/// Max relative error between analytic gradients and central differences
/// over every coordinate of every input.
pub fn max_rel_error_inputs(
    build: impl Fn(&Tape<f64>, &[Var]) -> Var,
    inputs: &[ArrayD<f64>],
    step: f64,
) -> f64 {
    let (_, grads) = analytic_grads(&build, inputs);
    let grads: Vec<ArrayD<f64>> = grads
        .iter()
        .map(|g| g.as_standard_layout().to_owned())
        .collect();
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for idx in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].as_slice_mut().unwrap()[idx] += step;
            let mut minus = inputs.to_vec();
            minus[i].as_slice_mut().unwrap()[idx] -= step;
            let numeric = (eval_scalar(&build, &plus) - eval_scalar(&build, &minus)) / (2.0 * step);
            let analytic = grads[i].as_slice().unwrap()[idx];
            worst = worst.max(rel_error(analytic, numeric));
        }
    }
    worst
}

/// Max relative error between analytic parameter gradients and central
/// differences, sampling up to `samples_per_tensor` coordinates per tensor.
///
/// The relative-error denominator is floored by the resolution of the
/// central difference itself: a gradient smaller than the rounding noise
/// `|f| * eps / step` cannot be distinguished from zero by finite
/// differences (e.g. attention key biases, whose true gradient vanishes
/// because a shared key offset cancels in the softmax).
pub fn max_rel_error_params(
    store: &mut ParamStore<f64>,
    eval: impl Fn(&ParamStore<f64>) -> f64,
    analytic: &[(String, ArrayD<f64>)],
    samples_per_tensor: usize,
    step: f64,
) -> f64 {
    let f0 = eval(store);
    let noise = f0.abs().max(1.0) * f64::EPSILON / step;
    let atol = (2e4 * noise).max(1e-6);
    let mut worst = 0.0f64;
    for (name, grad) in analytic {
        let grad = grad.as_standard_layout().to_owned();
        let len = grad.len();
        let stride = (len / samples_per_tensor.max(1)).max(1);
        let coords: Vec<usize> = (0..len).step_by(stride).take(samples_per_tensor).collect();
        for idx in coords {
            let original = store.value(name).as_slice().unwrap()[idx];
            store.value_mut(name).as_slice_mut().unwrap()[idx] = original + step;
            let plus = eval(store);
            store.value_mut(name).as_slice_mut().unwrap()[idx] = original - step;
            let minus = eval(store);
            store.value_mut(name).as_slice_mut().unwrap()[idx] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.as_slice().unwrap()[idx];
            let denom = a.abs().max(numeric.abs()).max(atol);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}
