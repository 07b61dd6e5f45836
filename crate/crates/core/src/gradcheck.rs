//! Finite-difference checks of tape gradients for whole layers.

use dualtrace_tensor::gradcheck::{central_difference, max_relative_error, spread_indices};
use dualtrace_tensor::nn::Forward;
use dualtrace_tensor::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Worst relative error found, with the tensor it came from.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub worst: f64,
    pub worst_at: String,
    pub checked: usize,
}

/// Fixed random weights turning a feature map into a scalar with a
/// non-trivial gradient everywhere.
pub fn readout(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `Σ out ⊙ weights` on the tape.
pub fn weighted_sum(g: &Graph<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = g.constant(weights.clone());
    let p = g.mul(out, w)?;
    Ok(g.sum_all(p))
}

fn evaluate(
    store: &ParamStore<f64>,
    input: &Tensor<f64>,
    training: bool,
    build: &impl Fn(&Forward<'_, f64>, Var) -> Result<Var>,
) -> Result<f64> {
    let g = Graph::new();
    let f = Forward::new(&g, store, training);
    let x = g.constant(input.clone());
    let y = build(&f, x)?;
    Ok(g.value(y).data()[0])
}

/// Compares analytic gradients of the scalar produced by `build` against
/// central differences with step `step`, sampling up to `samples` entries of
/// the input and of every listed parameter.
pub fn check_gradients(
    store: &ParamStore<f64>,
    params: &[ParamId],
    input: &Tensor<f64>,
    training: bool,
    samples: usize,
    step: f64,
    build: impl Fn(&Forward<'_, f64>, Var) -> Result<Var>,
) -> Result<GradReport> {
    let g = Graph::new();
    let f = Forward::new(&g, store, training);
    let x = g.leaf(input.clone(), true);
    let y = build(&f, x)?;
    let grads = g.backward(y)?;
    let by_param = grads.params();

    let mut report = GradReport { worst: 0.0, worst_at: String::new(), checked: 0 };
    let mut record = |name: &str, analytic: &[f64], numeric: &[f64]| {
        let e = max_relative_error(analytic, numeric, 1e-6);
        report.checked += analytic.len();
        if e > report.worst || report.worst_at.is_empty() {
            report.worst = e.max(report.worst);
            report.worst_at = name.to_string();
        }
    };

    let idx = spread_indices(input.numel(), samples);
    let gx = grads.get(x).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
    let analytic: Vec<f64> = idx.iter().map(|&i| gx.data()[i]).collect();
    let mut failure = None;
    let numeric = central_difference(input, &idx, step, |probe| {
        evaluate(store, probe, training, &build).unwrap_or_else(|e| {
            failure.get_or_insert(e);
            f64::NAN
        })
    });
    if let Some(e) = failure.take() {
        return Err(e);
    }
    record("input", &analytic, &numeric);

    for &id in params {
        let value = store.value(id).clone();
        let gp = by_param
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, t)| t.clone())
            .unwrap_or_else(|| Tensor::zeros(value.shape()));
        let idx = spread_indices(value.numel(), samples);
        let analytic: Vec<f64> = idx.iter().map(|&i| gp.data()[i]).collect();
        let mut probe_store = store.clone();
        let numeric = central_difference(&value, &idx, step, |probe| {
            *probe_store.value_mut(id) = probe.clone();
            evaluate(&probe_store, input, training, &build).unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::NAN
            })
        });
        if let Some(e) = failure.take() {
            return Err(e);
        }
        record(&store.get(id).name, &analytic, &numeric);
    }
    Ok(report)
}
