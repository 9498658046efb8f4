//! Central finite-difference gradient checking in double precision.
//!
//! The per-entry relative error is `|a − n| / max(|a|, |n|, floor)` where
//! `floor = floor_fraction · max_j |n_j|`, so entries that are negligible
//! next to the largest gradient are compared on an absolute scale instead of
//! amplifying rounding noise. A sign-flipped analytic gradient reports 2.0.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{HasParams, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    pub floor_fraction: f64,
    /// Check only this many entries, chosen by a fixed seed; `None` checks
    /// every entry.
    pub max_entries: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            tolerance: 1e-4,
            floor_fraction: 1e-3,
            max_entries: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Index of the entry with the largest error.
    pub worst: usize,
    pub checked: usize,
    pub non_finite: bool,
    pub passed: bool,
}

/// Compares `analytic` against central differences of `f` around `params`.
pub fn grad_check(
    params: &[f64],
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
    cfg: GradCheckConfig,
) -> GradCheckReport {
    let mut x = params.to_vec();
    let entries: Vec<usize> = match cfg.max_entries {
        Some(k) if k < x.len() && analytic.len() == x.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            let mut idx = rand::seq::index::sample(&mut rng, x.len(), k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..x.len()).collect(),
    };
    let mut numeric = Vec::with_capacity(entries.len());
    for &i in &entries {
        let orig = x[i];
        x[i] = orig + cfg.eps;
        let plus = f(&x);
        x[i] = orig - cfg.eps;
        let minus = f(&x);
        x[i] = orig;
        numeric.push((plus - minus) / (2.0 * cfg.eps));
    }
    let picked: Vec<f64> = if entries.len() == analytic.len() {
        analytic.to_vec()
    } else {
        entries.iter().map(|&i| analytic[i]).collect()
    };
    let mut report = compare(&picked, &numeric, cfg);
    report.worst = entries.get(report.worst).copied().unwrap_or(report.worst);
    report
}

fn compare(analytic: &[f64], numeric: &[f64], cfg: GradCheckConfig) -> GradCheckReport {
    let non_finite = analytic.len() != numeric.len()
        || analytic.iter().chain(numeric).any(|v| !v.is_finite());
    if non_finite {
        return GradCheckReport {
            max_rel_error: f64::INFINITY,
            worst: 0,
            checked: numeric.len(),
            non_finite: true,
            passed: false,
        };
    }
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (cfg.floor_fraction * scale).max(1e-12);
    let mut max_rel_error = 0.0;
    let mut worst = 0;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst = i;
        }
    }
    GradCheckReport {
        max_rel_error,
        worst,
        checked: numeric.len(),
        non_finite: false,
        passed: max_rel_error <= cfg.tolerance,
    }
}

/// Fixed random projection `r` used to reduce a tensor output `y` to the
/// scalar `Σ r ⊙ y`, whose gradient w.r.t. `y` is `r`.
fn projection(shape: &[usize]) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    Tensor::uniform(shape, 1.0, &mut rng)
}

fn project(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Checks the input gradient of a tensor-to-tensor map.
///
/// `run(x, None)` evaluates the forward pass only; `run(x, Some(upstream))`
/// evaluates the forward pass and then returns the backward pass for that
/// upstream gradient.
pub fn check_input(
    input: &Tensor<f64>,
    run: impl FnMut(&Tensor<f64>, Option<&Tensor<f64>>) -> (Tensor<f64>, Option<Tensor<f64>>),
) -> GradCheckReport {
    check_input_with(input, GradCheckConfig::default(), run)
}

pub fn check_input_with(
    input: &Tensor<f64>,
    cfg: GradCheckConfig,
    mut run: impl FnMut(&Tensor<f64>, Option<&Tensor<f64>>) -> (Tensor<f64>, Option<Tensor<f64>>),
) -> GradCheckReport {
    let (y, _) = run(input, None);
    let r = projection(y.shape());
    let (_, dx) = run(input, Some(&r));
    let analytic = dx.expect("backward requested").into_data();
    let shape = input.shape().to_vec();
    grad_check(input.data(), &analytic, |x| {
        let t = Tensor::from_vec(&shape, x.to_vec()).expect("same shape");
        project(&run(&t, None).0, &r)
    }, cfg)
}

/// Checks the parameter gradients of a layer for a fixed input.
pub fn check_layer_params<L: HasParams<f64>>(
    layer: &mut L,
    input: &Tensor<f64>,
    mut forward: impl FnMut(&mut L, &Tensor<f64>) -> Tensor<f64>,
    mut backward: impl FnMut(&mut L, &Tensor<f64>),
) -> GradCheckReport {
    let y = forward(layer, input);
    let r = projection(y.shape());
    layer.zero_grad();
    forward(layer, input);
    backward(layer, &r);
    let analytic = layer.flat_grads();
    check_model_params(layer, &analytic, GradCheckConfig::default(), |l| project(&forward(l, input), &r))
}

/// Checks precomputed `analytic` parameter gradients of a model against
/// finite differences of `loss`, perturbing each trainable scalar in turn.
pub fn check_model_params<M: HasParams<f64>>(
    model: &mut M,
    analytic: &[f64],
    cfg: GradCheckConfig,
    mut loss: impl FnMut(&mut M) -> f64,
) -> GradCheckReport {
    let base = model.flat_params();
    let report = grad_check(&base, analytic, |x| {
        model.set_flat_params(x);
        loss(model)
    }, cfg);
    model.set_flat_params(&base);
    report
}
