//! Central finite-difference check of the backpropagated gradients.

use ndarray::ArrayView2;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::Mlp;
use super::train::{loss_and_gradients, Gradients};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameters compared.
    pub checked: usize,
    /// Parameters whose ±step moved a hidden pre-activation across zero;
    /// the loss is not differentiable there and they are not compared.
    pub skipped_kinks: usize,
    /// Flat index of the parameter with the largest error.
    pub worst_param: Option<usize>,
}

/// `|a - n| / max(|a|, |n|)`, zero when both vanish.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Loss and the sign pattern of every hidden pre-activation.
fn loss_and_signs(model: &Mlp<f64>, x: ArrayView2<'_, f64>, y: &[f64]) -> Result<(f64, Vec<bool>)> {
    let mut signs = Vec::new();
    let mut h = model.affine(0, x);
    for l in 1..model.n_layers() {
        signs.extend(h.iter().map(|&z| z < 0.0));
        model.activate(&mut h);
        h = model.affine(l, h.view());
    }
    let loss = h.iter().zip(y).map(|(&o, &t)| (o - t) * (o - t)).sum::<f64>() / y.len() as f64;
    Ok((loss, signs))
}

fn param_mut(model: &mut Mlp<f64>, mut flat: usize) -> &mut f64 {
    for l in 0..model.n_layers() {
        let nw = model.weights[l].len();
        if flat < nw {
            return &mut model.weights[l].as_slice_mut().expect("contiguous")[flat];
        }
        flat -= nw;
        let nb = model.biases[l].len();
        if flat < nb {
            return &mut model.biases[l][flat];
        }
        flat -= nb;
    }
    panic!("parameter index out of range");
}

fn grad_at(grads: &Gradients<f64>, mut flat: usize) -> f64 {
    for (w, b) in grads.weights.iter().zip(&grads.biases) {
        if flat < w.len() {
            return w.as_slice().expect("contiguous")[flat];
        }
        flat -= w.len();
        if flat < b.len() {
            return b[flat];
        }
        flat -= b.len();
    }
    panic!("parameter index out of range");
}

/// Compares analytic gradients of the MSE loss on one sample against central
/// differences with the given `step`, on `n_params` seeded random parameters
/// (all of them if the model is smaller).
pub fn gradient_check(
    model: &Mlp<f64>,
    input: &[f64],
    label: &[f64],
    step: f64,
    n_params: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    check(model, input, label, &[step], n_params, seed)
}

/// As [`gradient_check`], but each parameter uses the largest step of the
/// decade ladder `max_step, max_step/10, …, ≥ min_step` whose ± probes cross no
/// kink. Away from kinks the loss is exactly quadratic in any one parameter, so
/// central differences carry no truncation error and a larger step only
/// shrinks the cancellation error of `L(θ+h) − L(θ−h)`.
pub fn gradient_check_adaptive(
    model: &Mlp<f64>,
    input: &[f64],
    label: &[f64],
    max_step: f64,
    min_step: f64,
    n_params: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(min_step > 0.0 && max_step >= min_step) {
        return Err(Error::param("need 0 < min_step <= max_step"));
    }
    let mut ladder = vec![max_step];
    while ladder.last().expect("non-empty") / 10.0 >= min_step * (1.0 - 1e-12) {
        ladder.push(ladder.last().expect("non-empty") / 10.0);
    }
    check(model, input, label, &ladder, n_params, seed)
}

fn check(
    model: &Mlp<f64>,
    input: &[f64],
    label: &[f64],
    steps: &[f64],
    n_params: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    model.validate()?;
    if input.len() != model.input_dim() || label.len() != model.output_dim() {
        return Err(Error::DimensionMismatch("sample does not match the model".into()));
    }
    if !steps.iter().all(|&h| h > 0.0 && h.is_finite()) {
        return Err(Error::param("finite-difference step must be positive"));
    }
    let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
    let y = ArrayView2::from_shape((1, label.len()), label).expect("row vector");
    let mut grads = Gradients::zeros_like(model);
    loss_and_gradients(model, x, y, &mut grads)?;
    let (_, base_signs) = loss_and_signs(model, x, label)?;

    let total = model.n_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, total, n_params.min(total)).into_vec();
    picks.sort_unstable();

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst_param: None,
    };
    for p in picks {
        let orig = *param_mut(&mut probe, p);
        let mut numeric = None;
        for &h in steps {
            *param_mut(&mut probe, p) = orig + h;
            let (up, s_up) = loss_and_signs(&probe, x, label)?;
            *param_mut(&mut probe, p) = orig - h;
            let (down, s_down) = loss_and_signs(&probe, x, label)?;
            if s_up == base_signs && s_down == base_signs {
                numeric = Some((up - down) / (2.0 * h));
                break;
            }
        }
        *param_mut(&mut probe, p) = orig;
        let Some(numeric) = numeric else {
            report.skipped_kinks += 1;
            continue;
        };
        let err = relative_error(grad_at(&grads, p), numeric);
        report.checked += 1;
        if err > report.max_relative_error || report.worst_param.is_none() {
            report.max_relative_error = err.max(report.max_relative_error);
            report.worst_param = Some(p);
        }
    }
    Ok(report)
}
