//! Small-batch training step that touches every weight matrix twice: once in
//! the forward pass and once in a sweep that back-propagates the error and
//! applies Adam row by row. For batches of a few samples this avoids the
//! per-call packing of general matrix products and the separate gradient
//! buffers, which otherwise dominate the step.

use ndarray::ArrayView2;

use super::model::MlpModel;
use super::train::Adam;
use crate::error::{Error, Result};

/// Largest batch routed through the fused step.
pub(crate) const FUSED_MAX_BATCH: usize = 6;

const LANES: usize = 16;

#[inline(always)]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; LANES];
    let (ca, ta) = a.as_chunks::<LANES>();
    let (cb, tb) = b.as_chunks::<LANES>();
    for (x, y) in ca.iter().zip(cb) {
        for k in 0..LANES {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ta.iter().zip(tb) {
        tail += x * y;
    }
    acc.iter().sum::<f32>() + tail
}

/// Activations per layer, `[batch x width]` row-major; index 0 is the input.
#[derive(Debug, Default)]
pub(crate) struct Scratch {
    acts: Vec<Vec<f32>>,
    delta: Vec<f32>,
    back: Vec<f32>,
    grad_row: Vec<f32>,
}

/// One Adam step on the MSE of the batch; returns the loss.
///
/// Every operation is element-wise or has a fixed summation order, so the
/// AVX-512 build of the step produces the same bits as the portable one.
pub(crate) fn fused_step(
    model: &mut MlpModel,
    adam: &mut Adam,
    x: ArrayView2<'_, f32>,
    y: ArrayView2<'_, f32>,
    lr: f64,
    s: &mut Scratch,
) -> Result<f32> {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: the feature was just detected.
        return unsafe { step_avx512(model, adam, x, y, lr, s) };
    }
    step(model, adam, x, y, lr, s)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn step_avx512(
    model: &mut MlpModel,
    adam: &mut Adam,
    x: ArrayView2<'_, f32>,
    y: ArrayView2<'_, f32>,
    lr: f64,
    s: &mut Scratch,
) -> Result<f32> {
    step(model, adam, x, y, lr, s)
}

#[inline(always)]
fn step(
    model: &mut MlpModel,
    adam: &mut Adam,
    x: ArrayView2<'_, f32>,
    y: ArrayView2<'_, f32>,
    lr: f64,
    s: &mut Scratch,
) -> Result<f32> {
    let n_layers = model.n_layers();
    let b = x.nrows();
    let dims = model.layer_dims.clone();
    if x.ncols() != dims[0] || y.ncols() != dims[n_layers] || y.nrows() != b {
        return Err(Error::DimensionMismatch("batch shape does not match the model".into()));
    }
    let slope = model.leaky_slope as f32;
    s.acts.resize_with(n_layers + 1, Vec::new);
    s.acts[0].clear();
    s.acts[0].extend(x.iter());

    for l in 0..n_layers {
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        let (prev, rest) = s.acts.split_at_mut(l + 1);
        let (a_in, a_out) = (&prev[l], &mut rest[0]);
        a_out.clear();
        a_out.resize(b * n_out, 0.0);
        let w = model.weights[l].as_slice().expect("standard layout");
        let bias = model.biases[l].as_slice().expect("standard layout");
        for o in 0..n_out {
            let row = &w[o * n_in..(o + 1) * n_in];
            for j in 0..b {
                a_out[j * n_out + o] = bias[o] + dot(row, &a_in[j * n_in..(j + 1) * n_in]);
            }
        }
        if l + 1 < n_layers {
            a_out.iter_mut().for_each(|v| {
                if *v < 0.0 {
                    *v *= slope
                }
            });
        }
    }

    let out = &s.acts[n_layers];
    let count = (b * dims[n_layers]) as f32;
    s.delta.clear();
    let mut loss = 0.0f32;
    for (&o, &t) in out.iter().zip(y.iter()) {
        let d = o - t;
        loss += d * d;
        s.delta.push(d * 2.0 / count);
    }
    let loss = loss / count;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0, batch: 0 });
    }

    let coef = adam.begin_step(lr);
    for l in (0..n_layers).rev() {
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        let a_in = &s.acts[l];
        s.back.clear();
        s.back.resize(if l > 0 { b * n_in } else { 0 }, 0.0);
        s.grad_row.resize(n_in, 0.0);

        let (w_all, m_all, v_all) = adam.layer_weights(model, l);
        for o in 0..n_out {
            let w = &mut w_all[o * n_in..(o + 1) * n_in];
            let g = &mut s.grad_row[..];
            g.fill(0.0);
            for j in 0..b {
                let d = s.delta[j * n_out + o];
                let a = &a_in[j * n_in..(j + 1) * n_in];
                for (gi, &ai) in g.iter_mut().zip(a) {
                    *gi += d * ai;
                }
                if l > 0 {
                    let back = &mut s.back[j * n_in..(j + 1) * n_in];
                    for (bi, &wi) in back.iter_mut().zip(w.iter()) {
                        *bi += d * wi;
                    }
                }
            }
            let m = &mut m_all[o * n_in..(o + 1) * n_in];
            let v = &mut v_all[o * n_in..(o + 1) * n_in];
            for (((p, &gi), mi), vi) in w.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                coef.apply(p, gi, mi, vi);
            }
        }
        let (bias, mb, vb) = adam.layer_biases(model, l);
        for o in 0..n_out {
            let gb: f32 = (0..b).map(|j| s.delta[j * n_out + o]).sum();
            coef.apply(&mut bias[o], gb, &mut mb[o], &mut vb[o]);
        }
        if l > 0 {
            for (d, &a) in s.back.iter_mut().zip(a_in.iter()) {
                if a < 0.0 {
                    *d *= slope;
                }
            }
            std::mem::swap(&mut s.delta, &mut s.back);
        }
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{HeadKind, PAPER_HIDDEN};
    use crate::nn::train::{loss_and_gradients, Gradients, TrainConfig};
    use ndarray::Array2;

    fn batch(b: usize) -> (Array2<f32>, Array2<f32>) {
        let x = Array2::from_shape_fn((b, 32), |(j, n)| (-(n as f32) * 10.0 / (50.0 + 20.0 * j as f32)).exp());
        let y = Array2::from_shape_fn((b, 120), |(j, k)| if (k + j) % 9 == 0 { 1.2 } else { 0.0 });
        (x, y)
    }

    #[test]
    fn matches_generic_gradients() {
        let mut dims = vec![32];
        dims.extend(PAPER_HIDDEN);
        dims.push(120);
        let model = MlpModel::new(HeadKind::Distribution, dims, 0.2, 9).unwrap();
        let config = TrainConfig::fast();
        for b in [1, 2, 5] {
            let (x, y) = batch(b);
            let mut grads = Gradients::zeros_like(&model);
            let loss = loss_and_gradients(&model, x.view(), y.view(), &mut grads).unwrap();

            let mut fused_model = model.clone();
            let mut adam = Adam::new(&model, &config);
            let fused_loss = fused_step(&mut fused_model, &mut adam, x.view(), y.view(), 1e-3, &mut Scratch::default()).unwrap();
            assert!((loss - fused_loss).abs() <= 1e-5 * loss, "{loss} vs {fused_loss}");

            // After one step the first moment is (1 − β1)·g.
            for l in 0..model.n_layers() {
                let scale = grads.weights[l].iter().fold(0.0f32, |a, v| a.max(v.abs()));
                let (_, m, _) = adam.layer_weights(&mut fused_model, l);
                for (mf, g) in m.iter().zip(grads.weights[l].iter()) {
                    assert!((mf / 0.1 - g).abs() <= 1e-4 * scale, "layer {l}: {mf} vs {g}");
                }
                let (_, mb, _) = adam.layer_biases(&mut fused_model, l);
                let bscale = grads.biases[l].iter().fold(0.0f32, |a, v| a.max(v.abs()));
                for (mf, g) in mb.iter().zip(grads.biases[l].iter()) {
                    assert!((mf / 0.1 - g).abs() <= 1e-4 * bscale, "bias {l}: {mf} vs {g}");
                }
            }
        }
    }

    #[test]
    fn rejects_non_finite_and_mismatched() {
        let model = MlpModel::new(HeadKind::ScalarMwf, vec![32, 8, 1], 0.2, 1).unwrap();
        let mut adam = Adam::new(&model, &TrainConfig::fast());
        let (x, _) = batch(2);
        let y = Array2::from_elem((2, 1), f32::NAN);
        let mut m = model.clone();
        let r = fused_step(&mut m, &mut adam, x.view(), y.view(), 1e-3, &mut Scratch::default());
        assert!(matches!(r, Err(Error::NonFiniteLoss { .. })));
        let y = Array2::zeros((2, 2));
        let r = fused_step(&mut m, &mut adam, x.view(), y.view(), 1e-3, &mut Scratch::default());
        assert!(matches!(r, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn trajectory_tracks_generic_path() {
        let mut dims = vec![32];
        dims.extend(PAPER_HIDDEN);
        dims.push(120);
        let start = MlpModel::new(HeadKind::Distribution, dims, 0.2, 3).unwrap();
        let config = TrainConfig::fast();
        let (mut fm, mut gm) = (start.clone(), start.clone());
        let (mut fa, mut ga) = (Adam::new(&start, &config), Adam::new(&start, &config));
        let mut grads = Gradients::zeros_like(&start);
        let mut scratch = Scratch::default();
        let (xs, ys) = batch(64);
        for step in 0..60 {
            let rows: Vec<usize> = (0..4).map(|k| (step * 4 + k * 7) % 64).collect();
            let x = xs.select(ndarray::Axis(0), &rows);
            let y = ys.select(ndarray::Axis(0), &rows);
            let lf = fused_step(&mut fm, &mut fa, x.view(), y.view(), 1e-3, &mut scratch).unwrap();
            let lg = loss_and_gradients(&gm, x.view(), y.view(), &mut grads).unwrap();
            ga.update(&mut gm, &grads, 1e-3);
            assert!((lf - lg).abs() <= 1e-3 * lg.max(1e-6), "step {step}: {lf} vs {lg}");
        }
        let worst = fm
            .weights
            .iter()
            .zip(&gm.weights)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(p, q)| (p - q).abs()))
            .fold(0.0f32, f32::max);
        // 60 steps of at most lr each.
        assert!(worst < 0.02, "{worst}");
    }
}
