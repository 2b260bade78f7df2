//! k-space Tukey apodization of multi-echo volumes.

use ndarray::{Array3, Axis};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use super::cube::EchoCube;
use crate::error::{Error, Result};

/// Tukey taper for an axis of length `n` in FFT order (DC at index 0).
///
/// `r` is the tapered fraction: `r = 0` is rectangular, `r = 1` is a full
/// Hann window reaching zero at the Nyquist frequency.
pub fn tukey_window(n: usize, r: f64) -> Vec<f64> {
    if n <= 1 {
        return vec![1.0; n];
    }
    let half = n as f64 / 2.0;
    (0..n)
        .map(|k| {
            let freq = if k <= n / 2 { k as f64 } else { (n - k) as f64 };
            let u = freq / half;
            let flat = 1.0 - r;
            if u <= flat || r == 0.0 {
                1.0
            } else {
                0.5 * (1.0 + (std::f64::consts::PI * (u - flat) / r).cos())
            }
        })
        .collect()
}

struct AxisFft {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

/// Applies a separable Tukey window in k-space to every echo image and keeps the magnitude.
pub fn tukey_apodize(cube: &EchoCube, coefficient: f64) -> Result<EchoCube> {
    if !(0.0..=1.0).contains(&coefficient) {
        return Err(Error::param(format!(
            "Tukey coefficient must be in [0, 1], got {coefficient}"
        )));
    }
    let (nx, ny, nz) = cube.dims();
    let mut planner = FftPlanner::<f64>::new();
    let axes: Vec<AxisFft> = [nx, ny, nz]
        .iter()
        .map(|&n| AxisFft {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            window: tukey_window(n, coefficient),
        })
        .collect();
    let norm = 1.0 / (nx * ny * nz) as f64;

    let mut out = cube.clone();
    for e in 0..cube.n_echoes() {
        let echo = cube.signals.index_axis(Axis(3), e);
        let mut img: Array3<Complex64> = echo.mapv(|v| Complex64::new(f64::from(v), 0.0));
        for (ax, plan) in axes.iter().enumerate() {
            transform_axis(&mut img, ax, &*plan.forward);
        }
        for ((i, j, k), v) in img.indexed_iter_mut() {
            *v *= axes[0].window[i] * axes[1].window[j] * axes[2].window[k];
        }
        for (ax, plan) in axes.iter().enumerate() {
            transform_axis(&mut img, ax, &*plan.inverse);
        }
        out.signals
            .index_axis_mut(Axis(3), e)
            .zip_mut_with(&img, |dst, v| *dst = (v.norm() * norm) as f32);
    }
    Ok(out)
}

fn transform_axis(img: &mut Array3<Complex64>, axis: usize, fft: &dyn Fft<f64>) {
    let n = img.len_of(Axis(axis));
    if n <= 1 {
        return;
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for mut lane in img.lanes_mut(Axis(axis)) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        fft.process(&mut buf);
        for (v, b) in lane.iter_mut().zip(&buf) {
            *v = *b;
        }
    }
}
