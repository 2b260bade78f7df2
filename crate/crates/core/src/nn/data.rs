//! Network inputs and labels derived from decay curves and conventional fits.

use ndarray::{Array2, Array3};

use super::model::HeadKind;
use super::train::Dataset;
use crate::error::{Error, Result};
use crate::fit::{FitResult, VolumeFit};
use crate::phantom::EchoCube;

/// Sum every distribution label is scaled to.
pub const DIST_LABEL_SUM: f64 = 15.0;
/// Divisor applied to GMT2 (ms) for scalar GMT2 labels.
pub const GMT2_LABEL_SCALE: f64 = 100.0;

/// Divides the curve by its first echo.
pub fn normalize_input(y: &[f64]) -> Result<Vec<f64>> {
    match y.first() {
        Some(&y0) if y0 > 0.0 && y0.is_finite() => Ok(y.iter().map(|&v| v / y0).collect()),
        Some(&y0) => Err(Error::DegenerateInput(format!("first echo {y0} is not positive"))),
        None => Err(Error::DegenerateInput("empty decay curve".into())),
    }
}

/// Single-precision normalization used for training and inference; the
/// division happens in double precision before rounding.
pub(crate) fn normalize_into(y: &[f32], out: &mut [f32]) -> bool {
    let y0 = f64::from(y[0]);
    if !(y0 > 0.0 && y0.is_finite()) {
        return false;
    }
    for (o, &v) in out.iter_mut().zip(y) {
        *o = (f64::from(v) / y0) as f32;
    }
    true
}

/// Label for one voxel from its metrics and fitted amplitudes; `None` when the
/// voxel cannot produce one (no MWF, no IEW mass, or an all-zero distribution).
pub fn label_from_parts(mwf: Option<f64>, gmt2: Option<f64>, amplitudes: &[f64], head: HeadKind) -> Option<Vec<f64>> {
    match head {
        HeadKind::ScalarMwf => mwf.filter(|v| v.is_finite()).map(|v| vec![v]),
        HeadKind::ScalarGmt2 => gmt2.filter(|v| v.is_finite()).map(|v| vec![v / GMT2_LABEL_SCALE]),
        HeadKind::Distribution => {
            let total: f64 = amplitudes.iter().sum();
            if !(total > 0.0 && total.is_finite()) {
                return None;
            }
            let k = DIST_LABEL_SUM / total;
            Some(amplitudes.iter().map(|&a| a * k).collect())
        }
    }
}

pub fn make_labels(fit: &FitResult, head: HeadKind) -> Option<Vec<f64>> {
    label_from_parts(fit.mwf, fit.gmt2, fit.distribution.amplitudes(), head)
}

/// Training pairs gathered from one fitted cube.
#[derive(Debug, Clone)]
pub struct LabeledVoxels {
    pub data: Dataset,
    /// Flat voxel index of every row.
    pub voxels: Vec<usize>,
    /// Voxels inside the mask that produced no label or had a nonpositive first echo.
    pub skipped: usize,
}

/// Pairs normalized curves with labels from `fit` for every voxel of `mask`.
pub fn build_dataset(cube: &EchoCube, fit: &VolumeFit, mask: &Array3<bool>, head: HeadKind) -> Result<LabeledVoxels> {
    let dims = cube.dims();
    if fit.mwf.dim() != dims || mask.dim() != dims {
        return Err(Error::DimensionMismatch(format!(
            "cube {dims:?}, fit {:?}, mask {:?}",
            fit.mwf.dim(),
            mask.dim()
        )));
    }
    let n_echoes = cube.n_echoes();
    let n_basis = fit.distributions.shape()[3];
    let signals = cube.voxels();
    let dist = fit
        .distributions
        .view()
        .into_shape_with_order((cube.n_voxels(), n_basis))
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    let mwf = fit.mwf.as_slice().expect("standard layout");
    let gmt2 = fit.gmt2.as_slice().expect("standard layout");
    let finite = |v: f64| v.is_finite().then_some(v);

    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut voxels = Vec::new();
    let mut skipped = 0;
    let mut row = vec![0.0f32; n_echoes];
    for (v, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let amps = dist.row(v);
        let label = label_from_parts(
            finite(mwf[v]),
            finite(gmt2[v]),
            amps.as_slice().expect("contiguous"),
            head,
        );
        match label {
            Some(label) if normalize_into(signals.row(v).as_slice().expect("contiguous"), &mut row) => {
                inputs.extend_from_slice(&row);
                labels.extend(label.iter().map(|&l| l as f32));
                voxels.push(v);
            }
            _ => skipped += 1,
        }
    }
    let n = voxels.len();
    let out_dim = head.output_dim(n_basis);
    let data = Dataset::new(
        Array2::from_shape_vec((n, n_echoes), inputs).expect("row-major inputs"),
        Array2::from_shape_vec((n, out_dim), labels).expect("row-major labels"),
    )?;
    Ok(LabeledVoxels { data, voxels, skipped })
}
