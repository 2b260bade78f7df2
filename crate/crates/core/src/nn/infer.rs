use std::time::Instant;

use ndarray::{Array2, Array3, Array4, Axis};
use rayon::prelude::*;

use super::data::{normalize_into, GMT2_LABEL_SCALE};
use super::model::{HeadKind, MlpModel};
use crate::error::{Error, Result};
use crate::fit::FitTiming;
use crate::phantom::EchoCube;
use crate::relaxometry::{gmt2_from_amplitudes, mwf_from_amplitudes, MetricWindows, T2Grid};

/// Voxels per forward pass. Fixed so results do not depend on the worker count.
pub const INFER_CHUNK: usize = 256;

/// Network outputs for a cube. Voxels outside the mask or skipped hold `NaN`.
#[derive(Debug, Clone)]
pub struct VolumeInference {
    pub head: HeadKind,
    /// `[nx, ny, nz, output_dim]`, clamped outputs (distributions sum to ~15).
    pub outputs: Array4<f32>,
    pub mwf: Array3<f64>,
    /// Milliseconds.
    pub gmt2: Array3<f64>,
    /// Voxels that received network outputs.
    pub valid: Array3<bool>,
    /// Masked voxels dropped for a nonpositive first echo.
    pub skipped: usize,
    pub timing: FitTiming,
}

/// Runs the network on every masked voxel with the default grid and windows.
pub fn infer_volume(model: &MlpModel, cube: &EchoCube, workers: usize) -> Result<VolumeInference> {
    let grid = T2Grid::default();
    infer_volume_with(model, cube, workers, &grid, &MetricWindows::default())
}

/// As [`infer_volume`], deriving distribution-head metrics on `grid` with `windows`.
pub fn infer_volume_with(
    model: &MlpModel,
    cube: &EchoCube,
    workers: usize,
    grid: &T2Grid,
    windows: &MetricWindows,
) -> Result<VolumeInference> {
    model.validate()?;
    if cube.n_echoes() != model.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "cube has {} echoes, model expects {}",
            cube.n_echoes(),
            model.input_dim()
        )));
    }
    if model.head == HeadKind::Distribution && model.output_dim() != grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "model emits {} coefficients for a {}-point grid",
            model.output_dim(),
            grid.len()
        )));
    }
    let started = Instant::now();
    let n_echoes = cube.n_echoes();
    let out_dim = model.output_dim();
    let signals = cube.voxels();
    let mut valid = Vec::new();
    let mut skipped = 0;
    for v in cube.masked_voxels() {
        if signals[[v, 0]] > 0.0 {
            valid.push(v);
        } else {
            skipped += 1;
        }
    }

    let run_chunk = |chunk: &[usize]| -> Result<Array2<f32>> {
        let mut x = Array2::<f32>::zeros((chunk.len(), n_echoes));
        for (mut row, &v) in x.rows_mut().into_iter().zip(chunk) {
            let src = signals.row(v);
            normalize_into(src.as_slice().expect("contiguous"), row.as_slice_mut().expect("contiguous"));
        }
        model.predict(x.view())
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::param(format!("thread pool: {e}")))?;
    let chunks: Vec<Array2<f32>> = pool.install(|| {
        valid
            .par_chunks(INFER_CHUNK)
            .map(run_chunk)
            .collect::<Result<Vec<_>>>()
    })?;

    let (nx, ny, nz) = cube.dims();
    let mut outputs = Array4::<f32>::from_elem((nx, ny, nz, out_dim), f32::NAN);
    let mut mwf = Array3::from_elem((nx, ny, nz), f64::NAN);
    let mut gmt2 = Array3::from_elem((nx, ny, nz), f64::NAN);
    let mut mask = Array3::from_elem((nx, ny, nz), false);
    {
        let mut flat_out = outputs
            .view_mut()
            .into_shape_with_order((nx * ny * nz, out_dim))
            .expect("contiguous");
        let flat_mwf = mwf.as_slice_mut().expect("contiguous");
        let flat_gmt2 = gmt2.as_slice_mut().expect("contiguous");
        let flat_mask = mask.as_slice_mut().expect("contiguous");
        let rows = chunks.iter().flat_map(|c| c.axis_iter(Axis(0)));
        let mut amps = vec![0.0f64; out_dim];
        for (&v, row) in valid.iter().zip(rows) {
            flat_out.row_mut(v).assign(&row);
            flat_mask[v] = true;
            match model.head {
                HeadKind::ScalarMwf => flat_mwf[v] = f64::from(row[0]),
                HeadKind::ScalarGmt2 => flat_gmt2[v] = f64::from(row[0]) * GMT2_LABEL_SCALE,
                HeadKind::Distribution => {
                    amps.iter_mut().zip(row).for_each(|(a, &r)| *a = f64::from(r));
                    flat_mwf[v] = mwf_from_amplitudes(grid, &amps, windows).unwrap_or(f64::NAN);
                    flat_gmt2[v] = gmt2_from_amplitudes(grid, &amps, windows).unwrap_or(f64::NAN);
                }
            }
        }
    }
    let wall_seconds = started.elapsed().as_secs_f64();
    Ok(VolumeInference {
        head: model.head,
        outputs,
        mwf,
        gmt2,
        valid: mask,
        skipped,
        timing: FitTiming {
            voxel_count: valid.len(),
            wall_seconds,
            per_voxel_mean_us: wall_seconds * 1e6 / valid.len().max(1) as f64,
            workers: workers.max(1),
        },
    })
}

/// Recomputes MWF from stored distribution outputs with other windows.
pub fn mwf_from_outputs(outputs: &Array4<f32>, valid: &Array3<bool>, grid: &T2Grid, windows: &MetricWindows) -> Array3<f64> {
    let n = outputs.shape()[3];
    let mut amps = vec![0.0f64; n];
    let mut out = Array3::from_elem(valid.raw_dim(), f64::NAN);
    for ((idx, &ok), o) in valid.indexed_iter().zip(out.iter_mut()) {
        if ok {
            let row = outputs.slice(ndarray::s![idx.0, idx.1, idx.2, ..]);
            amps.iter_mut().zip(row).for_each(|(a, &r)| *a = f64::from(r));
            *o = mwf_from_amplitudes(grid, &amps, windows).unwrap_or(f64::NAN);
        }
    }
    out
}
