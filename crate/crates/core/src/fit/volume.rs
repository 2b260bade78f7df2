use std::path::Path;
use std::time::Instant;

use ndarray::{Array3, Array4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FitEngine, FitResult, FitStatus};
use crate::error::{Error, Result};
use crate::phantom::EchoCube;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoxelStatus {
    Masked,
    Failed,
    Fitted(FitStatus),
}

impl VoxelStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            VoxelStatus::Masked => "masked",
            VoxelStatus::Failed => "failed",
            VoxelStatus::Fitted(s) => s.as_str(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTiming {
    pub voxel_count: usize,
    pub wall_seconds: f64,
    pub per_voxel_mean_us: f64,
    pub workers: usize,
}

impl FitTiming {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Per-voxel fit outputs. Unfitted voxels hold `NaN` in the scalar maps and
/// zeros in the distributions.
#[derive(Debug, Clone)]
pub struct VolumeFit {
    pub mwf: Array3<f64>,
    pub gmt2: Array3<f64>,
    pub flip_angle: Array3<f64>,
    pub chi2: Array3<f64>,
    pub chi2_min: Array3<f64>,
    pub mu: Array3<f64>,
    pub status: Array3<VoxelStatus>,
    /// `[nx, ny, nz, n_basis]`.
    pub distributions: Array4<f64>,
    /// Flat voxel index and error message for every failed voxel.
    pub failures: Vec<(usize, String)>,
    pub timing: FitTiming,
}

impl VolumeFit {
    pub fn count(&self, status: VoxelStatus) -> usize {
        self.status.iter().filter(|&&s| s == status).count()
    }

    /// Mask of voxels holding a fitted distribution.
    pub fn fitted_mask(&self) -> Array3<bool> {
        self.status.mapv(|s| matches!(s, VoxelStatus::Fitted(_)))
    }
}

/// Fits every masked voxel on a pool of `workers` threads.
///
/// Each voxel is fitted independently with its own workspace, so results are
/// identical for any worker count.
pub fn fit_volume(cube: &EchoCube, engine: &FitEngine, workers: usize) -> Result<VolumeFit> {
    if cube.n_echoes() != engine.config().n_echoes {
        return Err(Error::DimensionMismatch(format!(
            "cube has {} echoes, fit expects {}",
            cube.n_echoes(),
            engine.config().n_echoes
        )));
    }
    let voxels = cube.masked_voxels();
    if voxels.is_empty() {
        return Err(Error::DegenerateInput("mask selects no voxels".into()));
    }
    let workers = workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::param(format!("cannot start {workers} workers: {e}")))?;

    let start = Instant::now();
    let results: Vec<Result<FitResult>> = pool.install(|| {
        voxels
            .par_iter()
            .map_init(
                || engine.workspace(),
                |ws, &v| engine.fit_voxel(&cube.curve(v), ws),
            )
            .collect()
    });
    let wall = start.elapsed().as_secs_f64();

    let dims = cube.dims();
    let n_basis = engine.grid().len();
    let nan = || Array3::from_elem(dims, f64::NAN);
    let mut out = VolumeFit {
        mwf: nan(),
        gmt2: nan(),
        flip_angle: nan(),
        chi2: nan(),
        chi2_min: nan(),
        mu: nan(),
        status: Array3::from_elem(dims, VoxelStatus::Masked),
        distributions: Array4::zeros((dims.0, dims.1, dims.2, n_basis)),
        failures: Vec::new(),
        timing: FitTiming {
            voxel_count: voxels.len(),
            wall_seconds: wall,
            per_voxel_mean_us: wall * 1e6 / voxels.len() as f64,
            workers,
        },
    };
    let mut dist_rows = out
        .distributions
        .view_mut()
        .into_shape_with_order((cube.n_voxels(), n_basis))
        .expect("contiguous");
    let set = |a: &mut Array3<f64>, v: usize, x: f64| a.as_slice_mut().expect("contiguous")[v] = x;
    let status = out.status.as_slice_mut().expect("contiguous");
    for (&v, res) in voxels.iter().zip(results) {
        match res {
            Ok(r) => {
                set(&mut out.mwf, v, r.mwf.unwrap_or(f64::NAN));
                set(&mut out.gmt2, v, r.gmt2.unwrap_or(f64::NAN));
                set(&mut out.flip_angle, v, r.flip_angle);
                set(&mut out.chi2, v, r.chi2);
                set(&mut out.chi2_min, v, r.chi2_min);
                set(&mut out.mu, v, r.mu);
                status[v] = VoxelStatus::Fitted(r.status);
                dist_rows
                    .row_mut(v)
                    .iter_mut()
                    .zip(r.distribution.amplitudes())
                    .for_each(|(d, a)| *d = *a);
            }
            Err(e) => {
                status[v] = VoxelStatus::Failed;
                out.failures.push((v, e.to_string()));
            }
        }
    }
    Ok(out)
}
