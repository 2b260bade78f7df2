//! Ground-truth voxel models: two water pools, each a Gaussian in log-T2.
//!
//! The myelin pool is confined to grid points at or below the myelin cutoff
//! and the intra/extra-cellular pool to points above it, so the true MWF of a
//! voxel equals its drawn myelin fraction. Each Gaussian is cut at four
//! standard deviations.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relaxometry::{self, MetricWindows, T2Grid};

const GAUSS_CUTOFF: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TissueClass {
    HealthyWm,
    Lesion,
    GmLike,
}

impl TissueClass {
    pub const ALL: [TissueClass; 3] = [TissueClass::HealthyWm, TissueClass::Lesion, TissueClass::GmLike];

    pub fn as_str(self) -> &'static str {
        match self {
            TissueClass::HealthyWm => "healthy_wm",
            TissueClass::Lesion => "lesion",
            TissueClass::GmLike => "gm_like",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub center_t2: f64,
    /// Standard deviation in natural-log T2 units.
    pub log_width: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelTruth {
    pub class: TissueClass,
    /// True myelin water fraction of the discretized truth distribution.
    pub mwf: f64,
    /// True IEW geometric-mean T2 (ms).
    pub gmt2: f64,
    pub flip_angle: f64,
    /// Total signal (sum of amplitudes) in signal units.
    pub scale: f64,
    pub pools: Vec<PoolSpec>,
}

/// Amplitudes on `grid` for a myelin pool and an IEW pool, summing to `scale`.
pub fn truth_amplitudes(grid: &T2Grid, pools: &[PoolSpec], myelin_cutoff: f64, scale: f64) -> Result<Vec<f64>> {
    let total_fraction: f64 = pools.iter().map(|p| p.fraction).sum();
    if (total_fraction - 1.0).abs() > 1e-9 {
        return Err(Error::param(format!("pool fractions sum to {total_fraction}, not 1")));
    }
    let mut amps = vec![0.0; grid.len()];
    for (k, pool) in pools.iter().enumerate() {
        if !(pool.center_t2 >= grid.t2_min() && pool.center_t2 <= grid.t2_max()) {
            return Err(Error::param(format!(
                "pool center {} ms outside the grid",
                pool.center_t2
            )));
        }
        if pool.fraction == 0.0 {
            continue;
        }
        let short = pool.center_t2 <= myelin_cutoff;
        let log_c = pool.center_t2.ln();
        let weights: Vec<(usize, f64)> = grid
            .points()
            .iter()
            .enumerate()
            .filter(|(_, &t)| if short { t <= myelin_cutoff } else { t > myelin_cutoff })
            .filter_map(|(j, &t)| {
                let z = (t.ln() - log_c) / pool.log_width;
                (z.abs() <= GAUSS_CUTOFF).then(|| (j, (-0.5 * z * z).exp()))
            })
            .collect();
        let norm: f64 = weights.iter().map(|w| w.1).sum();
        if !(norm > 0.0) {
            return Err(Error::param(format!("pool {k} has no support on the grid")));
        }
        for (j, w) in weights {
            amps[j] += scale * pool.fraction * w / norm;
        }
    }
    Ok(amps)
}

struct ClassRanges {
    myelin_fraction: (f64, f64),
    iew_center: IewCenter,
}

enum IewCenter {
    Uniform(f64, f64),
    /// Normal(mean, sd) restricted to `[lo, hi]` by rejection.
    Truncated { mean: f64, sd: f64, lo: f64, hi: f64 },
}

fn ranges(class: TissueClass) -> ClassRanges {
    match class {
        TissueClass::HealthyWm => ClassRanges {
            myelin_fraction: (0.05, 0.20),
            iew_center: IewCenter::Truncated {
                mean: 65.0,
                sd: 6.0,
                lo: 60.0,
                hi: 90.0,
            },
        },
        TissueClass::Lesion => ClassRanges {
            myelin_fraction: (0.0, 0.08),
            iew_center: IewCenter::Uniform(80.0, 120.0),
        },
        TissueClass::GmLike => ClassRanges {
            myelin_fraction: (0.02, 0.06),
            iew_center: IewCenter::Uniform(70.0, 100.0),
        },
    }
}

pub const MYELIN_CENTER_MS: (f64, f64) = (15.0, 30.0);
pub const LOG_WIDTH: (f64, f64) = (0.10, 0.20);
pub const SIGNAL_SCALE: (f64, f64) = (800.0, 1200.0);
pub const FLIP_RANGE_DEG: (f64, f64) = (130.0, 180.0);

/// Draws a two-pool voxel of the given class.
///
/// The flip angle is drawn uniformly over 130–180°; cohort
/// generation replaces it with its smooth field.
pub fn make_voxel_truth<R: Rng + ?Sized>(
    class: TissueClass,
    grid: &T2Grid,
    windows: &MetricWindows,
    rng: &mut R,
) -> Result<VoxelTruth> {
    let r = ranges(class);
    let uniform = |lo: f64, hi: f64| Uniform::new_inclusive(lo, hi).expect("valid range");
    let fraction = uniform(r.myelin_fraction.0, r.myelin_fraction.1).sample(rng);
    let myelin_center = uniform(MYELIN_CENTER_MS.0, MYELIN_CENTER_MS.1).sample(rng);
    let iew_center = match r.iew_center {
        IewCenter::Uniform(lo, hi) => uniform(lo, hi).sample(rng),
        IewCenter::Truncated { mean, sd, lo, hi } => {
            let normal = Normal::new(mean, sd).expect("valid normal");
            loop {
                let v = normal.sample(rng);
                if (lo..=hi).contains(&v) {
                    break v;
                }
            }
        }
    };
    let width = uniform(LOG_WIDTH.0, LOG_WIDTH.1);
    let pools = vec![
        PoolSpec {
            center_t2: myelin_center,
            log_width: width.sample(rng),
            fraction,
        },
        PoolSpec {
            center_t2: iew_center,
            log_width: width.sample(rng),
            fraction: 1.0 - fraction,
        },
    ];
    let scale = uniform(SIGNAL_SCALE.0, SIGNAL_SCALE.1).sample(rng);
    let flip_angle = uniform(FLIP_RANGE_DEG.0, FLIP_RANGE_DEG.1).sample(rng);
    finish_truth(class, pools, scale, flip_angle, grid, windows)
}

pub(crate) fn finish_truth(
    class: TissueClass,
    pools: Vec<PoolSpec>,
    scale: f64,
    flip_angle: f64,
    grid: &T2Grid,
    windows: &MetricWindows,
) -> Result<VoxelTruth> {
    let amps = truth_amplitudes(grid, &pools, windows.myelin_hi, scale)?;
    Ok(VoxelTruth {
        class,
        mwf: relaxometry::mwf_from_amplitudes(grid, &amps, windows)?,
        gmt2: relaxometry::gmt2_from_amplitudes(grid, &amps, windows)?,
        flip_angle,
        scale,
        pools,
    })
}

impl VoxelTruth {
    pub fn amplitudes(&self, grid: &T2Grid, windows: &MetricWindows) -> Result<Vec<f64>> {
        truth_amplitudes(grid, &self.pools, windows.myelin_hi, self.scale)
    }
}
