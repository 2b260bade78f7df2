//! T2 grid, distributions and the scalar metrics extracted from them.
//!
//! Window membership is inclusive at both ends and uses grid-point sums, so a
//! grid point sitting exactly on a window edge counts toward that window.

use std::ops::RangeInclusive;
use std::sync::Arc;

use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_N_BASIS: usize = 120;
pub const DEFAULT_T2_MIN_MS: f64 = 15.0;
pub const DEFAULT_T2_MAX_MS: f64 = 2000.0;

/// Logarithmically spaced relaxation times in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct T2Grid {
    points: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct GridSpec {
    n_basis: usize,
    t2_min_ms: f64,
    t2_max_ms: f64,
}

impl TryFrom<GridSpec> for T2Grid {
    type Error = Error;

    fn try_from(spec: GridSpec) -> Result<Self> {
        T2Grid::log_spaced(spec.n_basis, spec.t2_min_ms, spec.t2_max_ms)
    }
}

impl From<T2Grid> for GridSpec {
    fn from(grid: T2Grid) -> Self {
        GridSpec {
            n_basis: grid.len(),
            t2_min_ms: grid.t2_min(),
            t2_max_ms: grid.t2_max(),
        }
    }
}

impl T2Grid {
    /// `points[k] = t2_min * (t2_max / t2_min)^(k / (n - 1))`, endpoints exact.
    pub fn log_spaced(n_basis: usize, t2_min: f64, t2_max: f64) -> Result<Self> {
        if n_basis < 2 {
            return Err(Error::param(format!("n_basis must be >= 2, got {n_basis}")));
        }
        if !(t2_min > 0.0 && t2_min < t2_max && t2_max.is_finite()) {
            return Err(Error::param(format!(
                "T2 bounds must satisfy 0 < t2_min < t2_max, got [{t2_min}, {t2_max}]"
            )));
        }
        let ratio = t2_max / t2_min;
        let last = (n_basis - 1) as f64;
        let mut points: Vec<f64> = (0..n_basis)
            .map(|k| t2_min * ratio.powf(k as f64 / last))
            .collect();
        points[0] = t2_min;
        points[n_basis - 1] = t2_max;
        Ok(T2Grid { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn t2_min(&self) -> f64 {
        self.points[0]
    }

    pub fn t2_max(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Index range of grid points with `lo <= T2 <= hi`; `None` when no point qualifies.
    pub fn window_indices(&self, lo: f64, hi: f64) -> Option<RangeInclusive<usize>> {
        let first = self.points.iter().position(|&t| t >= lo)?;
        let last = self.points.iter().rposition(|&t| t <= hi)?;
        (first <= last).then_some(first..=last)
    }
}

impl Default for T2Grid {
    fn default() -> Self {
        T2Grid::log_spaced(DEFAULT_N_BASIS, DEFAULT_T2_MIN_MS, DEFAULT_T2_MAX_MS)
            .expect("default grid is valid")
    }
}

/// Non-negative amplitudes on a [`T2Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct T2Distribution {
    grid: Arc<T2Grid>,
    amplitudes: Vec<f64>,
}

impl T2Distribution {
    pub fn new(grid: Arc<T2Grid>, amplitudes: Vec<f64>) -> Result<Self> {
        if amplitudes.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "distribution has {} amplitudes for a {}-point grid",
                amplitudes.len(),
                grid.len()
            )));
        }
        if let Some((j, a)) = amplitudes
            .iter()
            .enumerate()
            .find(|(_, a)| !a.is_finite() || **a < 0.0)
        {
            return Err(Error::param(format!(
                "amplitude {j} is {a}; distributions must be finite and non-negative"
            )));
        }
        Ok(T2Distribution { grid, amplitudes })
    }

    pub fn zeros(grid: Arc<T2Grid>) -> Self {
        let amplitudes = vec![0.0; grid.len()];
        T2Distribution { grid, amplitudes }
    }

    /// All mass on grid point `index`.
    pub fn delta(grid: Arc<T2Grid>, index: usize, amplitude: f64) -> Result<Self> {
        let mut amplitudes = vec![0.0; grid.len()];
        *amplitudes
            .get_mut(index)
            .ok_or_else(|| Error::param(format!("grid index {index} out of range")))? = amplitude;
        T2Distribution::new(grid, amplitudes)
    }

    pub fn grid(&self) -> &Arc<T2Grid> {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<f64> {
        self.amplitudes
    }

    pub fn total(&self) -> f64 {
        self.amplitudes.iter().sum()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        T2Distribution::new(
            self.grid.clone(),
            self.amplitudes.iter().map(|a| a * c).collect(),
        )
    }
}

/// Integration windows for MWF (myelin) and GMT2 (intra/extra-cellular water).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricWindows {
    pub myelin_lo: f64,
    pub myelin_hi: f64,
    pub iew_lo: f64,
    pub iew_hi: f64,
}

impl Default for MetricWindows {
    fn default() -> Self {
        MetricWindows {
            myelin_lo: 15.0,
            myelin_hi: 40.0,
            iew_lo: 40.0,
            iew_hi: 200.0,
        }
    }
}

impl MetricWindows {
    pub fn with_myelin_cutoff(myelin_hi: f64) -> Result<Self> {
        let w = MetricWindows {
            myelin_hi,
            ..MetricWindows::default()
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = self.myelin_lo < self.myelin_hi && self.iew_lo < self.iew_hi;
        // Thresholds above 40 ms (the 50 ms sweep) overlap the IEW window by design.
        if !ordered || !self.myelin_lo.is_finite() || !self.iew_hi.is_finite() {
            return Err(Error::param(format!("invalid metric windows {self:?}")));
        }
        Ok(())
    }
}

/// Myelin water fraction from raw grid amplitudes.
pub fn mwf_from_amplitudes(grid: &T2Grid, amplitudes: &[f64], windows: &MetricWindows) -> Result<f64> {
    check_len(grid, amplitudes)?;
    let total: f64 = amplitudes.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateDistribution);
    }
    let myelin: f64 = match grid.window_indices(windows.myelin_lo, windows.myelin_hi) {
        Some(range) => amplitudes[range].iter().sum(),
        None => 0.0,
    };
    Ok((myelin / total).clamp(0.0, 1.0))
}

/// Geometric mean T2 (ms) over the IEW window from raw grid amplitudes.
pub fn gmt2_from_amplitudes(grid: &T2Grid, amplitudes: &[f64], windows: &MetricWindows) -> Result<f64> {
    check_len(grid, amplitudes)?;
    let degenerate = Error::DegenerateWindow {
        lo: windows.iew_lo,
        hi: windows.iew_hi,
    };
    let range = grid
        .window_indices(windows.iew_lo, windows.iew_hi)
        .ok_or(degenerate)?;
    let points = &grid.points()[range.clone()];
    let amps = &amplitudes[range];

    let mut mass = 0.0;
    let mut log_sum = 0.0;
    let mut support = None;
    for (&t2, &s) in points.iter().zip(amps) {
        if s > 0.0 {
            mass += s;
            log_sum += s * t2.ln();
            support = match support {
                None => Some(Some(t2)),
                Some(_) => Some(None),
            };
        }
    }
    if !(mass > 0.0) {
        return Err(Error::DegenerateWindow {
            lo: windows.iew_lo,
            hi: windows.iew_hi,
        });
    }
    // Single supporting point: return it exactly rather than exp(ln(t2)).
    if let Some(Some(t2)) = support {
        return Ok(t2);
    }
    let lo = points[0];
    let hi = points[points.len() - 1];
    Ok((log_sum / mass).exp().clamp(lo, hi))
}

pub fn mwf(dist: &T2Distribution, windows: &MetricWindows) -> Result<f64> {
    mwf_from_amplitudes(dist.grid(), dist.amplitudes(), windows)
}

pub fn gmt2_iew(dist: &T2Distribution, windows: &MetricWindows) -> Result<f64> {
    gmt2_from_amplitudes(dist.grid(), dist.amplitudes(), windows)
}

/// Keeps voxels inside `mask_in` whose MWF is strictly between 0 and 0.30.
pub fn refine_mask(mwf_map: &Array3<f64>, mask_in: &Array3<bool>) -> Result<Array3<bool>> {
    if mwf_map.dim() != mask_in.dim() {
        return Err(Error::DimensionMismatch(format!(
            "MWF map {:?} vs mask {:?}",
            mwf_map.dim(),
            mask_in.dim()
        )));
    }
    Ok(Zip::from(mwf_map)
        .and(mask_in)
        .map_collect(|&f, &m| m && f > 0.0 && f < 0.30))
}

fn check_len(grid: &T2Grid, amplitudes: &[f64]) -> Result<()> {
    if amplitudes.len() != grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} amplitudes for a {}-point grid",
            amplitudes.len(),
            grid.len()
        )));
    }
    Ok(())
}
