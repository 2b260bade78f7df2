//! Conventional multi-exponential T2 fitting: refocusing-angle estimation,
//! non-negative least squares and χ²-targeted Tikhonov regularization.

pub mod nnls;
mod volume;

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::epg::{EpgParams, EpgSimulator};
use crate::error::{Error, Result};
use crate::relaxometry::{self, MetricWindows, T2Distribution, T2Grid};

pub use nnls::{nnls, NnlsSolver};
pub use volume::{fit_volume, FitTiming, VolumeFit, VoxelStatus};

/// Lower and upper edges of the accepted χ²/χ²min band.
pub const CHI2_RATIO_BAND: (f64, f64) = (1.020, 1.025);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    BoundaryFallback,
    UnregularizedDegenerate,
}

impl FitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FitStatus::Converged => "converged",
            FitStatus::BoundaryFallback => "boundary_fallback",
            FitStatus::UnregularizedDegenerate => "unregularized_degenerate",
        }
    }
}

/// Whether the final basis uses the refined (continuous) flip angle or the nearest search-grid angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisMode {
    #[default]
    Refined,
    Quantized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub grid: T2Grid,
    pub t1: f64,
    pub te1: f64,
    pub echo_spacing: f64,
    pub n_echoes: usize,
    /// Candidate refocusing angles in degrees, strictly increasing.
    pub flip_angles: Vec<f64>,
    pub chi2_target: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub mu_rel_tol: f64,
    pub max_mu_iterations: usize,
    /// χ²min below this fraction of ‖y‖² skips regularization.
    pub degenerate_ratio: f64,
    pub windows: MetricWindows,
    pub basis_mode: BasisMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        let epg = EpgParams::default();
        FitConfig {
            grid: T2Grid::default(),
            t1: epg.t1,
            te1: epg.te1,
            echo_spacing: epg.echo_spacing,
            n_echoes: epg.n_echoes,
            flip_angles: (90..=180).map(f64::from).collect(),
            chi2_target: 1.0225,
            mu_min: 1e-10,
            mu_max: 1e4,
            mu_rel_tol: 1e-6,
            max_mu_iterations: 50,
            degenerate_ratio: 1e-12,
            windows: MetricWindows::default(),
            basis_mode: BasisMode::Refined,
        }
    }
}

impl FitConfig {
    pub fn with_timing(self, te_ms: f64) -> Self {
        FitConfig {
            te1: te_ms,
            echo_spacing: te_ms,
            ..self
        }
    }

    pub fn epg_params(&self, flip_angle: f64) -> EpgParams {
        EpgParams {
            flip_angle,
            t1: self.t1,
            te1: self.te1,
            echo_spacing: self.echo_spacing,
            n_echoes: self.n_echoes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.epg_params(180.0).validate()?;
        self.windows.validate()?;
        let (lo, hi) = CHI2_RATIO_BAND;
        if !(self.chi2_target >= lo && self.chi2_target <= hi) {
            return Err(Error::param(format!(
                "chi2 target ratio {} outside [{lo}, {hi}]",
                self.chi2_target
            )));
        }
        if self.flip_angles.len() < 2 {
            return Err(Error::param("flip-angle search needs at least two angles"));
        }
        if self.flip_angles.windows(2).any(|w| w[1] <= w[0])
            || self.flip_angles[0] <= 0.0
            || *self.flip_angles.last().unwrap() > 180.0
        {
            return Err(Error::param("flip angles must be strictly increasing within (0, 180]"));
        }
        if !(self.mu_min > 0.0 && self.mu_min < self.mu_max && self.mu_max.is_finite()) {
            return Err(Error::param("mu bounds must satisfy 0 < mu_min < mu_max"));
        }
        if !(self.mu_rel_tol > 0.0) || self.max_mu_iterations == 0 {
            return Err(Error::param("mu tolerance and iteration cap must be positive"));
        }
        if !(self.degenerate_ratio >= 0.0) {
            return Err(Error::param("degenerate ratio must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub distribution: T2Distribution,
    pub chi2: f64,
    pub chi2_min: f64,
    pub mu: f64,
    pub flip_angle: f64,
    /// `None` when the fitted distribution is all zero.
    pub mwf: Option<f64>,
    /// `None` when the IEW window holds no mass.
    pub gmt2: Option<f64>,
    pub status: FitStatus,
}

impl FitResult {
    pub fn chi2_ratio(&self) -> f64 {
        if self.chi2_min > 0.0 {
            self.chi2 / self.chi2_min
        } else {
            1.0
        }
    }
}

/// Regularized solution with its misfit bookkeeping.
#[derive(Debug, Clone)]
pub struct RegularizedSolution {
    pub amplitudes: Vec<f64>,
    pub chi2: f64,
    pub chi2_min: f64,
    pub mu: f64,
    pub status: FitStatus,
}

/// Dictionary for one flip angle: `A` and `AᵀA`.
#[derive(Debug, Clone)]
pub struct Basis {
    pub flip_angle: f64,
    pub matrix: Array2<f64>,
    pub gram: Array2<f64>,
}

impl Basis {
    pub fn new(config: &FitConfig, flip_angle: f64) -> Result<Self> {
        let matrix = EpgSimulator::new(config.epg_params(flip_angle))?.basis(&config.grid)?;
        let gram = nnls::gram_matrix(matrix.view());
        Ok(Basis {
            flip_angle,
            matrix,
            gram,
        })
    }
}

/// Fitting engine with a warm cache of bases for every search-grid angle.
///
/// Immutable after construction; share it across threads and give each
/// thread its own [`FitWorkspace`].
#[derive(Debug)]
pub struct FitEngine {
    config: FitConfig,
    grid: Arc<T2Grid>,
    bases: Vec<Basis>,
}

/// Per-thread scratch buffers.
#[derive(Debug, Clone)]
pub struct FitWorkspace {
    solver: NnlsSolver,
    x: Vec<f64>,
    aty: Vec<f64>,
}

impl FitWorkspace {
    pub fn new(n_basis: usize) -> Self {
        FitWorkspace {
            solver: NnlsSolver::new(n_basis),
            x: vec![0.0; n_basis],
            aty: vec![0.0; n_basis],
        }
    }
}

impl FitEngine {
    pub fn new(config: FitConfig) -> Result<Self> {
        config.validate()?;
        let bases = config
            .flip_angles
            .iter()
            .map(|&a| Basis::new(&config, a))
            .collect::<Result<Vec<_>>>()?;
        Ok(FitEngine {
            grid: Arc::new(config.grid.clone()),
            config,
            bases,
        })
    }

    pub fn config(&self) -> &FitConfig {
        &self.config
    }

    pub fn grid(&self) -> &Arc<T2Grid> {
        &self.grid
    }

    pub fn workspace(&self) -> FitWorkspace {
        FitWorkspace::new(self.grid.len())
    }

    fn check_curve(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.config.n_echoes {
            return Err(Error::DimensionMismatch(format!(
                "curve has {} echoes, expected {}",
                y.len(),
                self.config.n_echoes
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput("curve contains non-finite samples".into()));
        }
        if !(y[0] > 0.0) {
            return Err(Error::DegenerateInput(format!("first echo is {}", y[0])));
        }
        Ok(())
    }

    /// Refocusing angle minimizing the unregularized NNLS residual, refined by
    /// a parabola through the best search angle and its neighbours.
    pub fn estimate_flip_angle(&self, y: &[f64], ws: &mut FitWorkspace) -> Result<f64> {
        self.check_curve(y)?;
        // Neighbouring angles have similar solutions, so each solve starts
        // from the previous one. Only the residual is used, and it is unique.
        ws.x.fill(0.0);
        let residuals = self
            .bases
            .iter()
            .map(|b| unregularized_residual(b, y, ws))
            .collect::<Result<Vec<_>>>()?;
        let angles = &self.config.flip_angles;
        let best = residuals
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("non-empty search grid");
        let lo = angles[0];
        if best == 0 || best == angles.len() - 1 {
            return Ok(angles[best].clamp(lo, 180.0));
        }
        let (x0, x1, x2) = (angles[best - 1], angles[best], angles[best + 1]);
        let (f0, f1, f2) = (residuals[best - 1], residuals[best], residuals[best + 1]);
        Ok(parabola_vertex([x0, x1, x2], [f0, f1, f2]).clamp(lo, 180.0))
    }

    /// Composes flip-angle estimation, basis construction, regularized fit and metrics.
    pub fn fit_voxel(&self, y: &[f64], ws: &mut FitWorkspace) -> Result<FitResult> {
        let flip_angle = self.estimate_flip_angle(y, ws)?;
        let owned;
        let basis = match self.config.basis_mode {
            BasisMode::Refined => {
                owned = Basis::new(&self.config, flip_angle)?;
                &owned
            }
            BasisMode::Quantized => self.nearest_basis(flip_angle),
        };
        let sol = regularize(basis.matrix.view(), &basis.gram, y, &self.config, ws)?;
        let windows = &self.config.windows;
        let mwf = relaxometry::mwf_from_amplitudes(&self.grid, &sol.amplitudes, windows).ok();
        let gmt2 = relaxometry::gmt2_from_amplitudes(&self.grid, &sol.amplitudes, windows).ok();
        Ok(FitResult {
            distribution: T2Distribution::new(self.grid.clone(), sol.amplitudes)?,
            chi2: sol.chi2,
            chi2_min: sol.chi2_min,
            mu: sol.mu,
            flip_angle: basis.flip_angle,
            mwf,
            gmt2,
            status: sol.status,
        })
    }

    fn nearest_basis(&self, flip_angle: f64) -> &Basis {
        self.bases
            .iter()
            .min_by(|a, b| {
                (a.flip_angle - flip_angle)
                    .abs()
                    .total_cmp(&(b.flip_angle - flip_angle).abs())
            })
            .expect("non-empty search grid")
    }
}

fn unregularized_residual(basis: &Basis, y: &[f64], ws: &mut FitWorkspace) -> Result<f64> {
    ws.aty = nnls::at_y(basis.matrix.view(), y);
    solve_or_best(&mut ws.solver, &basis.gram, &ws.aty, 0.0, &mut ws.x)?;
    Ok(nnls::residual_sq(basis.matrix.view(), &ws.x, y))
}

/// An exhausted iteration cap still leaves a feasible iterate; keep it.
fn solve_or_best(solver: &mut NnlsSolver, gram: &Array2<f64>, aty: &[f64], mu: f64, x: &mut [f64]) -> Result<()> {
    match solver.solve(gram, aty, mu, x) {
        Ok(_) => Ok(()),
        Err(Error::NnlsConvergence { best, .. }) => {
            x.copy_from_slice(&best);
            Ok(())
        }
        Err(e) => Err(e),
    }
}

/// Vertex of the parabola through three points, falling back to the middle
/// point when the curvature is not positive.
fn parabola_vertex(x: [f64; 3], f: [f64; 3]) -> f64 {
    let d01 = (f[1] - f[0]) / (x[1] - x[0]);
    let d12 = (f[2] - f[1]) / (x[2] - x[1]);
    let curvature = (d12 - d01) / (x[2] - x[0]);
    if !(curvature > 0.0) {
        return x[1];
    }
    let vertex = 0.5 * (x[0] + x[1]) - d01 / (2.0 * curvature);
    vertex.clamp(x[0], x[2])
}

/// Estimates the refocusing angle for one curve; builds a fresh engine.
pub fn estimate_flip_angle(y: &[f64], config: &FitConfig) -> Result<f64> {
    let engine = FitEngine::new(config.clone())?;
    let mut ws = engine.workspace();
    engine.estimate_flip_angle(y, &mut ws)
}

/// Fits one curve; builds a fresh engine (use [`FitEngine`] for many voxels).
pub fn fit_voxel(y: &[f64], config: &FitConfig) -> Result<FitResult> {
    let engine = FitEngine::new(config.clone())?;
    let mut ws = engine.workspace();
    engine.fit_voxel(y, &mut ws)
}

/// Solves `min ‖Ax − y‖² + μ‖x‖², x ≥ 0` with μ chosen so that
/// `χ²(μ) = chi2_target · χ²min`, bisecting on `log μ`.
pub fn regularized_fit(y: &[f64], a: ArrayView2<'_, f64>, config: &FitConfig) -> Result<RegularizedSolution> {
    config.validate()?;
    let (m, n) = a.dim();
    if y.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "curve has {} echoes, basis has {m} rows",
            y.len()
        )));
    }
    if a.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::param("non-finite values in fit input"));
    }
    let gram = nnls::gram_matrix(a);
    let mut ws = FitWorkspace::new(n);
    regularize(a, &gram, y, config, &mut ws)
}

fn regularize(
    a: ArrayView2<'_, f64>,
    gram: &Array2<f64>,
    y: &[f64],
    config: &FitConfig,
    ws: &mut FitWorkspace,
) -> Result<RegularizedSolution> {
    let n = gram.nrows();
    ws.aty = nnls::at_y(a, y);
    let aty = std::mem::take(&mut ws.aty);
    let mut solve = |mu: f64, x: &mut Vec<f64>| -> Result<f64> {
        solve_or_best(&mut ws.solver, gram, &aty, mu, x)?;
        Ok(nnls::residual_sq(a, x, y))
    };

    let mut x0 = vec![0.0; n];
    let chi2_min = solve(0.0, &mut x0)?;
    let y_energy: f64 = y.iter().map(|v| v * v).sum();
    if chi2_min <= config.degenerate_ratio * y_energy {
        return Ok(RegularizedSolution {
            amplitudes: x0,
            chi2: chi2_min,
            chi2_min,
            mu: 0.0,
            status: FitStatus::UnregularizedDegenerate,
        });
    }

    let target = config.chi2_target;
    let tol = config.mu_rel_tol * target;
    let gap = |chi2: f64| chi2 / chi2_min - target;

    // Bisection on log μ. The bracket ends are solved only if bisection runs
    // out, since χ² is monotone in μ and most targets sit well inside.
    let (mut log_lo, mut log_hi) = (config.mu_min.ln(), config.mu_max.ln());
    let mut lo: Option<(f64, f64, Vec<f64>)> = None;
    let mut hi: Option<(f64, f64, Vec<f64>)> = None;
    let mut x = x0;
    for _ in 0..config.max_mu_iterations {
        let log_mid = 0.5 * (log_lo + log_hi);
        let mu = log_mid.exp();
        let chi2 = solve(mu, &mut x)?;
        let g = gap(chi2);
        if g.abs() <= tol {
            return Ok(RegularizedSolution {
                amplitudes: x,
                chi2,
                chi2_min,
                mu,
                status: FitStatus::Converged,
            });
        }
        if g < 0.0 {
            log_lo = log_mid;
            lo = Some((mu, chi2, x.clone()));
        } else {
            log_hi = log_mid;
            hi = Some((mu, chi2, x.clone()));
        }
    }
    // Exhausted: fall back to the bracket end closest to the target, solving
    // the configured bound when bisection never left it.
    let mut end = |side: Option<(f64, f64, Vec<f64>)>, mu: f64| -> Result<(f64, f64, Vec<f64>)> {
        match side {
            Some(s) => Ok(s),
            None => {
                let mut xb = x.clone();
                let chi2 = solve(mu, &mut xb)?;
                Ok((mu, chi2, xb))
            }
        }
    };
    let lo = end(lo, config.mu_min)?;
    let hi = end(hi, config.mu_max)?;
    let (mu, chi2, amplitudes) = if gap(lo.1).abs() <= gap(hi.1).abs() { lo } else { hi };
    // Active-set changes can make χ²(μ) jump across the target; a bracket
    // collapsed onto such a jump still counts if it lands inside the band.
    let ratio = chi2 / chi2_min;
    let status = if (CHI2_RATIO_BAND.0..=CHI2_RATIO_BAND.1).contains(&ratio) {
        FitStatus::Converged
    } else {
        FitStatus::BoundaryFallback
    };
    Ok(RegularizedSolution {
        amplitudes,
        chi2,
        chi2_min,
        mu,
        status,
    })
}
