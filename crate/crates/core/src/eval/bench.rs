//! Wall-clock comparison of the conventional fit and the surrogate.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_volume, FitConfig, FitEngine};
use crate::nn::{infer_volume, MlpModel};
use crate::phantom::EchoCube;

/// Default repetitions per pipeline.
pub const BENCH_REPS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub voxel_count: usize,
    pub workers: usize,
    pub repetitions: usize,
    /// Engine construction (basis warmup), paid once and not in the timed runs.
    pub engine_build_seconds: f64,
    pub conventional_median_seconds: f64,
    pub surrogate_median_seconds: f64,
    pub conventional_mean_seconds: f64,
    pub surrogate_mean_seconds: f64,
    /// Ratio of medians.
    pub speedup: f64,
    pub speedup_of_means: f64,
    pub conventional_per_voxel_us: f64,
    pub surrogate_per_voxel_us: f64,
    pub conventional_runs_seconds: Vec<f64>,
    pub surrogate_runs_seconds: Vec<f64>,
    pub hardware: String,
    /// Maps from every timed run equal those of an untimed run.
    pub maps_identical: bool,
}

impl BenchReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// CPU model, logical core count and architecture.
pub fn hardware_fingerprint() -> String {
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{model}; {cores} logical cores; {}", std::env::consts::ARCH)
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn same_bits(a: &ndarray::Array3<f64>, b: &ndarray::Array3<f64>) -> bool {
    a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Times `fit_volume` and `infer_volume` on `cube`, `reps` times each, for
/// every worker count. Each pipeline is run once untimed first; its maps are
/// the reference for the determinism check.
pub fn benchmark(
    cube: &EchoCube,
    fit_config: &FitConfig,
    model: &MlpModel,
    workers: &[usize],
    reps: usize,
) -> Result<Vec<BenchReport>> {
    if reps == 0 || workers.is_empty() || workers.contains(&0) {
        return Err(Error::param("benchmark needs reps > 0 and positive worker counts"));
    }
    if cube.n_voxels() == 0 {
        return Err(Error::param("benchmark cube is empty"));
    }
    let t0 = Instant::now();
    let engine = FitEngine::new(fit_config.clone())?;
    let engine_build_seconds = t0.elapsed().as_secs_f64();
    let ref_fit = fit_volume(cube, &engine, workers[0])?;
    let ref_inf = infer_volume(model, cube, workers[0])?;
    let hardware = hardware_fingerprint();

    let mut reports = Vec::new();
    for &w in workers {
        let mut identical = true;
        let mut conv = Vec::with_capacity(reps);
        for _ in 0..reps {
            let t = Instant::now();
            let f = fit_volume(cube, &engine, w)?;
            conv.push(t.elapsed().as_secs_f64());
            identical &= same_bits(&f.mwf, &ref_fit.mwf) && same_bits(&f.gmt2, &ref_fit.gmt2);
        }
        let mut surr = Vec::with_capacity(reps);
        for _ in 0..reps {
            let t = Instant::now();
            let inf = infer_volume(model, cube, w)?;
            surr.push(t.elapsed().as_secs_f64());
            identical &= same_bits(&inf.mwf, &ref_inf.mwf) && same_bits(&inf.gmt2, &ref_inf.gmt2);
        }
        let (cm, sm) = (median(&conv), median(&surr));
        let n = cube.n_voxels() as f64;
        reports.push(BenchReport {
            voxel_count: cube.n_voxels(),
            workers: w,
            repetitions: reps,
            engine_build_seconds,
            conventional_median_seconds: cm,
            surrogate_median_seconds: sm,
            conventional_mean_seconds: mean(&conv),
            surrogate_mean_seconds: mean(&surr),
            speedup: cm / sm,
            speedup_of_means: mean(&conv) / mean(&surr),
            conventional_per_voxel_us: cm / n * 1e6,
            surrogate_per_voxel_us: sm / n * 1e6,
            conventional_runs_seconds: conv,
            surrogate_runs_seconds: surr,
            hardware: hardware.clone(),
            maps_identical: identical,
        });
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub voxel_counts: Vec<usize>,
    pub median_seconds: Vec<f64>,
    pub slope_us_per_voxel: f64,
    pub intercept_seconds: f64,
    pub r_squared: f64,
}

/// Median surrogate time on the first `n` voxels of `cube` for each size,
/// with a least-squares line through (n, t).
pub fn surrogate_scaling(
    cube: &EchoCube,
    model: &MlpModel,
    sizes: &[usize],
    workers: usize,
    reps: usize,
) -> Result<ScalingReport> {
    if sizes.len() < 2 || reps == 0 {
        return Err(Error::param("scaling needs at least two sizes and one repetition"));
    }
    if sizes.iter().any(|&n| n == 0 || n > cube.n_voxels()) {
        return Err(Error::param("scaling sizes must lie in 1..=voxel count"));
    }
    let mut times = Vec::new();
    for &n in sizes {
        let idx: Vec<usize> = (0..n).collect();
        let sub = cube.subset(&idx)?;
        let mut runs = Vec::with_capacity(reps);
        for _ in 0..reps {
            let t = Instant::now();
            infer_volume(model, &sub, workers)?;
            runs.push(t.elapsed().as_secs_f64());
        }
        times.push(median(&runs));
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let (mx, my) = (mean(&xs), mean(&times));
    let sxy: f64 = xs.iter().zip(&times).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = times.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(ScalingReport {
        voxel_counts: sizes.to_vec(),
        median_seconds: times,
        slope_us_per_voxel: slope * 1e6,
        intercept_seconds: my - slope * mx,
        r_squared: r2,
    })
}
