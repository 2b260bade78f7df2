use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use mwnet_core::error::Error;
use mwnet_core::eval::{
    self, bland_altman, compare, finite_mask, summarize_nrmse, write_reports_csv, ThresholdRow,
};
use mwnet_core::fit::{fit_volume, FitConfig, FitEngine};
use mwnet_core::nn::{self, build_dataset, load_model, save_model, Dataset, HeadKind};
use mwnet_core::phantom::{make_cohort, read_cube, tukey_apodize, write_cube, EchoCube, SubjectKind};
use mwnet_core::relaxometry::{mwf_from_amplitudes, refine_mask, MetricWindows, T2Grid};
use ndarray::{s, Array3};
use serde::Serialize;

use crate::config::RunConfig;
use crate::maps::{self, Maps};
use crate::{svg, CliError};

type Result<T> = std::result::Result<T, CliError>;

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::from)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

#[derive(Serialize)]
struct CohortListing {
    subjects: Vec<ListingEntry>,
}

#[derive(Serialize)]
struct ListingEntry {
    index: usize,
    kind: SubjectKind,
    manifest: String,
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    mkdir(out)?;
    let subjects = make_cohort(&cfg.cohort)?;
    let mut listing = CohortListing { subjects: Vec::new() };
    for (i, s) in subjects.iter().enumerate() {
        let name = format!("subject_{i:03}.ecube.json");
        write_cube(&s.cube, &out.join(&name))?;
        listing.subjects.push(ListingEntry {
            index: i,
            kind: s.kind,
            manifest: name,
        });
    }
    write_json(&out.join("cohort.json"), &listing)?;
    cfg.write_resolved(out)
}

/// The configured fit with acquisition timing taken from the cube.
fn fit_config_for(cfg: &FitConfig, cube: &EchoCube) -> FitConfig {
    FitConfig {
        te1: cube.te1,
        echo_spacing: cube.echo_spacing,
        n_echoes: cube.n_echoes(),
        ..cfg.clone()
    }
}

/// Engines keyed by acquisition timing, so cubes with the same protocol share bases.
#[derive(Default)]
struct Engines(HashMap<(u64, u64, usize), FitEngine>);

impl Engines {
    fn get(&mut self, cfg: &FitConfig, cube: &EchoCube) -> Result<&FitEngine> {
        let key = (cube.te1.to_bits(), cube.echo_spacing.to_bits(), cube.n_echoes());
        Ok(match self.0.entry(key) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(FitEngine::new(fit_config_for(cfg, cube))?),
        })
    }
}

pub fn fit(cfg: &RunConfig, cube: &Path, out: &Path, tukey: Option<f64>) -> Result<()> {
    let mut cube = read_cube(cube)?;
    if let Some(r) = tukey {
        cube = tukey_apodize(&cube, r)?;
    }
    let engine = FitEngine::new(fit_config_for(&cfg.fit, &cube))?;
    let fit = fit_volume(&cube, &engine, cfg.workers)?;
    mkdir(out)?;
    maps::write_maps(out, &maps::fit_rows(&fit))?;
    maps::write_distributions(out, &fit.distributions)?;
    fit.timing.write_json(&out.join("timing.json"))?;
    cfg.write_resolved(out)
}

fn labeled(cfg: &RunConfig, paths: &[PathBuf], head: HeadKind, engines: &mut Engines) -> Result<Dataset> {
    let mut parts = Vec::new();
    for p in paths {
        let cube = read_cube(p)?;
        let fit = fit_volume(&cube, engines.get(&cfg.fit, &cube)?, cfg.workers)?;
        let mask = refine_mask(&fit.mwf, &fit.fitted_mask())?;
        parts.push(build_dataset(&cube, &fit, &mask, head)?.data);
    }
    let refs: Vec<&Dataset> = parts.iter().collect();
    Ok(Dataset::concat(&refs)?)
}

pub fn train(cfg: &RunConfig, cubes: &[PathBuf], val: &[PathBuf], head: HeadKind, out: &Path) -> Result<()> {
    let mut engines = Engines::default();
    let train_set = labeled(cfg, cubes, head, &mut engines)?;
    if train_set.is_empty() {
        return Err(Error::DegenerateInput("no labelled training voxels".into()).into());
    }
    let (train_set, val_set) = if val.is_empty() {
        // Every fifth labelled voxel is held out for early stopping.
        let (v, t): (Vec<usize>, Vec<usize>) = (0..train_set.len()).partition(|i| i % 5 == 4);
        (train_set.select(&t), train_set.select(&v))
    } else {
        let v = labeled(cfg, val, head, &mut engines)?;
        (train_set, v)
    };
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::DegenerateInput("too few labelled voxels to train and validate".into()).into());
    }
    let (model, log) = nn::train(&train_set, &val_set, &cfg.train, head)?;
    mkdir(out)?;
    save_model(&model, &out.join("model.mwnet"))?;
    let file = fs::File::create(out.join("train_log.csv")).map_err(Error::from)?;
    log.write_csv(file)?;
    cfg.write_resolved(out)
}

pub fn infer(cfg: &RunConfig, model: &Path, cube: &Path, out: &Path) -> Result<()> {
    let model = load_model(model)?;
    let cube = read_cube(cube)?;
    let inf = nn::infer_volume(&model, &cube, cfg.workers)?;
    mkdir(out)?;
    maps::write_maps(out, &maps::inference_rows(&inf, &cube.mask))?;
    if inf.head == HeadKind::Distribution {
        maps::write_distributions(out, &inf.outputs.mapv(f64::from))?;
    }
    inf.timing.write_json(&out.join("timing.json"))?;
    cfg.write_resolved(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Experiment {
    /// Agreement report for MWF and GMT2.
    Compare,
    /// MWF NRMSE at each myelin-window cutoff, from both distribution files.
    ThresholdSweep,
}

/// Voxels usable in both map sets, finite in MWF, optionally inside a cube
/// mask and refined to reference MWF in (0, 0.30).
fn evaluation_mask(cfg: &RunConfig, pred: &Maps, reference: &Maps, cube_mask: Option<&Path>) -> Result<Array3<bool>> {
    if pred.mwf.dim() != reference.mwf.dim() {
        return Err(Error::DimensionMismatch(format!(
            "prediction {:?} vs reference {:?}",
            pred.mwf.dim(),
            reference.mwf.dim()
        ))
        .into());
    }
    let mut mask = &pred.usable & &reference.usable;
    if let Some(p) = cube_mask {
        let cube = read_cube(p)?;
        if cube.mask.dim() != mask.dim() {
            return Err(Error::DimensionMismatch("mask does not match the maps".into()).into());
        }
        mask = &mask & &cube.mask;
    }
    if cfg.eval.refine {
        mask = refine_mask(&reference.mwf, &mask)?;
    }
    let mask = finite_mask(&pred.mwf, &reference.mwf, &mask);
    if !mask.iter().any(|&m| m) {
        return Err(Error::DegenerateInput("evaluation mask is empty".into()).into());
    }
    Ok(mask)
}

fn selected(a: &Array3<f64>, mask: &Array3<bool>) -> Vec<f64> {
    a.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect()
}

pub fn evaluate(
    cfg: &RunConfig,
    pred_dir: &Path,
    ref_dir: &Path,
    mask_cube: Option<&Path>,
    experiment: Experiment,
    out: &Path,
    svg_plots: bool,
) -> Result<()> {
    let pred = maps::read_maps(pred_dir)?;
    let reference = maps::read_maps(ref_dir)?;
    let mask = evaluation_mask(cfg, &pred, &reference, mask_cube)?;
    mkdir(out)?;
    match experiment {
        Experiment::Compare => {
            let mut reports = Vec::new();
            for (name, p, r) in [("mwf", &pred.mwf, &reference.mwf), ("gmt2", &pred.gmt2, &reference.gmt2)] {
                let m = finite_mask(p, r, &mask);
                let (ps, rs) = (selected(p, &m), selected(r, &m));
                if ps.is_empty() {
                    return Err(Error::DegenerateInput(format!("no finite {name} voxels in the mask")).into());
                }
                let all = vec![true; ps.len()];
                let report = compare(&ps, &rs, &all, name)?;
                if svg_plots {
                    let ba = bland_altman(&ps, &rs, &all)?;
                    fs::write(out.join(format!("{name}_scatter.svg")), svg::scatter(name, &rs, &ps))
                        .map_err(Error::from)?;
                    fs::write(out.join(format!("{name}_bland_altman.svg")), svg::bland_altman(name, &rs, &ps, &ba))
                        .map_err(Error::from)?;
                }
                reports.push(report);
            }
            let file = fs::File::create(out.join("report.csv")).map_err(Error::from)?;
            write_reports_csv(&reports, file)?;
        }
        Experiment::ThresholdSweep => {
            let pd = maps::read_distributions(pred_dir)?;
            let rd = maps::read_distributions(ref_dir)?;
            if pd.dim() != rd.dim() || pd.dim().3 != cfg.fit.grid.len() {
                return Err(Error::DimensionMismatch("distribution files disagree with each other or the grid".into()).into());
            }
            let mut rows = Vec::new();
            for &t in &cfg.eval.thresholds_ms {
                let windows = MetricWindows::with_myelin_cutoff(t)?;
                let p = mwf_map(&pd, &mask, &cfg.fit.grid, &windows);
                let r = mwf_map(&rd, &mask, &cfg.fit.grid, &windows);
                let s = summarize_nrmse(&[(p, r, mask.clone())])?;
                rows.push(ThresholdRow {
                    threshold_ms: t,
                    nrmse_mean_percent: s.mean_percent,
                    nrmse_sd_percent: s.sd_percent,
                    nrmse_pooled_percent: s.pooled_percent,
                    n_voxels: s.n_voxels,
                });
            }
            let file = fs::File::create(out.join("threshold_sweep.csv")).map_err(Error::from)?;
            write_reports_csv(&rows, file)?;
        }
    }
    cfg.write_resolved(out)
}

fn mwf_map(d: &ndarray::Array4<f64>, mask: &Array3<bool>, grid: &T2Grid, windows: &MetricWindows) -> Array3<f64> {
    Array3::from_shape_fn(mask.dim(), |(x, y, z)| {
        if !mask[(x, y, z)] {
            return f64::NAN;
        }
        let amps = d.slice(s![x, y, z, ..]).to_vec();
        mwf_from_amplitudes(grid, &amps, windows).unwrap_or(f64::NAN)
    })
}

pub fn bench(cfg: &RunConfig, cube: &Path, model: &Path, workers: &[usize], out: &Path) -> Result<()> {
    let cube = read_cube(cube)?;
    let model = load_model(model)?;
    let workers = if workers.is_empty() { vec![cfg.workers] } else { workers.to_vec() };
    let reports = eval::benchmark(
        &cube,
        &fit_config_for(&cfg.fit, &cube),
        &model,
        &workers,
        cfg.eval.bench_repetitions,
    )?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        mkdir(dir)?;
    }
    write_json(out, &reports)
}

pub fn config_init(out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&RunConfig::default()).map_err(Error::from)? + "\n";
    match out {
        Some(p) => fs::write(p, text).map_err(Error::from)?,
        None => print!("{text}"),
    }
    Ok(())
}
