//! Experiment drivers comparing the surrogate with the conventional fit.
//! Each returns rows ready for CSV output.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::metrics::{compare, finite_mask, nrmse, ComparisonReport, NrmseNorm};
use crate::error::{Error, Result};
use crate::fit::{fit_volume, FitEngine, VolumeFit};
use crate::nn::{infer_volume, mwf_from_outputs, train, Dataset, HeadKind, MlpModel, TrainConfig};
use crate::phantom::{add_noise, derive_seed, EchoCube, NoiseModel, SubjectKind, TissueClass};
use crate::relaxometry::{mwf_from_amplitudes, refine_mask, MetricWindows, T2Grid};

/// A held-out cube with its conventional fit (the reference).
#[derive(Debug, Clone)]
pub struct EvalSubject {
    pub cube: EchoCube,
    pub fit: VolumeFit,
}

impl EvalSubject {
    pub fn fit(cube: EchoCube, engine: &FitEngine, workers: usize) -> Result<Self> {
        let fit = fit_volume(&cube, engine, workers)?;
        Ok(EvalSubject { cube, fit })
    }

    /// Fitted voxels with a realistic conventional MWF (0 < MWF < 0.30).
    pub fn mask(&self) -> Result<Array3<bool>> {
        refine_mask(&self.fit.mwf, &self.fit.fitted_mask())
    }
}

/// NRMSE over several subjects: per-subject values, their mean and spread,
/// and the value pooled over all voxels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NrmseSummary {
    pub mean_percent: f64,
    pub sd_percent: f64,
    pub pooled_percent: f64,
    pub per_subject: Vec<f64>,
    pub n_voxels: usize,
}

/// `(pred, ref, mask)` per subject; the mask is narrowed to voxels finite in both maps.
pub fn summarize_nrmse(items: &[(Array3<f64>, Array3<f64>, Array3<bool>)]) -> Result<NrmseSummary> {
    if items.is_empty() {
        return Err(Error::param("no subjects to evaluate"));
    }
    let mut per_subject = Vec::new();
    let (mut pred_all, mut ref_all) = (Vec::new(), Vec::new());
    for (p, r, m) in items {
        let m = finite_mask(p, r, m);
        let (ps, rs, ms) = (flat(p), flat(r), flat_mask(&m));
        per_subject.push(nrmse(&ps, &rs, &ms, NrmseNorm::L2)?);
        for ((a, b), k) in ps.iter().zip(&rs).zip(&ms) {
            if *k {
                pred_all.push(*a);
                ref_all.push(*b);
            }
        }
    }
    let n = per_subject.len() as f64;
    let mean = per_subject.iter().sum::<f64>() / n;
    let sd = if per_subject.len() > 1 {
        (per_subject.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let all = vec![true; pred_all.len()];
    Ok(NrmseSummary {
        mean_percent: mean,
        sd_percent: sd,
        pooled_percent: nrmse(&pred_all, &ref_all, &all, NrmseNorm::L2)?,
        per_subject,
        n_voxels: pred_all.len(),
    })
}

fn flat(a: &Array3<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn flat_mask(a: &Array3<bool>) -> Vec<bool> {
    a.iter().copied().collect()
}

/// Surrogate-vs-conventional agreement for MWF and GMT2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub mwf: NrmseSummary,
    pub gmt2: NrmseSummary,
    /// Pooled over all subjects.
    pub mwf_report: ComparisonReport,
    pub gmt2_report: ComparisonReport,
}

pub fn surrogate_agreement(
    mwf_model: &MlpModel,
    gmt2_model: &MlpModel,
    subjects: &[EvalSubject],
    workers: usize,
) -> Result<Agreement> {
    let (mut mwf_items, mut gmt2_items) = (Vec::new(), Vec::new());
    for s in subjects {
        let mask = s.mask()?;
        let a = infer_volume(mwf_model, &s.cube, workers)?;
        // One distribution-head model may serve both maps.
        let g = if std::ptr::eq(gmt2_model, mwf_model) {
            None
        } else {
            Some(infer_volume(gmt2_model, &s.cube, workers)?)
        };
        let g_ref = g.as_ref().unwrap_or(&a);
        gmt2_items.push((g_ref.gmt2.clone(), s.fit.gmt2.clone(), &mask & &g_ref.valid));
        mwf_items.push((a.mwf.clone(), s.fit.mwf.clone(), &mask & &a.valid));
    }
    let pooled = |items: &[(Array3<f64>, Array3<f64>, Array3<bool>)], region: &str| {
        let (mut p, mut r) = (Vec::new(), Vec::new());
        for (a, b, m) in items {
            let m = finite_mask(a, b, m);
            for ((x, y), k) in a.iter().zip(b).zip(&m) {
                if *k {
                    p.push(*x);
                    r.push(*y);
                }
            }
        }
        let all = vec![true; p.len()];
        compare(&p, &r, &all, region)
    };
    Ok(Agreement {
        mwf_report: pooled(&mwf_items, "mwf")?,
        gmt2_report: pooled(&gmt2_items, "gmt2")?,
        mwf: summarize_nrmse(&mwf_items)?,
        gmt2: summarize_nrmse(&gmt2_items)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold_ms: f64,
    pub nrmse_mean_percent: f64,
    pub nrmse_sd_percent: f64,
    pub nrmse_pooled_percent: f64,
    pub n_voxels: usize,
}

/// MWF from distribution-head outputs and from the conventional
/// distributions, both at each myelin cutoff, compared over the default-window mask.
pub fn threshold_sweep(
    model: &MlpModel,
    subjects: &[EvalSubject],
    thresholds_ms: &[f64],
    workers: usize,
) -> Result<Vec<ThresholdRow>> {
    if model.head != HeadKind::Distribution {
        return Err(Error::param("threshold sweep needs a distribution-head model"));
    }
    if subjects.is_empty() {
        return Err(Error::param("threshold sweep needs at least one subject"));
    }
    let grid = T2Grid::default();
    let inferred = subjects
        .iter()
        .map(|s| Ok((infer_volume(model, &s.cube, workers)?, s.mask()?)))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &t in thresholds_ms {
        let windows = MetricWindows::with_myelin_cutoff(t)?;
        let mut items = Vec::new();
        for (s, (inf, mask)) in subjects.iter().zip(&inferred) {
            let ann = mwf_from_outputs(&inf.outputs, &inf.valid, &grid, &windows);
            let conv = conventional_mwf(&s.fit, &grid, &windows);
            items.push((ann, conv, mask & &inf.valid));
        }
        let sum = summarize_nrmse(&items)?;
        rows.push(ThresholdRow {
            threshold_ms: t,
            nrmse_mean_percent: sum.mean_percent,
            nrmse_sd_percent: sum.sd_percent,
            nrmse_pooled_percent: sum.pooled_percent,
            n_voxels: sum.n_voxels,
        });
    }
    Ok(rows)
}

/// Conventional MWF recomputed from stored distributions with other windows.
pub fn conventional_mwf(fit: &VolumeFit, grid: &T2Grid, windows: &MetricWindows) -> Array3<f64> {
    let mut out = Array3::from_elem(fit.mwf.raw_dim(), f64::NAN);
    let status = fit.fitted_mask();
    for ((idx, &ok), o) in status.indexed_iter().zip(out.iter_mut()) {
        if ok {
            let d = fit.distributions.slice(ndarray::s![idx.0, idx.1, idx.2, ..]);
            let amps: Vec<f64> = d.to_vec();
            *o = mwf_from_amplitudes(grid, &amps, windows).unwrap_or(f64::NAN);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeRow {
    pub te1_ms: f64,
    pub nrmse_mean_percent: f64,
    pub nrmse_sd_percent: f64,
    pub nrmse_pooled_percent: f64,
    pub n_voxels: usize,
}

/// One model applied to cohorts acquired at different echo times; each
/// cohort's reference is its conventional fit at the true timing.
pub fn te_mismatch(model: &MlpModel, cohorts: &[(f64, Vec<EvalSubject>)], workers: usize) -> Result<Vec<TeRow>> {
    if cohorts.is_empty() {
        return Err(Error::param("TE mismatch needs at least one cohort"));
    }
    let mut rows = Vec::new();
    for (te1, subjects) in cohorts {
        let mut items = Vec::new();
        for s in subjects {
            let inf = infer_volume(model, &s.cube, workers)?;
            items.push((inf.mwf, s.fit.mwf.clone(), &s.mask()? & &inf.valid));
        }
        let sum = summarize_nrmse(&items)?;
        rows.push(TeRow {
            te1_ms: *te1,
            nrmse_mean_percent: sum.mean_percent,
            nrmse_sd_percent: sum.sd_percent,
            nrmse_pooled_percent: sum.pooled_percent,
            n_voxels: sum.n_voxels,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub level: usize,
    pub noise_sd: f64,
    pub method: String,
    pub nrmse_mean_percent: f64,
    pub nrmse_sd_percent: f64,
    pub nrmse_pooled_percent: f64,
    pub n_voxels: usize,
}

/// Adds noise at `k·sd` (k = 1..=levels) to every subject and reports, per
/// method, the NRMSE of the noisy MWF map against that method's map of the
/// original cube.
#[allow(clippy::too_many_arguments)]
pub fn noise_ladder(
    model: &MlpModel,
    engine: &FitEngine,
    subjects: &[EvalSubject],
    sd: f64,
    levels: usize,
    noise_model: NoiseModel,
    seed: u64,
    workers: usize,
) -> Result<Vec<NoiseRow>> {
    if subjects.is_empty() {
        return Err(Error::param("noise ladder needs at least one subject"));
    }
    let base: Vec<_> = subjects
        .iter()
        .map(|s| Ok((infer_volume(model, &s.cube, workers)?, s.mask()?)))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for level in 1..=levels {
        let level_sd = sd * level as f64;
        let (mut conv_items, mut ann_items) = (Vec::new(), Vec::new());
        for (i, (s, (ann0, mask))) in subjects.iter().zip(&base).enumerate() {
            let noisy = add_noise(&s.cube, level_sd, noise_model, derive_seed(seed, (level * 1000 + i) as u64))?;
            let conv = fit_volume(&noisy, engine, workers)?;
            let ann = infer_volume(model, &noisy, workers)?;
            let m = mask & &ann0.valid;
            conv_items.push((conv.mwf, s.fit.mwf.clone(), m.clone()));
            ann_items.push((ann.mwf, ann0.mwf.clone(), m));
        }
        for (method, items) in [("conventional", &conv_items), ("ann", &ann_items)] {
            let sum = summarize_nrmse(items)?;
            rows.push(NoiseRow {
                level,
                noise_sd: level_sd,
                method: method.into(),
                nrmse_mean_percent: sum.mean_percent,
                nrmse_sd_percent: sum.sd_percent,
                nrmse_pooled_percent: sum.pooled_percent,
                n_voxels: sum.n_voxels,
            });
        }
    }
    Ok(rows)
}

/// Training pairs of one subject, tagged with its kind.
#[derive(Debug, Clone)]
pub struct TrainingSubject {
    pub kind: SubjectKind,
    pub data: Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionRow {
    pub composition: String,
    pub region: String,
    pub nrmse_percent: f64,
    pub n_voxels: usize,
    pub n_train_subjects: usize,
}

/// Retrains a distribution-head surrogate on control-only, patient-only and
/// mixed training subjects (equal subject counts) and reports MWF NRMSE per
/// true tissue class on the test subjects.
pub fn cohort_composition(
    train_subjects: &[TrainingSubject],
    val: &Dataset,
    test: &[EvalSubject],
    config: &TrainConfig,
    workers: usize,
) -> Result<Vec<CompositionRow>> {
    let controls: Vec<&TrainingSubject> = train_subjects.iter().filter(|s| s.kind == SubjectKind::Control).collect();
    let patients: Vec<&TrainingSubject> = train_subjects.iter().filter(|s| s.kind == SubjectKind::Patient).collect();
    let k = controls.len().min(patients.len());
    if k == 0 {
        return Err(Error::param("composition study needs control and patient training subjects"));
    }
    if test.iter().any(|s| s.cube.truth.is_none()) {
        return Err(Error::param("composition study needs test cubes with truth"));
    }
    let mixed: Vec<&TrainingSubject> = controls[..k.div_ceil(2)]
        .iter()
        .chain(&patients[..k / 2])
        .copied()
        .collect();
    let groups = [
        ("control_only", controls[..k].to_vec()),
        ("patient_only", patients[..k].to_vec()),
        ("mixed", mixed),
    ];
    let mut rows = Vec::new();
    for (name, group) in groups {
        let parts: Vec<&Dataset> = group.iter().map(|s| &s.data).collect();
        let (model, _) = train(&Dataset::concat(&parts)?, val, config, HeadKind::Distribution)?;
        let mut per_region: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
        let mut regions: Vec<Option<TissueClass>> = vec![None];
        regions.extend(TissueClass::ALL.map(Some));
        for region in &regions {
            per_region.push((region.map_or("all", |c| c.as_str()).to_string(), Vec::new(), Vec::new()));
        }
        for s in test {
            let inf = infer_volume(&model, &s.cube, workers)?;
            let mask = finite_mask(&inf.mwf, &s.fit.mwf, &(&s.mask()? & &inf.valid));
            let truth = s.cube.truth.as_ref().expect("checked above");
            for (v, ((&m, &p), &r)) in mask.iter().zip(&inf.mwf).zip(&s.fit.mwf).enumerate() {
                if !m {
                    continue;
                }
                for (slot, region) in per_region.iter_mut().zip(&regions) {
                    if region.is_none_or(|c| c == truth[v].class) {
                        slot.1.push(p);
                        slot.2.push(r);
                    }
                }
            }
        }
        for (region, p, r) in per_region {
            let all = vec![true; p.len()];
            let value = if p.is_empty() {
                f64::NAN
            } else {
                nrmse(&p, &r, &all, NrmseNorm::L2)?
            };
            rows.push(CompositionRow {
                composition: name.into(),
                region,
                nrmse_percent: value,
                n_voxels: p.len(),
                n_train_subjects: group.len(),
            });
        }
    }
    Ok(rows)
}
