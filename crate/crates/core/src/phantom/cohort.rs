//! Synthetic subjects: class maps and flip-angle maps drawn from smooth
//! random fields, two-pool voxel truths, forward simulation and noise.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use ndarray::{Array2, Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cube::EchoCube;
use super::noise::{add_noise_in_place, NoiseModel};
use super::split::SubjectKind;
use super::truth::{make_voxel_truth, TissueClass, VoxelTruth, FLIP_RANGE_DEG};
use crate::epg::{EpgParams, EpgSimulator, DEFAULT_N_ECHOES, DEFAULT_T1_MS};
use crate::error::{Error, Result};
use crate::relaxometry::{MetricWindows, T2Grid};

/// Flip-angle maps are quantized to this step (degrees) so bases can be shared.
pub const FLIP_QUANTUM_DEG: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMix {
    pub healthy_wm: f64,
    pub gm_like: f64,
    pub lesion: f64,
}

impl ClassMix {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.healthy_wm, self.gm_like, self.lesion];
        if parts.iter().any(|p| !(*p >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("class proportions must be >= 0 and sum to 1: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub subjects: usize,
    /// Volume dimensions per subject; voxels per subject is their product.
    pub dims: [usize; 3],
    /// Proportion of subjects that are patients (carry lesions).
    pub patient_fraction: f64,
    pub control_mix: ClassMix,
    pub patient_mix: ClassMix,
    pub flip_range_deg: (f64, f64),
    /// Correlation length of the smooth class and flip fields, in voxels.
    pub smoothness: f64,
    pub noise_sd: f64,
    pub noise_model: NoiseModel,
    pub te1: f64,
    pub t1: f64,
    pub n_echoes: usize,
    pub grid: T2Grid,
    pub windows: MetricWindows,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            subjects: 10,
            dims: [50, 50, 5],
            patient_fraction: 0.5,
            control_mix: ClassMix {
                healthy_wm: 0.8,
                gm_like: 0.2,
                lesion: 0.0,
            },
            patient_mix: ClassMix {
                healthy_wm: 0.6,
                gm_like: 0.2,
                lesion: 0.2,
            },
            flip_range_deg: FLIP_RANGE_DEG,
            smoothness: 4.0,
            noise_sd: 5.0,
            noise_model: NoiseModel::Rician,
            te1: 10.0,
            t1: DEFAULT_T1_MS,
            n_echoes: DEFAULT_N_ECHOES,
            grid: T2Grid::default(),
            windows: MetricWindows::default(),
            seed: 0,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 || self.dims.contains(&0) {
            return Err(Error::param("cohort needs at least one subject and non-empty dims"));
        }
        if !(0.0..=1.0).contains(&self.patient_fraction) {
            return Err(Error::param("patient_fraction must be in [0, 1]"));
        }
        self.control_mix.validate()?;
        self.patient_mix.validate()?;
        let (lo, hi) = self.flip_range_deg;
        if !(lo > 0.0 && lo <= hi && hi <= 180.0) {
            return Err(Error::param(format!("flip range ({lo}, {hi}) must lie within (0, 180]")));
        }
        if !(self.smoothness > 0.0) {
            return Err(Error::param("smoothness must be positive"));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::param("noise_sd must be non-negative"));
        }
        self.windows.validate()?;
        self.epg_params(180.0).validate()
    }

    pub fn voxels_per_subject(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn epg_params(&self, flip_angle: f64) -> EpgParams {
        EpgParams {
            flip_angle,
            t1: self.t1,
            n_echoes: self.n_echoes,
            ..EpgParams::default()
        }
        .with_timing(self.te1)
    }

    /// Subjects are interleaved so any prefix keeps the control/patient ratio.
    pub fn subject_kind(&self, subject: usize) -> SubjectKind {
        let patients_before = |i: usize| (i as f64 * self.patient_fraction + 1e-9).floor() as usize;
        if patients_before(subject + 1) > patients_before(subject) {
            SubjectKind::Patient
        } else {
            SubjectKind::Control
        }
    }
}

#[derive(Debug, Clone)]
pub struct Subject {
    pub kind: SubjectKind,
    pub cube: EchoCube,
}

/// Stateless 64-bit mixer (SplitMix64 finalizer) for deriving sub-seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_CLASS: u64 = 1;
const STREAM_FLIP: u64 = 2;
const STREAM_TRUTH: u64 = 3;
const STREAM_NOISE: u64 = 4;

pub fn make_cohort(config: &CohortConfig) -> Result<Vec<Subject>> {
    config.validate()?;
    (0..config.subjects)
        .into_par_iter()
        .map(|s| make_subject(config, s))
        .collect()
}

pub fn make_subject(config: &CohortConfig, subject: usize) -> Result<Subject> {
    config.validate()?;
    let kind = config.subject_kind(subject);
    let mix = match kind {
        SubjectKind::Control => config.control_mix,
        SubjectKind::Patient => config.patient_mix,
    };
    let seed = derive_seed(config.seed, subject as u64);
    let dims = (config.dims[0], config.dims[1], config.dims[2]);
    let classes = class_map(dims, mix, config.smoothness, derive_seed(seed, STREAM_CLASS));
    let flips = flip_map(dims, config.flip_range_deg, config.smoothness, derive_seed(seed, STREAM_FLIP));

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_TRUTH));
    let truths = classes
        .iter()
        .zip(flips.iter())
        .map(|(&class, &flip)| {
            let mut t = make_voxel_truth(class, &config.grid, &config.windows, &mut rng)?;
            t.flip_angle = flip;
            Ok(t)
        })
        .collect::<Result<Vec<VoxelTruth>>>()?;

    let mut signals = Array4::<f32>::zeros((dims.0, dims.1, dims.2, config.n_echoes));
    let mut bases: HashMap<i64, Array2<f64>> = HashMap::new();
    {
        let mut rows = signals
            .view_mut()
            .into_shape_with_order((truths.len(), config.n_echoes))
            .expect("contiguous");
        for (v, t) in truths.iter().enumerate() {
            let key = (t.flip_angle / FLIP_QUANTUM_DEG).round() as i64;
            let basis = match bases.entry(key) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => e.insert(EpgSimulator::new(config.epg_params(t.flip_angle))?.basis(&config.grid)?),
            };
            let curve = synthesize_sparse(basis, &t.amplitudes(&config.grid, &config.windows)?);
            for (dst, c) in rows.row_mut(v).iter_mut().zip(curve) {
                *dst = c as f32;
            }
        }
    }
    let mut cube = EchoCube::new(
        config.te1,
        config.te1,
        signals,
        Array3::from_elem(dims, true),
    )?;
    cube.truth = Some(truths);
    add_noise_in_place(&mut cube, config.noise_sd, config.noise_model, derive_seed(seed, STREAM_NOISE))?;
    Ok(Subject { kind, cube })
}

/// `basis · amplitudes`, skipping zero amplitudes. Adding `0·b` is exact, so
/// the result is bit-identical to the dense product.
fn synthesize_sparse(basis: &Array2<f64>, amplitudes: &[f64]) -> Vec<f64> {
    let support: Vec<usize> = (0..amplitudes.len()).filter(|&j| amplitudes[j] != 0.0).collect();
    basis
        .rows()
        .into_iter()
        .map(|row| support.iter().map(|&j| row[j] * amplitudes[j]).fold(0.0, |acc, v| acc + v))
        .collect()
}

/// Zero-mean Gaussian white noise smoothed by a periodic separable Gaussian kernel.
fn smooth_field(dims: (usize, usize, usize), sigma: f64, seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = Array3::from_shape_simple_fn(dims, || StandardNormal.sample(&mut rng));
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-0.5 * (d as f64 / sigma).powi(2)).exp())
        .collect();
    for axis in 0..3 {
        let n = field.shape()[axis] as isize;
        if n == 1 {
            continue;
        }
        let src = field.clone();
        for (idx, v) in field.indexed_iter_mut() {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let mut at = [idx.0, idx.1, idx.2];
                at[axis] = (at[axis] as isize + k as isize - radius).rem_euclid(n) as usize;
                acc += w * src[at];
            }
            *v = acc;
        }
    }
    field
}

/// Lesions occupy the top quantile of one smooth field and GM-like tissue the
/// bottom quantile, so class proportions are exact up to rounding.
fn class_map(dims: (usize, usize, usize), mix: ClassMix, sigma: f64, seed: u64) -> Array3<TissueClass> {
    let field = smooth_field(dims, sigma, seed);
    let n = field.len();
    let mut order: Vec<usize> = (0..n).collect();
    let flat = field.as_slice().expect("standard layout");
    order.sort_by(|&a, &b| flat[a].total_cmp(&flat[b]).then(a.cmp(&b)));
    let n_gm = (mix.gm_like * n as f64).round() as usize;
    let n_lesion = ((mix.lesion * n as f64).round() as usize).min(n - n_gm);
    let mut classes = vec![TissueClass::HealthyWm; n];
    for &v in &order[..n_gm] {
        classes[v] = TissueClass::GmLike;
    }
    for &v in &order[n - n_lesion..] {
        classes[v] = TissueClass::Lesion;
    }
    Array3::from_shape_vec(dims, classes).expect("shape matches")
}

fn flip_map(dims: (usize, usize, usize), range: (f64, f64), sigma: f64, seed: u64) -> Array3<f64> {
    let field = smooth_field(dims, sigma, seed);
    let lo = field.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    field.mapv(|v| {
        let a = range.0 + (v - lo) / span * (range.1 - range.0);
        ((a / FLIP_QUANTUM_DEG).round() * FLIP_QUANTUM_DEG).clamp(range.0, range.1)
    })
}
