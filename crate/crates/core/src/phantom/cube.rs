//! Multi-echo volumes and the `ECUBE1` on-disk format.
//!
//! A cube is stored as a JSON manifest plus a raw little-endian `f32` payload
//! in voxel-major order with the echo index innermost. The mask, when
//! present, is one byte per voxel (0 or 1) in the same voxel order; ground
//! truth goes to a CSV with one row per voxel.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use super::truth::{TissueClass, VoxelTruth};
use crate::error::{Error, Result};

pub const CUBE_MAGIC: &str = "ECUBE1";
const DTYPE: &str = "f32le";
const ORDER: &str = "voxel_major_echo_innermost";

#[derive(Debug, Clone, PartialEq)]
pub struct EchoCube {
    pub te1: f64,
    pub echo_spacing: f64,
    /// `[nx, ny, nz, n_echoes]`.
    pub signals: Array4<f32>,
    pub mask: Array3<bool>,
    /// Per-voxel ground truth in voxel order, when the cube is synthetic.
    pub truth: Option<Vec<VoxelTruth>>,
}

impl EchoCube {
    pub fn new(te1: f64, echo_spacing: f64, signals: Array4<f32>, mask: Array3<bool>) -> Result<Self> {
        let cube = EchoCube {
            te1,
            echo_spacing,
            signals,
            mask,
            truth: None,
        };
        cube.validate()?;
        Ok(cube)
    }

    pub fn validate(&self) -> Result<()> {
        let (nx, ny, nz, ne) = self.signals.dim();
        if self.mask.dim() != (nx, ny, nz) {
            return Err(Error::DimensionMismatch(format!(
                "mask {:?} does not match volume {:?}",
                self.mask.dim(),
                (nx, ny, nz)
            )));
        }
        if ne == 0 {
            return Err(Error::param("cube has no echoes"));
        }
        if !(self.te1 > 0.0 && self.echo_spacing > 0.0) {
            return Err(Error::param("echo times must be positive"));
        }
        if self.signals.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("cube contains non-finite samples"));
        }
        if let Some(truth) = &self.truth {
            if truth.len() != nx * ny * nz {
                return Err(Error::DimensionMismatch(format!(
                    "{} truth records for {} voxels",
                    truth.len(),
                    nx * ny * nz
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.mask.dim()
    }

    pub fn n_voxels(&self) -> usize {
        self.mask.len()
    }

    pub fn n_echoes(&self) -> usize {
        self.signals.dim().3
    }

    /// `[n_voxels, n_echoes]` view over the signal array.
    pub fn voxels(&self) -> ArrayView2<'_, f32> {
        let (ne, nv) = (self.n_echoes(), self.n_voxels());
        self.signals
            .view()
            .into_shape_with_order((nv, ne))
            .expect("signals are contiguous")
    }

    pub fn voxels_mut(&mut self) -> ArrayViewMut2<'_, f32> {
        let (ne, nv) = (self.n_echoes(), self.n_voxels());
        self.signals
            .view_mut()
            .into_shape_with_order((nv, ne))
            .expect("signals are contiguous")
    }

    pub fn curve(&self, voxel: usize) -> Vec<f64> {
        self.voxels().row(voxel).iter().map(|&v| f64::from(v)).collect()
    }

    /// Flat voxel indices inside the mask, ascending.
    pub fn masked_voxels(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    pub fn scaled(&self, c: f32) -> Self {
        let mut out = self.clone();
        out.signals.mapv_inplace(|v| v * c);
        out
    }

    /// Gathers the listed voxels into an `n x 1 x 1` cube.
    pub fn subset(&self, voxels: &[usize]) -> Result<Self> {
        let ne = self.n_echoes();
        let src = self.voxels();
        let mut signals = Array4::zeros((voxels.len(), 1, 1, ne));
        for (k, &v) in voxels.iter().enumerate() {
            if v >= self.n_voxels() {
                return Err(Error::param(format!("voxel {v} out of range")));
            }
            for e in 0..ne {
                signals[[k, 0, 0, e]] = src[[v, e]];
            }
        }
        let mask = Array3::from_shape_fn((voxels.len(), 1, 1), |(k, _, _)| self.mask.as_slice().unwrap()[voxels[k]]);
        let truth = self
            .truth
            .as_ref()
            .map(|t| voxels.iter().map(|&v| t[v].clone()).collect());
        Ok(EchoCube {
            te1: self.te1,
            echo_spacing: self.echo_spacing,
            signals,
            mask,
            truth,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CubeManifest {
    pub magic: String,
    pub dims: [usize; 3],
    pub n_echoes: usize,
    pub te1_ms: f64,
    pub esp_ms: f64,
    pub dtype: String,
    pub order: String,
    pub payload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRow {
    voxel: usize,
    class: TissueClass,
    mwf: f64,
    gmt2_ms: f64,
    flip_angle_deg: f64,
}

/// File stem shared by the manifest and its side files: `dir/name.ecube.json` → `name`.
fn stem_of(manifest: &Path) -> String {
    let name = manifest
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cube".into());
    name.strip_suffix(".ecube.json")
        .or_else(|| name.strip_suffix(".json"))
        .unwrap_or(&name)
        .to_string()
}

/// Writes `manifest_path` plus `<stem>.f32`, `<stem>.mask` and, when truth is present, `<stem>.truth.csv`.
pub fn write_cube(cube: &EchoCube, manifest_path: &Path) -> Result<()> {
    cube.validate()?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(dir)?;
    }
    let stem = stem_of(manifest_path);
    let payload = format!("{stem}.f32");
    let mask_name = format!("{stem}.mask");
    let truth_name = cube.truth.as_ref().map(|_| format!("{stem}.truth.csv"));

    let mut bytes = Vec::with_capacity(cube.signals.len() * 4);
    for v in cube.signals.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join(&payload), bytes)?;
    fs::write(
        dir.join(&mask_name),
        cube.mask.iter().map(|&m| u8::from(m)).collect::<Vec<u8>>(),
    )?;
    if let (Some(truth), Some(name)) = (&cube.truth, &truth_name) {
        let mut w = csv::Writer::from_path(dir.join(name))?;
        for (voxel, t) in truth.iter().enumerate() {
            w.serialize(TruthRow {
                voxel,
                class: t.class,
                mwf: t.mwf,
                gmt2_ms: t.gmt2,
                flip_angle_deg: t.flip_angle,
            })?;
        }
        w.flush()?;
    }

    let (nx, ny, nz) = cube.dims();
    let manifest = CubeManifest {
        magic: CUBE_MAGIC.into(),
        dims: [nx, ny, nz],
        n_echoes: cube.n_echoes(),
        te1_ms: cube.te1,
        esp_ms: cube.echo_spacing,
        dtype: DTYPE.into(),
        order: ORDER.into(),
        payload,
        mask: Some(mask_name),
        truth: truth_name,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(manifest_path, text)?;
    Ok(())
}

pub fn read_cube(manifest_path: &Path) -> Result<EchoCube> {
    if !manifest_path.exists() {
        return Err(Error::MissingInput(manifest_path.to_path_buf()));
    }
    let text = fs::read_to_string(manifest_path)?;
    let manifest: CubeManifest =
        serde_json::from_str(&text).map_err(|e| Error::CorruptHeader(format!("{}: {e}", manifest_path.display())))?;
    if manifest.magic != CUBE_MAGIC {
        return Err(Error::CorruptHeader(format!("bad magic {:?}", manifest.magic)));
    }
    if manifest.dtype != DTYPE || manifest.order != ORDER {
        return Err(Error::CorruptHeader(format!(
            "unsupported layout {}/{}",
            manifest.dtype, manifest.order
        )));
    }
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let side = |name: &str| -> PathBuf { dir.join(name) };
    let [nx, ny, nz] = manifest.dims;
    let ne = manifest.n_echoes;
    let nv = nx * ny * nz;

    let payload_path = side(&manifest.payload);
    if !payload_path.exists() {
        return Err(Error::MissingInput(payload_path));
    }
    let raw = fs::read(&payload_path)?;
    let expected = nv * ne * 4;
    if raw.len() != expected {
        if raw.len() < expected {
            return Err(Error::TruncatedPayload {
                expected,
                found: raw.len(),
            });
        }
        return Err(Error::DimensionMismatch(format!(
            "payload has {} bytes, header implies {expected}",
            raw.len()
        )));
    }
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let signals = Array4::from_shape_vec((nx, ny, nz, ne), values)
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;

    let mask = match &manifest.mask {
        Some(name) => {
            let bytes = fs::read(side(name))?;
            if bytes.len() != nv {
                return Err(Error::DimensionMismatch(format!(
                    "mask has {} bytes for {nv} voxels",
                    bytes.len()
                )));
            }
            Array3::from_shape_vec((nx, ny, nz), bytes.into_iter().map(|b| b != 0).collect())
                .map_err(|e| Error::DimensionMismatch(e.to_string()))?
        }
        None => Array3::from_elem((nx, ny, nz), true),
    };

    let truth = match &manifest.truth {
        Some(name) => {
            let mut rdr = csv::Reader::from_path(side(name))?;
            let mut rows = Vec::with_capacity(nv);
            for row in rdr.deserialize::<TruthRow>() {
                let row = row?;
                rows.push(VoxelTruth {
                    class: row.class,
                    mwf: row.mwf,
                    gmt2: row.gmt2_ms,
                    flip_angle: row.flip_angle_deg,
                    scale: f64::NAN,
                    pools: Vec::new(),
                });
            }
            Some(rows)
        }
        None => None,
    };

    let cube = EchoCube {
        te1: manifest.te1_ms,
        echo_spacing: manifest.esp_ms,
        signals,
        mask,
        truth,
    };
    cube.validate()?;
    Ok(cube)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_cube() -> EchoCube {
        let signals = Array4::from_shape_fn((2, 3, 1, 4), |(x, y, _, e)| (x * 100 + y * 10 + e) as f32 + 0.25);
        let mut mask = Array3::from_elem((2, 3, 1), true);
        mask[[1, 2, 0]] = false;
        EchoCube::new(10.0, 10.0, signals, mask).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s0.ecube.json");
        let mut cube = sample_cube();
        cube.truth = Some(
            (0..6)
                .map(|i| VoxelTruth {
                    class: TissueClass::HealthyWm,
                    mwf: 0.01 * i as f64,
                    gmt2: 70.0,
                    flip_angle: 160.0,
                    scale: f64::NAN,
                    pools: vec![],
                })
                .collect(),
        );
        write_cube(&cube, &path).unwrap();
        assert!(dir.path().join("s0.f32").exists());
        let back = read_cube(&path).unwrap();
        assert_eq!(back.signals, cube.signals);
        assert_eq!(back.mask, cube.mask);
        assert_eq!(back.truth.as_ref().unwrap()[3].mwf, 0.03);
        // Voxel-major, echo-innermost layout.
        let raw = std::fs::read(dir.path().join("s0.f32")).unwrap();
        let second = f32::from_le_bytes([raw[4], raw[5], raw[6], raw[7]]);
        assert_eq!(second, cube.signals[[0, 0, 0, 1]]);
    }

    #[test]
    fn truncated_payload_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ecube.json");
        write_cube(&sample_cube(), &path).unwrap();
        let payload = dir.path().join("c.f32");
        let raw = std::fs::read(&payload).unwrap();
        std::fs::write(&payload, &raw[..raw.len() - 3]).unwrap();
        assert!(matches!(read_cube(&path), Err(Error::TruncatedPayload { .. })));
    }

    #[test]
    fn missing_and_corrupt_manifests() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_cube(&dir.path().join("nope.ecube.json")),
            Err(Error::MissingInput(_))
        ));
        let bad = dir.path().join("bad.ecube.json");
        std::fs::write(&bad, "{\"magic\": \"ECUBE9\"").unwrap();
        assert!(matches!(read_cube(&bad), Err(Error::CorruptHeader(_))));
    }

    #[test]
    fn voxel_rows_follow_layout() {
        let cube = sample_cube();
        assert_eq!(cube.n_voxels(), 6);
        assert_eq!(cube.voxels().row(4).to_vec(), vec![110.25, 111.25, 112.25, 113.25]);
        assert_eq!(cube.masked_voxels(), vec![0, 1, 2, 3, 4]);
    }
}
