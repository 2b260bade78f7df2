//! Parameter-map files: `maps.csv` (one row per voxel, x-major order) and
//! an optional `distributions.json` + `distributions.f64` pair holding
//! `[nx, ny, nz, n_basis]` little-endian doubles.

use std::fs;
use std::path::Path;

use mwnet_core::error::{Error, Result};
use mwnet_core::fit::VolumeFit;
use mwnet_core::nn::VolumeInference;
use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

pub const MAPS_FILE: &str = "maps.csv";
pub const DIST_HEADER: &str = "distributions.json";
pub const DIST_PAYLOAD: &str = "distributions.f64";

/// Status strings that carry no usable estimate.
const UNUSABLE: [&str; 3] = ["masked", "failed", "skipped"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRow {
    pub voxel: usize,
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub status: String,
    pub mwf: f64,
    pub gmt2_ms: f64,
    pub flip_angle_deg: Option<f64>,
    pub chi2: Option<f64>,
    pub chi2_min: Option<f64>,
    pub mu: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Maps {
    pub mwf: Array3<f64>,
    pub gmt2: Array3<f64>,
    pub usable: Array3<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DistHeader {
    dims: [usize; 3],
    n_basis: usize,
    dtype: String,
}

pub fn fit_rows(fit: &VolumeFit) -> Vec<MapRow> {
    fit.mwf
        .indexed_iter()
        .enumerate()
        .map(|(voxel, ((x, y, z), &mwf))| MapRow {
            voxel,
            x,
            y,
            z,
            status: fit.status[(x, y, z)].as_str().into(),
            mwf,
            gmt2_ms: fit.gmt2[(x, y, z)],
            flip_angle_deg: Some(fit.flip_angle[(x, y, z)]),
            chi2: Some(fit.chi2[(x, y, z)]),
            chi2_min: Some(fit.chi2_min[(x, y, z)]),
            mu: Some(fit.mu[(x, y, z)]),
        })
        .collect()
}

pub fn inference_rows(inf: &VolumeInference, cube_mask: &Array3<bool>) -> Vec<MapRow> {
    inf.mwf
        .indexed_iter()
        .enumerate()
        .map(|(voxel, ((x, y, z), &mwf))| {
            let status = if inf.valid[(x, y, z)] {
                "ok"
            } else if cube_mask[(x, y, z)] {
                "skipped"
            } else {
                "masked"
            };
            MapRow {
                voxel,
                x,
                y,
                z,
                status: status.into(),
                mwf,
                gmt2_ms: inf.gmt2[(x, y, z)],
                flip_angle_deg: None,
                chi2: None,
                chi2_min: None,
                mu: None,
            }
        })
        .collect()
}

pub fn write_maps(dir: &Path, rows: &[MapRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(MAPS_FILE))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `dir/maps.csv`; dimensions are inferred from the largest indices.
pub fn read_maps(dir: &Path) -> Result<Maps> {
    let path = dir.join(MAPS_FILE);
    if !path.exists() {
        return Err(Error::MissingInput(path));
    }
    let mut rows = Vec::new();
    for r in csv::Reader::from_path(&path)?.deserialize() {
        let r: MapRow = r.map_err(|e| Error::CorruptHeader(format!("{}: {e}", path.display())))?;
        rows.push(r);
    }
    if rows.is_empty() {
        return Err(Error::DegenerateInput(format!("{} has no voxels", path.display())));
    }
    let dims = (
        rows.iter().map(|r| r.x).max().unwrap_or(0) + 1,
        rows.iter().map(|r| r.y).max().unwrap_or(0) + 1,
        rows.iter().map(|r| r.z).max().unwrap_or(0) + 1,
    );
    if rows.len() != dims.0 * dims.1 * dims.2 {
        return Err(Error::DimensionMismatch(format!(
            "{} has {} rows for a {dims:?} volume",
            path.display(),
            rows.len()
        )));
    }
    let mut mwf = Array3::from_elem(dims, f64::NAN);
    let mut gmt2 = Array3::from_elem(dims, f64::NAN);
    let mut usable = Array3::from_elem(dims, false);
    for r in rows {
        let i = (r.x, r.y, r.z);
        mwf[i] = r.mwf;
        gmt2[i] = r.gmt2_ms;
        usable[i] = !UNUSABLE.contains(&r.status.as_str());
    }
    Ok(Maps { mwf, gmt2, usable })
}

pub fn write_distributions(dir: &Path, d: &Array4<f64>) -> Result<()> {
    let (nx, ny, nz, nb) = d.dim();
    let header = DistHeader {
        dims: [nx, ny, nz],
        n_basis: nb,
        dtype: "f64le".into(),
    };
    let mut bytes = Vec::with_capacity(d.len() * 8);
    for v in d.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join(DIST_PAYLOAD), bytes)?;
    fs::write(dir.join(DIST_HEADER), serde_json::to_string_pretty(&header)? + "\n")?;
    Ok(())
}

pub fn read_distributions(dir: &Path) -> Result<Array4<f64>> {
    let hp = dir.join(DIST_HEADER);
    let pp = dir.join(DIST_PAYLOAD);
    for p in [&hp, &pp] {
        if !p.exists() {
            return Err(Error::MissingInput(p.clone()));
        }
    }
    let header: DistHeader = serde_json::from_str(&fs::read_to_string(&hp)?)
        .map_err(|e| Error::CorruptHeader(format!("{}: {e}", hp.display())))?;
    if header.dtype != "f64le" {
        return Err(Error::CorruptHeader(format!("unsupported dtype {}", header.dtype)));
    }
    let [nx, ny, nz] = header.dims;
    let expected = nx * ny * nz * header.n_basis * 8;
    let raw = fs::read(&pp)?;
    if raw.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: raw.len(),
        });
    }
    if raw.len() > expected {
        return Err(Error::DimensionMismatch(format!("{} bytes, header implies {expected}", raw.len())));
    }
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Array4::from_shape_vec((nx, ny, nz, header.n_basis), values).map_err(|e| Error::DimensionMismatch(e.to_string()))
}
