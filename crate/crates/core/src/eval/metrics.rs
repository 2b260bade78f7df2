use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::wilcoxon::wilcoxon_signed_rank;
use crate::error::{Error, Result};

/// Denominator of the normalized RMSE.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NrmseNorm {
    /// `‖pred − ref‖₂ / ‖ref‖₂`.
    #[default]
    L2,
    /// `rms(pred − ref) / mean(ref)`.
    Mean,
}

/// Masked `(pred, ref)` pairs; both values must be finite inside the mask.
pub fn masked_pairs(pred: &[f64], reference: &[f64], mask: &[bool]) -> Result<Vec<(f64, f64)>> {
    if pred.len() != reference.len() || pred.len() != mask.len() {
        return Err(Error::DimensionMismatch(format!(
            "pred {}, ref {}, mask {}",
            pred.len(),
            reference.len(),
            mask.len()
        )));
    }
    let mut pairs = Vec::new();
    for ((&p, &r), &m) in pred.iter().zip(reference).zip(mask) {
        if m {
            if !(p.is_finite() && r.is_finite()) {
                return Err(Error::DegenerateInput("non-finite value inside the mask".into()));
            }
            pairs.push((p, r));
        }
    }
    Ok(pairs)
}

/// Mask selecting voxels where `mask` holds and both maps are finite.
pub fn finite_mask(a: &Array3<f64>, b: &Array3<f64>, mask: &Array3<bool>) -> Array3<bool> {
    ndarray::Zip::from(a)
        .and(b)
        .and(mask)
        .map_collect(|x, y, &m| m && x.is_finite() && y.is_finite())
}

/// Normalized RMSE in percent over the masked voxels.
pub fn nrmse(pred: &[f64], reference: &[f64], mask: &[bool], norm: NrmseNorm) -> Result<f64> {
    let pairs = masked_pairs(pred, reference, mask)?;
    if pairs.is_empty() {
        return Err(Error::param("NRMSE over an empty mask"));
    }
    let err2: f64 = pairs.iter().map(|(p, r)| (p - r) * (p - r)).sum();
    let n = pairs.len() as f64;
    let value = match norm {
        NrmseNorm::L2 => {
            let ref2: f64 = pairs.iter().map(|(_, r)| r * r).sum();
            if ref2 == 0.0 {
                return Err(Error::param("reference is zero over the mask"));
            }
            (err2 / ref2).sqrt()
        }
        NrmseNorm::Mean => {
            let mean = pairs.iter().map(|(_, r)| r).sum::<f64>() / n;
            if mean == 0.0 {
                return Err(Error::param("reference mean is zero over the mask"));
            }
            (err2 / n).sqrt() / mean.abs()
        }
    };
    Ok(100.0 * value)
}

/// Squared Pearson correlation over the masked voxels.
pub fn r_squared(pred: &[f64], reference: &[f64], mask: &[bool]) -> Result<f64> {
    let pairs = masked_pairs(pred, reference, mask)?;
    if pairs.len() < 3 {
        return Err(Error::param(format!("R² needs at least 3 voxels, got {}", pairs.len())));
    }
    let n = pairs.len() as f64;
    let mp = pairs.iter().map(|(p, _)| p).sum::<f64>() / n;
    let mr = pairs.iter().map(|(_, r)| r).sum::<f64>() / n;
    let (mut spp, mut srr, mut spr) = (0.0, 0.0, 0.0);
    for (p, r) in &pairs {
        let (dp, dr) = (p - mp, r - mr);
        spp += dp * dp;
        srr += dr * dr;
        spr += dp * dr;
    }
    if spp == 0.0 || srr == 0.0 {
        return Err(Error::param("R² undefined for zero variance"));
    }
    Ok((spr * spr / (spp * srr)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub mean_difference: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Mean of `pred − ref` with ±1.96·σ limits (population σ).
pub fn bland_altman(pred: &[f64], reference: &[f64], mask: &[bool]) -> Result<BlandAltman> {
    let pairs = masked_pairs(pred, reference, mask)?;
    if pairs.len() < 2 {
        return Err(Error::param("Bland-Altman needs at least 2 voxels"));
    }
    let n = pairs.len() as f64;
    let mean = pairs.iter().map(|(p, r)| p - r).sum::<f64>() / n;
    let var = pairs.iter().map(|(p, r)| (p - r - mean).powi(2)).sum::<f64>() / n;
    let half = 1.96 * var.sqrt();
    Ok(BlandAltman {
        mean_difference: mean,
        lower: mean - half,
        upper: mean + half,
    })
}

/// One row of an agreement table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub region: String,
    pub n_voxels: usize,
    pub nrmse_percent: f64,
    pub r_squared: f64,
    pub mean_difference: f64,
    pub loa_lower: f64,
    pub loa_upper: f64,
    pub wilcoxon_p: f64,
}

/// Full agreement report of `pred` against `reference` over `mask`.
///
/// R² is `NaN` when either side has zero variance (e.g. identical constant maps).
pub fn compare(pred: &[f64], reference: &[f64], mask: &[bool], region: &str) -> Result<ComparisonReport> {
    let pairs = masked_pairs(pred, reference, mask)?;
    let ba = bland_altman(pred, reference, mask)?;
    let r2 = match r_squared(pred, reference, mask) {
        Ok(v) => v,
        Err(Error::Parameter(_)) => f64::NAN,
        Err(e) => return Err(e),
    };
    let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let p = wilcoxon_signed_rank(&a, &b).unwrap_or(f64::NAN);
    Ok(ComparisonReport {
        region: region.to_string(),
        n_voxels: a.len(),
        nrmse_percent: nrmse(pred, reference, mask, NrmseNorm::L2)?,
        r_squared: r2,
        mean_difference: ba.mean_difference,
        loa_lower: ba.lower,
        loa_upper: ba.upper,
        wilcoxon_p: p,
    })
}

pub fn write_reports_csv<W: std::io::Write, R: Serialize>(rows: &[R], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
