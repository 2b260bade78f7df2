//! Two-sided Wilcoxon signed-rank test: exact null distribution for small
//! samples, tie-corrected normal approximation otherwise.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest sample (after dropping zero differences) that uses the exact null.
pub const EXACT_MAX_N: usize = 12;
pub const MIN_N: usize = 5;

/// Nonzero differences `a − b`, their average ranks doubled (so ties stay
/// integral), and twice the positive rank sum.
fn signed_ranks(a: &[f64], b: &[f64]) -> Result<(Vec<u64>, u64, Vec<usize>)> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("paired samples of {} and {}", a.len(), b.len())));
    }
    let mut d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|&v| v != 0.0).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite paired difference".into()));
    }
    d.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    let n = d.len();
    let mut ranks2 = vec![0u64; n];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && d[j + 1].abs() == d[i].abs() {
            j += 1;
        }
        // Average of ranks i+1..=j+1, doubled.
        let r2 = (i + 1 + j + 1) as u64;
        ranks2[i..=j].fill(r2);
        if j > i {
            ties.push(j - i + 1);
        }
        i = j + 1;
    }
    let w2 = d.iter().zip(&ranks2).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    Ok((ranks2, w2, ties))
}

/// Two-sided p-value for paired samples. Zero differences are dropped; if all
/// differences are zero, `p = 1`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<f64> {
    let (ranks2, w2, ties) = signed_ranks(a, b)?;
    let n = ranks2.len();
    if n == 0 {
        return Ok(1.0);
    }
    if n < MIN_N {
        return Err(Error::param(format!("{n} nonzero differences; need at least {MIN_N}")));
    }
    if n <= EXACT_MAX_N {
        Ok(exact_p(&ranks2, w2))
    } else {
        Ok(normal_p(n, w2, &ties))
    }
}

/// Number of sign assignments with each doubled positive rank sum.
fn null_counts(ranks2: &[u64]) -> Vec<u64> {
    let total: u64 = ranks2.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in ranks2 {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

fn exact_p(ranks2: &[u64], w2: u64) -> f64 {
    let counts = null_counts(ranks2);
    let lower: u64 = counts[..=w2 as usize].iter().sum();
    let upper: u64 = counts[w2 as usize..].iter().sum();
    let tail = lower.min(upper);
    let total = 1u64 << ranks2.len();
    (2.0 * tail as f64 / total as f64).min(1.0)
}

fn normal_p(n: usize, w2: u64, ties: &[usize]) -> f64 {
    let nf = n as f64;
    let w = w2 as f64 / 2.0;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    (2.0 * (1.0 - std_normal.cdf(z))).min(1.0)
}

/// Two-sided p by enumerating all 2ⁿ sign assignments (the reference the
/// exact path must reproduce).
pub fn enumeration_p(a: &[f64], b: &[f64]) -> Result<f64> {
    let (ranks2, w2, _) = signed_ranks(a, b)?;
    let n = ranks2.len();
    if n == 0 {
        return Ok(1.0);
    }
    if n > 24 {
        return Err(Error::param("enumeration limited to 24 differences"));
    }
    let (mut lo, mut hi) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let mut s = 0u64;
        let mut m = mask;
        while m != 0 {
            s += ranks2[m.trailing_zeros() as usize];
            m &= m - 1;
        }
        lo += (s <= w2) as u64;
        hi += (s >= w2) as u64;
    }
    Ok((2.0 * lo.min(hi) as f64 / (1u64 << n) as f64).min(1.0))
}
