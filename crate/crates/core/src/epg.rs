//! Extended phase graph model of a CPMG multi-echo train.
//!
//! The refocusing pulses rotate about the axis the excited magnetization lies
//! on, so every configuration state stays real. With `f_plus`, `f_minus` real
//! and `Z = i*z` the pulse mixes states as
//!
//! ```text
//! f+' = cos²(α/2) f+ + sin²(α/2) f- + sin(α) z
//! f-' = sin²(α/2) f+ + cos²(α/2) f- - sin(α) z
//! z'  = -½ sin(α) f+ + ½ sin(α) f- + cos(α) z
//! ```
//!
//! Longitudinal recovery toward equilibrium is not modelled; `t1` only damps
//! the `z` states.

use std::ops::Deref;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relaxometry::{T2Distribution, T2Grid};

pub const DEFAULT_N_ECHOES: usize = 32;
pub const DEFAULT_ECHO_SPACING_MS: f64 = 10.0;
pub const DEFAULT_T1_MS: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpgParams {
    /// Refocusing flip angle in degrees, `0 < flip_angle <= 180`.
    pub flip_angle: f64,
    /// Longitudinal relaxation time in ms; `f64::INFINITY` disables T1 decay.
    pub t1: f64,
    pub te1: f64,
    pub echo_spacing: f64,
    pub n_echoes: usize,
}

impl Default for EpgParams {
    fn default() -> Self {
        EpgParams {
            flip_angle: 180.0,
            t1: DEFAULT_T1_MS,
            te1: DEFAULT_ECHO_SPACING_MS,
            echo_spacing: DEFAULT_ECHO_SPACING_MS,
            n_echoes: DEFAULT_N_ECHOES,
        }
    }
}

impl EpgParams {
    pub fn with_flip_angle(self, flip_angle: f64) -> Self {
        EpgParams { flip_angle, ..self }
    }

    /// Uniform CPMG timing: first echo and echo spacing both set to `te_ms`.
    pub fn with_timing(self, te_ms: f64) -> Self {
        EpgParams {
            te1: te_ms,
            echo_spacing: te_ms,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.flip_angle > 0.0 && self.flip_angle <= 180.0) {
            return Err(Error::param(format!(
                "flip angle must be in (0, 180], got {}",
                self.flip_angle
            )));
        }
        if !(self.t1 > 0.0) {
            return Err(Error::param(format!("T1 must be positive, got {}", self.t1)));
        }
        if !(self.echo_spacing > 0.0 && self.echo_spacing.is_finite()) {
            return Err(Error::param(format!(
                "echo spacing must be positive, got {}",
                self.echo_spacing
            )));
        }
        if self.te1 != self.echo_spacing {
            return Err(Error::param(format!(
                "first echo time ({}) must equal echo spacing ({})",
                self.te1, self.echo_spacing
            )));
        }
        if self.n_echoes == 0 {
            return Err(Error::param("n_echoes must be >= 1"));
        }
        Ok(())
    }
}

/// One voxel's multi-echo magnitude signal.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurve(pub Vec<f64>);

impl Deref for DecayCurve {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for DecayCurve {
    fn from(v: Vec<f64>) -> Self {
        DecayCurve(v)
    }
}

/// Configuration-state vectors, truncated at order `n_echoes + 1`.
#[derive(Debug, Clone)]
pub struct EpgState {
    f_plus: Vec<f64>,
    f_minus: Vec<f64>,
    z: Vec<f64>,
}

impl EpgState {
    fn new(n_echoes: usize) -> Self {
        let n = n_echoes + 2;
        EpgState {
            f_plus: vec![0.0; n],
            f_minus: vec![0.0; n],
            z: vec![0.0; n],
        }
    }

    fn excite(&mut self) {
        self.f_plus.fill(0.0);
        self.f_minus.fill(0.0);
        self.z.fill(0.0);
        self.f_plus[0] = 1.0;
        self.f_minus[0] = 1.0;
    }

    /// `hi` is the highest populated order; states above it are zero.
    fn relax(&mut self, e1: f64, e2: f64, hi: usize) {
        for k in 0..=hi {
            self.f_plus[k] *= e2;
            self.f_minus[k] *= e2;
            self.z[k] *= e1;
        }
    }

    fn shift(&mut self, hi: usize) {
        let top = self.f_plus.len() - 1;
        let hi = hi.min(top - 1);
        for k in (1..=hi + 1).rev() {
            self.f_plus[k] = self.f_plus[k - 1];
        }
        for k in 0..=hi {
            self.f_minus[k] = self.f_minus[k + 1];
        }
        self.f_minus[hi + 1] = 0.0;
        self.f_plus[0] = self.f_minus[0];
    }

    fn refocus(&mut self, pulse: &Refocusing, hi: usize) {
        for k in 0..=hi {
            let (fp, fm, z) = (self.f_plus[k], self.f_minus[k], self.z[k]);
            self.f_plus[k] = pulse.cos2 * fp + pulse.sin2 * fm + pulse.sin * z;
            self.f_minus[k] = pulse.sin2 * fp + pulse.cos2 * fm - pulse.sin * z;
            self.z[k] = pulse.half_sin * (fm - fp) + pulse.cos * z;
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Refocusing {
    cos2: f64,
    sin2: f64,
    sin: f64,
    half_sin: f64,
    cos: f64,
}

impl Refocusing {
    fn new(flip_deg: f64) -> Self {
        let a = flip_deg.to_radians();
        let half = a / 2.0;
        // Exact values at 180 degrees keep the ideal-refocusing case analytic.
        if flip_deg == 180.0 {
            return Refocusing {
                cos2: 0.0,
                sin2: 1.0,
                sin: 0.0,
                half_sin: 0.0,
                cos: -1.0,
            };
        }
        Refocusing {
            cos2: half.cos().powi(2),
            sin2: half.sin().powi(2),
            sin: a.sin(),
            half_sin: 0.5 * a.sin(),
            cos: a.cos(),
        }
    }
}

/// Reusable simulator for a fixed set of sequence parameters.
#[derive(Debug, Clone)]
pub struct EpgSimulator {
    params: EpgParams,
    pulse: Refocusing,
    e1_half: f64,
    state: EpgState,
}

impl EpgSimulator {
    pub fn new(params: EpgParams) -> Result<Self> {
        params.validate()?;
        let half = params.echo_spacing / 2.0;
        Ok(EpgSimulator {
            pulse: Refocusing::new(params.flip_angle),
            e1_half: (-half / params.t1).exp(),
            state: EpgState::new(params.n_echoes),
            params,
        })
    }

    pub fn params(&self) -> &EpgParams {
        &self.params
    }

    /// Writes the `n_echoes` echo amplitudes for a single T2 into `out`.
    pub fn decay_into(&mut self, t2: f64, out: &mut [f64]) -> Result<()> {
        if !(t2 > 0.0) {
            return Err(Error::param(format!("T2 must be positive, got {t2}")));
        }
        if out.len() != self.params.n_echoes {
            return Err(Error::DimensionMismatch(format!(
                "output buffer has {} slots for {} echoes",
                out.len(),
                self.params.n_echoes
            )));
        }
        let e2 = (-self.params.echo_spacing / 2.0 / t2).exp();
        let e1 = self.e1_half;
        let st = &mut self.state;
        st.excite();
        let mut hi = 0;
        let top = st.f_plus.len() - 1;
        let n = out.len();
        for (e, echo) in out.iter_mut().enumerate() {
            // With `r` shifts left, orders above `r` can no longer reach F0;
            // each step only updates what is still observable.
            let r = 2 * (n - e);
            let lim = hi.min(r);
            st.relax(e1, e2, lim);
            st.shift(lim);
            hi = (hi + 1).min(top);
            let lim = hi.min(r - 1);
            st.refocus(&self.pulse, lim);
            st.relax(e1, e2, lim);
            st.shift(lim);
            hi = (hi + 1).min(top);
            *echo = st.f_plus[0].abs();
        }
        Ok(())
    }

    pub fn decay(&mut self, t2: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.params.n_echoes];
        self.decay_into(t2, &mut out)?;
        Ok(out)
    }

    /// Basis matrix `[n_echoes x n_basis]`; column `j` is the decay at `grid[j]`.
    ///
    /// All T2 values are propagated together (state rows are orders, columns
    /// are T2 values). Each column sees exactly the operations of
    /// [`decay_into`](Self::decay_into), so the results are bit-identical.
    pub fn basis(&mut self, grid: &T2Grid) -> Result<Array2<f64>> {
        let n = self.params.n_echoes;
        let m = grid.len();
        let half = self.params.echo_spacing / 2.0;
        let e2: Vec<f64> = grid.points().iter().map(|&t2| (-half / t2).exp()).collect();
        let e1 = self.e1_half;
        let p = self.pulse;
        let orders = n + 2;
        let top = orders - 1;
        let mut fp = vec![0.0; orders * m];
        let mut fm = vec![0.0; orders * m];
        let mut z = vec![0.0; orders * m];
        fp[..m].fill(1.0);
        fm[..m].fill(1.0);

        let relax = |fp: &mut [f64], fm: &mut [f64], z: &mut [f64], lim: usize| {
            for k in 0..=lim {
                let row = k * m..(k + 1) * m;
                for ((a, b), e) in fp[row.clone()].iter_mut().zip(&mut fm[row.clone()]).zip(&e2) {
                    *a *= e;
                    *b *= e;
                }
                z[row].iter_mut().for_each(|v| *v *= e1);
            }
        };
        let shift = |fp: &mut [f64], fm: &mut [f64], lim: usize| {
            let lim = lim.min(top - 1);
            fp.copy_within(0..(lim + 1) * m, m);
            fm.copy_within(m..(lim + 2) * m, 0);
            fm[(lim + 1) * m..(lim + 2) * m].fill(0.0);
            let (head, _) = fp.split_at_mut(m);
            head.copy_from_slice(&fm[..m]);
        };

        let mut basis = Array2::zeros((n, m));
        let mut hi = 0;
        for e in 0..n {
            let r = 2 * (n - e);
            let lim = hi.min(r);
            relax(&mut fp, &mut fm, &mut z, lim);
            shift(&mut fp, &mut fm, lim);
            hi = (hi + 1).min(top);
            let lim = hi.min(r - 1);
            for i in 0..(lim + 1) * m {
                let (a, b, c) = (fp[i], fm[i], z[i]);
                fp[i] = p.cos2 * a + p.sin2 * b + p.sin * c;
                fm[i] = p.sin2 * a + p.cos2 * b - p.sin * c;
                z[i] = p.half_sin * (b - a) + p.cos * c;
            }
            relax(&mut fp, &mut fm, &mut z, lim);
            shift(&mut fp, &mut fm, lim);
            hi = (hi + 1).min(top);
            for (dst, v) in basis.row_mut(e).iter_mut().zip(&fp[..m]) {
                *dst = v.abs();
            }
        }
        Ok(basis)
    }
}

/// Echo amplitudes for unit initial magnetization.
pub fn epg_decay(t2: f64, params: &EpgParams) -> Result<Vec<f64>> {
    EpgSimulator::new(*params)?.decay(t2)
}

pub fn build_basis(grid: &T2Grid, params: &EpgParams) -> Result<Array2<f64>> {
    EpgSimulator::new(*params)?.basis(grid)
}

/// Forward model: `scale * basis * amplitudes`.
pub fn synthesize(dist: &T2Distribution, params: &EpgParams, scale: f64) -> Result<DecayCurve> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::param(format!("scale must be positive, got {scale}")));
    }
    let basis = build_basis(dist.grid(), params)?;
    Ok(synthesize_with_basis(&basis, dist.amplitudes(), scale))
}

pub(crate) fn synthesize_with_basis(basis: &Array2<f64>, amplitudes: &[f64], scale: f64) -> DecayCurve {
    let curve = basis
        .axis_iter(Axis(0))
        .map(|row| scale * row.iter().zip(amplitudes).map(|(b, a)| b * a).sum::<f64>())
        .collect();
    DecayCurve(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn ideal() -> EpgParams {
        EpgParams {
            t1: f64::INFINITY,
            ..EpgParams::default()
        }
    }

    #[test]
    fn ideal_refocusing_is_mono_exponential() {
        for t2 in [20.0, 80.0, 500.0] {
            let s = epg_decay(t2, &ideal()).unwrap();
            for (n, v) in s.iter().enumerate() {
                let expected = (-10.0 * (n + 1) as f64 / t2).exp();
                assert!((v - expected).abs() < 1e-10, "t2={t2} echo={n}");
            }
        }
    }

    #[test]
    fn no_relaxation_keeps_unit_echoes() {
        let s = epg_decay(f64::INFINITY, &ideal()).unwrap();
        assert!(s.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn stimulated_echo_raises_second_echo() {
        let p = EpgParams::default().with_flip_angle(120.0);
        let s = epg_decay(80.0, &p).unwrap();
        assert!(s[1] > s[0], "{} vs {}", s[1], s[0]);
    }

    #[test]
    fn first_two_echoes_without_relaxation() {
        // echo 1 = sin²(α/2), echo 2 = sin⁴(α/2) + ½·sin²α.
        for alpha in [100.0f64, 120.0, 150.0, 170.0] {
            let p = EpgParams {
                t1: f64::INFINITY,
                ..EpgParams::default().with_flip_angle(alpha)
            };
            let s = epg_decay(f64::INFINITY, &p).unwrap();
            let a = alpha.to_radians();
            let h = (a / 2.0).sin().powi(2);
            assert!((s[0] - h).abs() < 1e-12, "{alpha}");
            assert!((s[1] - (h * h + 0.5 * a.sin().powi(2))).abs() < 1e-12, "{alpha}");
        }
    }

    #[test]
    fn amplitudes_continuous_in_flip_angle() {
        let a = epg_decay(60.0, &EpgParams::default().with_flip_angle(180.0)).unwrap();
        let b = epg_decay(60.0, &EpgParams::default().with_flip_angle(180.0 - 1e-7)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(epg_decay(0.0, &ideal()).is_err());
        assert!(epg_decay(-5.0, &ideal()).is_err());
        assert!(epg_decay(f64::NAN, &ideal()).is_err());
        assert!(epg_decay(50.0, &ideal().with_flip_angle(0.0)).is_err());
        assert!(epg_decay(50.0, &ideal().with_flip_angle(181.0)).is_err());
        let mismatched = EpgParams {
            te1: 10.1,
            ..ideal()
        };
        assert!(epg_decay(50.0, &mismatched).is_err());
        assert!(epg_decay(50.0, &EpgParams { n_echoes: 0, ..ideal() }).is_err());
    }

    #[test]
    fn basis_shape_and_columns() {
        let grid = T2Grid::default();
        let p = EpgParams::default().with_flip_angle(155.0);
        let basis = build_basis(&grid, &p).unwrap();
        assert_eq!(basis.dim(), (32, 120));
        for j in [0, 37, 119] {
            let col = epg_decay(grid.points()[j], &p).unwrap();
            assert_eq!(basis.column(j).to_vec(), col);
        }
        assert!(basis.iter().all(|&v| v > 0.0 && v <= 1.0));

        let ideal_basis = build_basis(&grid, &ideal()).unwrap();
        for ((n, j), v) in ideal_basis.indexed_iter() {
            let expected = (-10.0 * (n + 1) as f64 / grid.points()[j]).exp();
            assert!((v - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn synthesize_delta_and_zero() {
        let grid = Arc::new(T2Grid::default());
        let p = EpgParams::default().with_flip_angle(165.0);
        let basis = build_basis(&grid, &p).unwrap();
        let zero = synthesize(&T2Distribution::zeros(grid.clone()), &p, 3.0).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let delta = T2Distribution::delta(grid, 50, 1.0).unwrap();
        let curve = synthesize(&delta, &p, 1.0).unwrap();
        assert_eq!(curve.0, basis.column(50).to_vec());
        assert!(synthesize(&delta, &p, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn echoes_bounded(t2 in 1.0f64..3000.0, flip in 50.0f64..180.0, t1 in 200.0f64..5000.0) {
            let s = epg_decay(t2, &EpgParams::default().with_flip_angle(flip).with_timing(10.0)).unwrap();
            let s_t1 = epg_decay(t2, &EpgParams { t1, ..EpgParams::default().with_flip_angle(flip) }).unwrap();
            for v in s.iter().chain(&s_t1) {
                prop_assert!(*v > 0.0 && *v <= 1.0);
            }
        }

        #[test]
        fn ideal_decay_strictly_decreasing(t2 in 1.0f64..1e5) {
            let s = epg_decay(t2, &ideal()).unwrap();
            for w in s.windows(2) {
                prop_assert!(w[1] < w[0]);
            }
        }

        #[test]
        fn synthesize_is_linear(
            a in prop::collection::vec(0.0f64..1.0, 120),
            b in prop::collection::vec(0.0f64..1.0, 120),
            c in 0.1f64..10.0,
        ) {
            let grid = Arc::new(T2Grid::default());
            let p = EpgParams::default().with_flip_angle(140.0);
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let da = T2Distribution::new(grid.clone(), a).unwrap();
            let db = T2Distribution::new(grid.clone(), b).unwrap();
            let dsum = T2Distribution::new(grid, sum).unwrap();
            let ya = synthesize(&da, &p, c).unwrap();
            let yb = synthesize(&db, &p, c).unwrap();
            let ys = synthesize(&dsum, &p, c).unwrap();
            let y2 = synthesize(&da, &p, 2.0 * c).unwrap();
            for n in 0..32 {
                prop_assert!((ys[n] - ya[n] - yb[n]).abs() <= 1e-12 * ys[n].abs().max(1.0));
                prop_assert!((y2[n] - 2.0 * ya[n]).abs() <= 1e-12 * y2[n].abs().max(1.0));
            }
        }
    }
}
