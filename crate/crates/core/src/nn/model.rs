use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::epg::DEFAULT_N_ECHOES;
use crate::relaxometry::DEFAULT_N_BASIS;

pub const PAPER_HIDDEN: [usize; 7] = [160, 240, 320, 360, 480, 520, 600];
pub const LEAKY_SLOPE: f64 = 0.2;

/// Floating-point element type of a network.
pub trait Real:
    LinalgScalar + Float + ScalarOperand + AddAssign + Sum + Debug + Send + Sync + 'static
{
    fn of(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    ScalarMwf,
    ScalarGmt2,
    Distribution,
}

impl HeadKind {
    pub fn output_dim(self, n_basis: usize) -> usize {
        match self {
            HeadKind::ScalarMwf | HeadKind::ScalarGmt2 => 1,
            HeadKind::Distribution => n_basis,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::ScalarMwf => "scalar_mwf",
            HeadKind::ScalarGmt2 => "scalar_gmt2",
            HeadKind::Distribution => "distribution",
        }
    }
}

/// Dense feed-forward network with leaky-rectifier hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub head: HeadKind,
    /// Input, hidden and output widths.
    pub layer_dims: Vec<usize>,
    pub leaky_slope: f64,
    /// Per layer, `[out x in]`.
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
    /// Initialization seed, kept for provenance.
    pub seed: u64,
    /// Fingerprint of the training configuration, empty if untrained.
    pub profile: String,
}

pub type MlpModel = Mlp<f32>;

impl<T: Real> Mlp<T> {
    /// Weights drawn from `N(0, 2/fan_in)`, biases zero.
    pub fn new(head: HeadKind, layer_dims: Vec<usize>, leaky_slope: f64, seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::param(format!("invalid layer widths {layer_dims:?}")));
        }
        if !(leaky_slope.is_finite()) {
            return Err(Error::param("leaky slope must be finite"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid sd");
            weights.push(Array2::from_shape_simple_fn((fan_out, fan_in), || {
                T::of(normal.sample(&mut rng))
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Mlp {
            head,
            layer_dims,
            leaky_slope,
            weights,
            biases,
            seed,
            profile: String::new(),
        })
    }

    /// 32 inputs, the [`PAPER_HIDDEN`] widths, and the head's output width.
    pub fn paper(head: HeadKind, seed: u64) -> Self {
        let mut dims = vec![DEFAULT_N_ECHOES];
        dims.extend(PAPER_HIDDEN);
        dims.push(head.output_dim(DEFAULT_N_BASIS));
        Self::new(head, dims, LEAKY_SLOPE, seed).expect("reference architecture is valid")
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("non-empty")
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Checks internal shapes against `layer_dims` and the head.
    pub fn validate(&self) -> Result<()> {
        let dims = &self.layer_dims;
        if dims.len() < 2 || self.weights.len() != dims.len() - 1 || self.biases.len() != dims.len() - 1 {
            return Err(Error::DimensionMismatch(format!("layer count does not match widths {dims:?}")));
        }
        for (l, w) in dims.windows(2).enumerate() {
            if self.weights[l].dim() != (w[1], w[0]) || self.biases[l].len() != w[1] {
                return Err(Error::DimensionMismatch(format!("layer {l} does not match widths {dims:?}")));
            }
        }
        if self.head != HeadKind::Distribution && self.output_dim() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} head needs one output, got {}",
                self.head.as_str(),
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Copies the parameters into another precision.
    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            head: self.head,
            layer_dims: self.layer_dims.clone(),
            leaky_slope: self.leaky_slope,
            weights: self.weights.iter().map(|w| w.mapv(|v| U::of(v.to_f64()))).collect(),
            biases: self.biases.iter().map(|b| b.mapv(|v| U::of(v.to_f64()))).collect(),
            seed: self.seed,
            profile: self.profile.clone(),
        }
    }

    /// Affine map of layer `l` for a `[batch x in]` input.
    pub(crate) fn affine(&self, l: usize, x: ArrayView2<'_, T>) -> Array2<T> {
        let mut z = x.dot(&self.weights[l].t());
        z += &self.biases[l].view().insert_axis(Axis(0));
        z
    }

    pub(crate) fn activate(&self, z: &mut Array2<T>) {
        let slope = T::of(self.leaky_slope);
        z.mapv_inplace(|v| if v < T::zero() { v * slope } else { v });
    }

    /// Raw network outputs (no clamping) for a `[batch x in]` input.
    pub fn forward_raw(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input has {} features, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let last = self.n_layers() - 1;
        let mut h = self.affine(0, x);
        for l in 1..=last {
            self.activate(&mut h);
            h = self.affine(l, h.view());
        }
        Ok(h)
    }

    /// Inference outputs: distribution heads are clamped at zero, scalar heads are not.
    pub fn predict(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let mut out = self.forward_raw(x)?;
        if self.head == HeadKind::Distribution {
            out.mapv_inplace(|v| v.max(T::zero()));
        }
        Ok(out)
    }

    /// Single-sample [`predict`](Self::predict).
    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.predict(x)?.into_raw_vec_and_offset().0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_architecture_shapes() {
        let m = MlpModel::paper(HeadKind::Distribution, 1);
        assert_eq!(m.layer_dims, vec![32, 160, 240, 320, 360, 480, 520, 600, 120]);
        assert_eq!(m.leaky_slope, 0.2);
        assert_eq!(MlpModel::paper(HeadKind::ScalarMwf, 1).output_dim(), 1);
        assert_eq!(MlpModel::paper(HeadKind::ScalarGmt2, 1).output_dim(), 1);
        m.validate().unwrap();
    }

    #[test]
    fn init_variance_follows_fan_in() {
        let m = Mlp::<f64>::paper(HeadKind::Distribution, 3);
        for (l, w) in m.weights.iter().enumerate() {
            let fan_in = m.layer_dims[l] as f64;
            let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
            assert!((var * fan_in / 2.0 - 1.0).abs() < 0.1, "layer {l}: {var}");
        }
        assert!(m.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_model_outputs_zero() {
        let mut m = MlpModel::paper(HeadKind::Distribution, 0);
        m.weights.iter_mut().for_each(|w| w.fill(0.0));
        let out = m.forward(&[1.0; 32]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn leaky_slope_applies_to_negative_preactivation() {
        // 1 -> 1 (hidden) -> 1, hidden pre-activation -1.
        let mut m = Mlp::<f64>::new(HeadKind::ScalarMwf, vec![1, 1, 1], 0.2, 0).unwrap();
        m.weights[0].fill(-1.0);
        m.weights[1].fill(1.0);
        assert_eq!(m.forward(&[1.0]).unwrap(), vec![-0.2]);
    }

    #[test]
    fn distribution_head_clamps_scalar_head_does_not() {
        let mut m = Mlp::<f64>::new(HeadKind::Distribution, vec![1, 2], 0.2, 0).unwrap();
        m.weights[0] = ndarray::array![[-0.3], [0.4]];
        assert_eq!(m.forward(&[1.0]).unwrap(), vec![0.0, 0.4]);
        assert_eq!(m.forward_raw(ndarray::array![[1.0]].view()).unwrap()[[0, 0]], -0.3);
        let mut s = Mlp::<f64>::new(HeadKind::ScalarGmt2, vec![1, 1], 0.2, 0).unwrap();
        s.weights[0].fill(-0.3);
        assert_eq!(s.forward(&[1.0]).unwrap(), vec![-0.3]);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let m = MlpModel::paper(HeadKind::ScalarMwf, 0);
        assert!(matches!(m.forward(&[1.0; 31]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn batch_rows_match_single_forward() {
        let m = MlpModel::paper(HeadKind::Distribution, 5);
        let x = Array2::from_shape_fn((3, 32), |(i, j)| 1.0 - 0.02 * (i + j) as f32);
        let batch = m.predict(x.view()).unwrap();
        for i in 0..3 {
            let single = m.forward(x.row(i).as_slice().unwrap()).unwrap();
            for (a, b) in single.iter().zip(batch.row(i)) {
                assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()));
            }
        }
    }
}
