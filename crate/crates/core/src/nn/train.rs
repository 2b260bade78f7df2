//! Minibatch Adam training with step-decayed learning rate, a growing batch
//! size and early stopping on validation MSE.

use std::time::Instant;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fused::{fused_step, Scratch, FUSED_MAX_BATCH};
use super::model::{HeadKind, Mlp, MlpModel, Real};
use crate::error::{Error, Result};
use crate::phantom::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Paper,
    Fast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub lr_drop_epochs: Vec<usize>,
    pub lr_drop_factor: f64,
    pub batch_start: usize,
    pub batch_cap: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub profile: Profile,
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            base_lr: 1e-3,
            lr_drop_epochs: vec![900, 1200, 1500, 1800],
            lr_drop_factor: 0.1,
            batch_start: 2,
            batch_cap: 2002,
            max_epochs: 2000,
            early_stop_patience: 50,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            profile: Profile::Paper,
        }
    }

    /// Every epoch constant of [`TrainConfig::paper`] divided by ten.
    pub fn fast() -> Self {
        TrainConfig {
            lr_drop_epochs: vec![90, 120, 150, 180],
            batch_cap: 202,
            max_epochs: 200,
            early_stop_patience: 5,
            profile: Profile::Fast,
            ..Self::paper()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self::paper(),
            Profile::Fast => Self::fast(),
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        TrainConfig { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr_drop_epochs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("learning-rate drop epochs must be strictly increasing"));
        }
        if self.batch_start == 0 || self.batch_cap < self.batch_start {
            return Err(Error::param("need 1 <= batch_start <= batch_cap"));
        }
        if self.early_stop_patience == 0 || self.max_epochs == 0 {
            return Err(Error::param("patience and max_epochs must be positive"));
        }
        if !(self.base_lr > 0.0 && self.lr_drop_factor > 0.0 && self.adam_epsilon > 0.0) {
            return Err(Error::param("learning rate, drop factor and epsilon must be positive"));
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return Err(Error::param("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Compact description stored in model headers.
    pub fn fingerprint(&self) -> String {
        let drops: Vec<String> = self.lr_drop_epochs.iter().map(|e| e.to_string()).collect();
        format!(
            "{}:lr={}x{}@{};batch={}..{};epochs={};patience={};adam={},{},{};seed={}",
            match self.profile {
                Profile::Paper => "paper",
                Profile::Fast => "fast",
            },
            self.base_lr,
            self.lr_drop_factor,
            drops.join(","),
            self.batch_start,
            self.batch_cap,
            self.max_epochs,
            self.early_stop_patience,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_epsilon,
            self.seed
        )
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

/// `base_lr · factor^(number of drop epochs ≤ epoch)`.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    let drops = config.lr_drop_epochs.iter().filter(|&&d| d <= epoch).count();
    config.base_lr * config.lr_drop_factor.powi(drops as i32)
}

pub fn batch_size_at(epoch: usize, config: &TrainConfig) -> usize {
    config.batch_start.saturating_add(epoch).min(config.batch_cap)
}

/// Inputs `[n x n_in]` and labels `[n x n_out]` in single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f32>,
    pub labels: Array2<f32>,
}

impl Dataset {
    pub fn new(inputs: Array2<f32>, labels: Array2<f32>) -> Result<Self> {
        if inputs.nrows() != labels.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs but {} labels",
                inputs.nrows(),
                labels.nrows()
            )));
        }
        Ok(Dataset { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(Axis(0), rows),
            labels: self.labels.select(Axis(0), rows),
        }
    }

    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let inputs: Vec<_> = parts.iter().map(|d| d.inputs.view()).collect();
        let labels: Vec<_> = parts.iter().map(|d| d.labels.view()).collect();
        let cat = |v: &[ArrayView2<'_, f32>]| {
            ndarray::concatenate(Axis(0), v).map_err(|e| Error::DimensionMismatch(e.to_string()))
        };
        Dataset::new(cat(&inputs)?, cat(&labels)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub batch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Wall-clock seconds; not part of the deterministic outputs.
    pub wall_seconds: f64,
}

impl TrainLog {
    /// CSV with columns `epoch,lr,batch,train_mse,val_mse`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.epochs {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Gradients with the model's layer shapes.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(model: &Mlp<T>) -> Self {
        Gradients {
            weights: model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }
}

/// Mean squared error over all outputs of the batch and its parameter gradients.
pub fn loss_and_gradients<T: Real>(
    model: &Mlp<T>,
    x: ArrayView2<'_, T>,
    y: ArrayView2<'_, T>,
    grads: &mut Gradients<T>,
) -> Result<T> {
    let n_layers = model.n_layers();
    if x.ncols() != model.input_dim() || y.ncols() != model.output_dim() || x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch("batch shape does not match the model".into()));
    }
    // Layer inputs (post-activation) and pre-activations of hidden layers.
    let mut inputs: Vec<Array2<T>> = Vec::with_capacity(n_layers);
    let mut pre: Vec<Array2<T>> = Vec::with_capacity(n_layers);
    let mut h = x.to_owned();
    for l in 0..n_layers {
        let z = model.affine(l, h.view());
        inputs.push(h);
        if l + 1 < n_layers {
            let mut a = z.clone();
            model.activate(&mut a);
            pre.push(z);
            h = a;
        } else {
            h = z;
        }
    }
    let count = T::of((y.len()) as f64);
    let mut delta = h - y;
    let loss = delta.iter().map(|&d| d * d).sum::<T>() / count;
    delta.mapv_inplace(|d| d * T::of(2.0) / count);

    let slope = T::of(model.leaky_slope);
    for l in (0..n_layers).rev() {
        general_mat_mul(T::one(), &delta.t(), &inputs[l], T::zero(), &mut grads.weights[l]);
        grads.biases[l].fill(T::zero());
        for row in delta.rows() {
            grads.biases[l] += &row;
        }
        if l > 0 {
            let mut back = delta.dot(&model.weights[l]);
            back.zip_mut_with(&pre[l - 1], |d, &z| {
                if z < T::zero() {
                    *d = *d * slope;
                }
            });
            delta = back;
        }
    }
    Ok(loss)
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub(crate) struct Adam {
    beta1: f32,
    beta2: f32,
    epsilon: f32,
    step: i32,
    m: Gradients<f32>,
    v: Gradients<f32>,
}

/// Per-step Adam coefficients.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AdamStep {
    b1: f32,
    b2: f32,
    eps: f32,
    step_size: f32,
    inv_bc2: f32,
}

impl AdamStep {
    #[inline(always)]
    pub(crate) fn apply(&self, p: &mut f32, g: f32, m: &mut f32, v: &mut f32) {
        *m = self.b1 * *m + (1.0 - self.b1) * g;
        *v = self.b2 * *v + (1.0 - self.b2) * g * g;
        *p -= self.step_size * *m / ((*v * self.inv_bc2).sqrt() + self.eps);
    }
}

impl Adam {
    pub(crate) fn new(model: &MlpModel, config: &TrainConfig) -> Self {
        Adam {
            beta1: config.adam_beta1 as f32,
            beta2: config.adam_beta2 as f32,
            epsilon: config.adam_epsilon as f32,
            step: 0,
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
        }
    }

    /// Advances the step counter and returns its coefficients.
    pub(crate) fn begin_step(&mut self, lr: f64) -> AdamStep {
        self.step += 1;
        let bc1 = 1.0 - f64::from(self.beta1).powi(self.step);
        let bc2 = 1.0 - f64::from(self.beta2).powi(self.step);
        AdamStep {
            b1: self.beta1,
            b2: self.beta2,
            eps: self.epsilon,
            step_size: (lr / bc1) as f32,
            inv_bc2: (1.0 / bc2) as f32,
        }
    }

    /// Weights of layer `l` with their first and second moments, row-major.
    pub(crate) fn layer_weights<'a>(
        &'a mut self,
        model: &'a mut MlpModel,
        l: usize,
    ) -> (&'a mut [f32], &'a mut [f32], &'a mut [f32]) {
        (
            model.weights[l].as_slice_mut().expect("standard layout"),
            self.m.weights[l].as_slice_mut().expect("standard layout"),
            self.v.weights[l].as_slice_mut().expect("standard layout"),
        )
    }

    pub(crate) fn layer_biases<'a>(
        &'a mut self,
        model: &'a mut MlpModel,
        l: usize,
    ) -> (&'a mut [f32], &'a mut [f32], &'a mut [f32]) {
        (
            model.biases[l].as_slice_mut().expect("standard layout"),
            self.m.biases[l].as_slice_mut().expect("standard layout"),
            self.v.biases[l].as_slice_mut().expect("standard layout"),
        )
    }

    pub(crate) fn update(&mut self, model: &mut MlpModel, grads: &Gradients<f32>, lr: f64) {
        let coef = self.begin_step(lr);
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was just detected.
            unsafe { update_avx512(self, model, grads, coef) };
            return;
        }
        update_with(self, model, grads, coef);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn update_avx512(adam: &mut Adam, model: &mut MlpModel, grads: &Gradients<f32>, coef: AdamStep) {
    update_with(adam, model, grads, coef);
}

/// The sweep is element-wise, so every build gives the same bits.
#[inline(always)]
fn update_with(adam: &mut Adam, model: &mut MlpModel, grads: &Gradients<f32>, coef: AdamStep) {
    let sweep = |p: &mut [f32], g: &[f32], m: &mut [f32], v: &mut [f32]| {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            coef.apply(p, g, m, v);
        }
    };
    for l in 0..model.weights.len() {
        let (p, m, v) = adam.layer_weights(model, l);
        sweep(p, grads.weights[l].as_slice().expect("standard layout"), m, v);
        let (p, m, v) = adam.layer_biases(model, l);
        sweep(p, grads.biases[l].as_slice().expect("standard layout"), m, v);
    }
}

/// Mean squared error of raw outputs over a dataset, evaluated in chunks.
pub fn dataset_mse(model: &MlpModel, data: &Dataset) -> Result<f64> {
    const CHUNK: usize = 1024;
    let mut total = 0.0f64;
    for start in (0..data.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(data.len());
        let x = data.inputs.slice(ndarray::s![start..end, ..]);
        let y = data.labels.slice(ndarray::s![start..end, ..]);
        let out = model.forward_raw(x)?;
        total += out
            .iter()
            .zip(y.iter())
            .map(|(&a, &b)| f64::from(a - b).powi(2))
            .sum::<f64>();
    }
    Ok(total / (data.len() * data.labels.ncols()) as f64)
}

/// Trains a freshly initialized [`MlpModel::paper`] network.
pub fn train(train: &Dataset, val: &Dataset, config: &TrainConfig, head: HeadKind) -> Result<(MlpModel, TrainLog)> {
    let mut dims = vec![train.inputs.ncols()];
    dims.extend(super::model::PAPER_HIDDEN);
    dims.push(train.labels.ncols());
    let model = MlpModel::new(head, dims, super::model::LEAKY_SLOPE, config.seed)?;
    train_model(model, train, val, config, |_, _| {})
}

/// Trains `model` in place of a fresh one; `on_epoch` sees each log record
/// and the current (not best) weights as they are produced.
pub fn train_model(
    mut model: MlpModel,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &MlpModel),
) -> Result<(MlpModel, TrainLog)> {
    config.validate()?;
    model.validate()?;
    if train.is_empty() {
        return Err(Error::param("training set is empty"));
    }
    if val.is_empty() {
        return Err(Error::param("validation set is empty"));
    }
    for d in [train, val] {
        if d.inputs.ncols() != model.input_dim() || d.labels.ncols() != model.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "dataset is {}->{}, model is {}->{}",
                d.inputs.ncols(),
                d.labels.ncols(),
                model.input_dim(),
                model.output_dim()
            )));
        }
    }
    model.profile = config.fingerprint();
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x5348_5546));
    let mut adam = Adam::new(&model, config);
    let mut grads = Gradients::zeros_like(&model);
    let mut scratch = Scratch::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog::default();
    let mut best = (f64::INFINITY, model.clone());
    let mut stale = 0;

    for epoch in 0..config.max_epochs {
        let lr = lr_at(epoch, config);
        let batch = batch_size_at(epoch, config).min(train.len());
        order.shuffle(&mut rng);
        let fused = batch <= FUSED_MAX_BATCH && model.leaky_slope > 0.0;
        let mut sum = 0.0f64;
        let n_batches = train.len() / batch;
        for b in 0..n_batches {
            let rows = &order[b * batch..(b + 1) * batch];
            let x = train.inputs.select(Axis(0), rows);
            let y = train.labels.select(Axis(0), rows);
            let loss = if fused {
                fused_step(&mut model, &mut adam, x.view(), y.view(), lr, &mut scratch)
                    .map_err(|e| match e {
                        Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { epoch, batch: b },
                        e => e,
                    })?
            } else {
                let loss = loss_and_gradients(&model, x.view(), y.view(), &mut grads)?;
                if !loss.is_finite() || grads.weights.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                    return Err(Error::NonFiniteLoss { epoch, batch: b });
                }
                adam.update(&mut model, &grads, lr);
                loss
            };
            sum += f64::from(loss);
        }
        let val_mse = dataset_mse(&model, val)?;
        if !val_mse.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: n_batches });
        }
        let record = EpochRecord {
            epoch,
            lr,
            batch,
            train_mse: sum / n_batches as f64,
            val_mse,
        };
        on_epoch(&record, &model);
        log.epochs.push(record);
        if val_mse < best.0 {
            best = (val_mse, model.clone());
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.early_stop_patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    log.wall_seconds = started.elapsed().as_secs_f64();
    Ok((best.1, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn learning_rate_schedule() {
        let c = TrainConfig::paper();
        let lrs: Vec<f64> = [0, 900, 1200, 1500, 1799, 1800].iter().map(|&e| lr_at(e, &c)).collect();
        let expected = [1e-3, 1e-4, 1e-5, 1e-6, 1e-6, 1e-7];
        for (a, b) in lrs.iter().zip(expected) {
            assert!((a / b - 1.0).abs() < 1e-12, "{a} vs {b}");
        }
        assert_eq!(lr_at(899, &c), 1e-3);
        let f = TrainConfig::fast();
        assert!((lr_at(90, &f) / 1e-4 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_schedule() {
        let c = TrainConfig::paper();
        assert_eq!(
            [0, 1, 2000, 5000].map(|e| batch_size_at(e, &c)),
            [2, 3, 2002, 2002]
        );
        assert_eq!(batch_size_at(500, &TrainConfig::fast()), 202);
    }

    proptest::proptest! {
        #[test]
        fn schedules_are_monotone(epoch in 0usize..5000, paper in proptest::bool::ANY) {
            let c = if paper { TrainConfig::paper() } else { TrainConfig::fast() };
            proptest::prop_assert!(lr_at(epoch + 1, &c) <= lr_at(epoch, &c));
            let (b0, b1) = (batch_size_at(epoch, &c), batch_size_at(epoch + 1, &c));
            proptest::prop_assert!(b0 <= b1 && b1 <= c.batch_cap && b0 >= c.batch_start);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::fast();
        c.lr_drop_epochs = vec![100, 90];
        assert!(c.validate().is_err());
        let mut c = TrainConfig::fast();
        c.early_stop_patience = 0;
        assert!(c.validate().is_err());
    }

    fn tiny(n: usize, seed: u64, f: impl Fn(&[f32]) -> f32) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = Array2::from_shape_simple_fn((n, 32), || rng.random::<f32>());
        let labels = Array2::from_shape_fn((n, 1), |(i, _)| f(inputs.row(i).as_slice().unwrap()));
        Dataset::new(inputs, labels).unwrap()
    }

    /// First-echo-normalized two-pool curves with a constant label.
    fn constant_label_curves(n: usize, rng: &mut ChaCha8Rng) -> Dataset {
        let mut inputs = Array2::zeros((n, 32));
        for mut row in inputs.rows_mut() {
            let t2 = rng.random_range(50.0..100.0f32);
            let f = rng.random_range(0.0..0.2f32);
            for (e, v) in row.iter_mut().enumerate() {
                let t = e as f32 * 10.0;
                *v = f * (-t / 20.0).exp() + (1.0 - f) * (-t / t2).exp();
            }
        }
        Dataset::new(inputs, Array2::from_elem((n, 1), 0.1)).unwrap()
    }

    #[test]
    fn constant_labels_are_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let train_set = constant_label_curves(400, &mut rng);
        let val = constant_label_curves(100, &mut rng);
        let mut c = TrainConfig::fast().with_seed(3);
        c.max_epochs = 50;
        let (m, log) = train(&train_set, &val, &c, HeadKind::ScalarMwf).unwrap();
        assert!(log.epochs.len() <= 50);
        let out = m.predict(val.inputs.view()).unwrap();
        for &o in &out {
            assert!((o - 0.1).abs() <= 1e-3, "{o}");
        }
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let train_set = tiny(200, 4, |x| x[3] * 0.5);
        let val = tiny(50, 5, |x| x[3] * 0.5);
        let mut c = TrainConfig::fast().with_seed(9);
        c.max_epochs = 6;
        let run = || {
            let m = MlpModel::new(HeadKind::ScalarMwf, vec![32, 8, 1], 0.2, 9).unwrap();
            train_model(m, &train_set, &val, &c, |_, _| {}).unwrap()
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a, b);
        assert_eq!(la.epochs, lb.epochs);
    }

    #[test]
    fn empty_validation_is_rejected() {
        let t = tiny(10, 1, |_| 0.0);
        let v = t.select(&[]);
        assert!(matches!(
            train(&t, &v, &TrainConfig::fast(), HeadKind::ScalarMwf),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn single_layer_gradient_closed_form() {
        let mut m = Mlp::<f64>::new(HeadKind::ScalarMwf, vec![3, 1], 0.2, 0).unwrap();
        m.weights[0] = ndarray::array![[0.5, -1.0, 2.0]];
        let x = ndarray::array![[1.0, 2.0, 3.0]];
        let y = ndarray::array![[1.0]];
        let mut g = Gradients::zeros_like(&m);
        let loss = loss_and_gradients(&m, x.view(), y.view(), &mut g).unwrap();
        let out = 0.5 - 2.0 + 6.0;
        assert_eq!(loss, (out - 1.0) * (out - 1.0));
        for j in 0..3 {
            assert_eq!(g.weights[0][[0, j]], 2.0 * (out - 1.0) * x[[0, j]]);
        }
        assert_eq!(g.biases[0][0], 2.0 * (out - 1.0));
    }

    #[test]
    fn non_finite_loss_aborts_with_location() {
        let mut t = tiny(8, 1, |_| 0.0);
        t.labels[[5, 0]] = f32::NAN;
        let v = tiny(4, 2, |_| 0.0);
        let m = MlpModel::new(HeadKind::ScalarMwf, vec![32, 4, 1], 0.2, 0).unwrap();
        let mut c = TrainConfig::fast();
        c.batch_start = 8;
        assert!(matches!(
            train_model(m, &t, &v, &c, |_, _| {}),
            Err(Error::NonFiniteLoss { epoch: 0, batch: 0 })
        ));
    }
}
