use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::cube::EchoCube;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// Magnitude of signal plus complex Gaussian noise.
    #[default]
    Rician,
    Gaussian,
}

/// Adds seeded noise of standard deviation `sd` to every echo sample.
pub fn add_noise(cube: &EchoCube, sd: f64, model: NoiseModel, seed: u64) -> Result<EchoCube> {
    let mut out = cube.clone();
    add_noise_in_place(&mut out, sd, model, seed)?;
    Ok(out)
}

pub fn add_noise_in_place(cube: &mut EchoCube, sd: f64, model: NoiseModel, seed: u64) -> Result<()> {
    if !(sd >= 0.0 && sd.is_finite()) {
        return Err(Error::param(format!("noise sd must be non-negative, got {sd}")));
    }
    if sd == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sd).expect("valid sd");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in cube.signals.iter_mut() {
        let s = f64::from(*v);
        let n1 = normal.sample(&mut rng);
        *v = match model {
            NoiseModel::Gaussian => (s + n1) as f32,
            NoiseModel::Rician => {
                let n2 = normal.sample(&mut rng);
                (s + n1).hypot(n2) as f32
            }
        };
    }
    Ok(())
}
