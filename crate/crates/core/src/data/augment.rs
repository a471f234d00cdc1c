//! View generation for contrastive training: Gaussian noise plus optional
//! per-feature zero-masking, drawn from independent seeded substreams.

use rand::Rng;

use crate::autodiff::Tensor;
use crate::rng::{next_standard_normal, stream_rng, Stream};

use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoteConfig {
    pub enabled: bool,
    pub k_neighbors: usize,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        SmoteConfig { enabled: false, k_neighbors: 5 }
    }
}

/// Augmentation knobs, in standardized-feature units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Gaussian noise std added per feature.
    pub noise_sigma: f64,
    /// Probability of zeroing each feature independently.
    pub mask_prob: f64,
    /// Oversampling at the probe stage (labels exist there).
    pub smote: SmoteConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { noise_sigma: 0.1, mask_prob: 0.0, smote: SmoteConfig::default() }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(DataError::InvalidAugment(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !(0.0..1.0).contains(&self.mask_prob) {
            return Err(DataError::InvalidAugment(format!(
                "mask_prob must be in [0, 1), got {}",
                self.mask_prob
            )));
        }
        Ok(())
    }
}

/// Two independently perturbed copies of a feature batch. With zero noise
/// and zero mask probability both views are plain copies of `x`.
pub fn make_views(x: &Tensor, aug: &AugmentConfig, seed: u64) -> (Tensor, Tensor) {
    let v1 = perturb(x, aug, stream_rng(seed, Stream::View1));
    let v2 = perturb(x, aug, stream_rng(seed, Stream::View2));
    (v1, v2)
}

fn perturb<R: Rng>(x: &Tensor, aug: &AugmentConfig, mut rng: R) -> Tensor {
    if aug.noise_sigma == 0.0 && aug.mask_prob == 0.0 {
        return x.clone();
    }
    let mut values = x.values().to_vec();
    if aug.noise_sigma > 0.0 {
        for v in values.iter_mut() {
            *v += aug.noise_sigma * next_standard_normal(&mut rng);
        }
    }
    if aug.mask_prob > 0.0 {
        for v in values.iter_mut() {
            if rng.random::<f64>() < aug.mask_prob {
                *v = 0.0;
            }
        }
    }
    Tensor::new(x.shape(), values).expect("perturbed values stay finite")
}
