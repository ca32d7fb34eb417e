//! SpecAugment-style masking and the two-view draw used by consistency
//! regularization. Masked coordinates are set to zero; nothing else is
//! touched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Seed offset for the second view.
const VIEW_B_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub freq_mask_regions: usize,
    /// Widths are drawn from `0..=freq_mask_max_width`.
    pub freq_mask_max_width: usize,
    pub time_mask_regions: usize,
    /// Widths are drawn from `0..=floor(time_mask_max_fraction * T)`.
    pub time_mask_max_fraction: f64,
    /// Multiplier on time-mask regions and fraction for consistency views.
    pub cr_scale: f64,
}

impl Default for AugmentConfig {
    /// Two frequency regions of up to 5 of 16 bins (27 of 80 scaled down),
    /// ten time regions of up to 1.5% of the utterance each, and a 2.5x
    /// heavier time masking for consistency views.
    fn default() -> Self {
        Self {
            freq_mask_regions: 2,
            freq_mask_max_width: 5,
            time_mask_regions: 10,
            time_mask_max_fraction: 0.015,
            cr_scale: 2.5,
        }
    }
}

impl AugmentConfig {
    /// No masking at all.
    pub fn identity() -> Self {
        Self {
            freq_mask_regions: 0,
            freq_mask_max_width: 0,
            time_mask_regions: 0,
            time_mask_max_fraction: 0.0,
            cr_scale: 1.0,
        }
    }

    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        if self.freq_mask_max_width > feature_dim {
            return Err(Error::config(
                "freq_mask_max_width",
                format!("{} exceeds feature dim {feature_dim}", self.freq_mask_max_width),
            ));
        }
        if !(0.0..=1.0).contains(&self.time_mask_max_fraction) {
            return Err(Error::config("time_mask_max_fraction", "must be in [0, 1]"));
        }
        if !(self.cr_scale >= 1.0 && self.cr_scale.is_finite()) {
            return Err(Error::config("cr_scale", "must be >= 1"));
        }
        Ok(())
    }

    /// Configuration used for each consistency view: time regions and
    /// fraction scaled by `cr_scale` (regions rounded to nearest).
    pub fn cr_view(&self) -> Self {
        Self {
            time_mask_regions: (self.time_mask_regions as f64 * self.cr_scale).round() as usize,
            time_mask_max_fraction: (self.time_mask_max_fraction * self.cr_scale).min(1.0),
            cr_scale: 1.0,
            ..self.clone()
        }
    }
}

/// Drawn regions as `(start, width)` pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPlan {
    pub freq: Vec<(usize, usize)>,
    pub time: Vec<(usize, usize)>,
}

impl MaskPlan {
    pub fn draw(frames: usize, feature_dim: usize, cfg: &AugmentConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut region = |extent: usize, max_width: usize| {
            let width = rng.random_range(0..=max_width.min(extent));
            let start = rng.random_range(0..=extent - width);
            (start, width)
        };
        let freq = (0..cfg.freq_mask_regions)
            .map(|_| region(feature_dim, cfg.freq_mask_max_width))
            .collect();
        let time_width = (cfg.time_mask_max_fraction * frames as f64).floor() as usize;
        let time = (0..cfg.time_mask_regions)
            .map(|_| region(frames, time_width))
            .collect();
        Self { freq, time }
    }

    pub fn apply<S: Real>(&self, x: &Tensor<S>) -> Tensor<S> {
        let (frames, dim) = x.rows_cols();
        let mut data = x.data().to_vec();
        for &(start, width) in &self.time {
            data[start * dim..(start + width) * dim].fill(S::zero());
        }
        for &(start, width) in &self.freq {
            for t in 0..frames {
                data[t * dim + start..t * dim + start + width].fill(S::zero());
            }
        }
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }
}

/// One masked copy of `x` (shape `(T, F)`), deterministic in `seed`.
pub fn spec_augment<S: Real>(x: &Tensor<S>, cfg: &AugmentConfig, seed: u64) -> Tensor<S> {
    let (frames, dim) = x.rows_cols();
    MaskPlan::draw(frames, dim, cfg, seed).apply(x)
}

/// Two independent draws with the consistency-view configuration.
pub fn two_views<S: Real>(x: &Tensor<S>, cfg: &AugmentConfig, seed: u64) -> (Tensor<S>, Tensor<S>) {
    let view = cfg.cr_view();
    (
        spec_augment(x, &view, seed),
        spec_augment(x, &view, seed ^ VIEW_B_SALT),
    )
}
