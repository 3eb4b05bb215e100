//! Background interventions: the Fourier amplitude perturbation plus random
//! noise, motion blur and contrast stretching.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VisionError};
use crate::fourier::amplitude_perturb;
use crate::image::DepthImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationKind {
    Amplitude,
    Noise,
    Blur,
    Contrast,
}

impl AugmentationKind {
    pub const ALL: [AugmentationKind; 4] = [
        AugmentationKind::Amplitude,
        AugmentationKind::Noise,
        AugmentationKind::Blur,
        AugmentationKind::Contrast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentationKind::Amplitude => "amplitude",
            AugmentationKind::Noise => "noise",
            AugmentationKind::Blur => "blur",
            AugmentationKind::Contrast => "contrast",
        }
    }
}

impl fmt::Display for AugmentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugmentationKind {
    type Err = VisionError;

    fn from_str(s: &str) -> Result<Self> {
        AugmentationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| VisionError::Parameter(format!("unknown augmentation `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterventionConfig {
    pub lambda_low: f64,
    pub lambda_high: f64,
    /// Standard deviation of additive noise, meters.
    pub noise_sigma: f64,
    /// Length of the motion-blur line kernel, pixels (odd).
    pub blur_kernel_length: usize,
    pub contrast_low: f64,
    pub contrast_high: f64,
    /// Enabled augmentation types; their count is `C`.
    pub kinds: Vec<AugmentationKind>,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        InterventionConfig {
            lambda_low: 0.5,
            lambda_high: 1.5,
            noise_sigma: 0.02 * 20.0,
            blur_kernel_length: 5,
            contrast_low: 0.7,
            contrast_high: 1.3,
            kinds: AugmentationKind::ALL.to_vec(),
        }
    }
}

impl InterventionConfig {
    /// Number of augmentation types `C`.
    pub fn count(&self) -> usize {
        self.kinds.len()
    }

    /// Every parameter collapsed to its identity value.
    pub fn degenerate(kinds: Vec<AugmentationKind>) -> Self {
        InterventionConfig {
            lambda_low: 1.0,
            lambda_high: 1.0,
            noise_sigma: 0.0,
            blur_kernel_length: 1,
            contrast_low: 1.0,
            contrast_high: 1.0,
            kinds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(VisionError::Parameter(m));
        if !(self.lambda_low > 0.0 && self.lambda_low <= self.lambda_high) {
            return err(format!(
                "need 0 < lambda_low <= lambda_high, got [{}, {}]",
                self.lambda_low, self.lambda_high
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return err(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        if self.blur_kernel_length % 2 == 0 {
            return err(format!(
                "blur_kernel_length {} must be odd and >= 1",
                self.blur_kernel_length
            ));
        }
        if !(self.contrast_low > 0.0 && self.contrast_low <= self.contrast_high) {
            return err(format!(
                "need 0 < contrast_low <= contrast_high, got [{}, {}]",
                self.contrast_low, self.contrast_high
            ));
        }
        if self.kinds.is_empty() {
            return err("at least one augmentation type must be enabled".into());
        }
        for (i, k) in self.kinds.iter().enumerate() {
            if self.kinds[..i].contains(k) {
                return err(format!("augmentation `{k}` listed twice"));
            }
        }
        Ok(())
    }
}

/// Adds zero-mean normal noise of standard deviation `sigma`, then clamps.
pub fn random_noise<R: Rng + ?Sized>(image: &DepthImage, sigma: f64, rng: &mut R) -> Result<DepthImage> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(VisionError::Parameter(format!("sigma {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| VisionError::Parameter(e.to_string()))?;
    let raw: Vec<f64> = image.data().iter().map(|d| d + normal.sample(rng)).collect();
    DepthImage::from_clamped(image.height(), image.width(), image.max_range(), &raw)
}

fn sample_replicated(image: &DepthImage, row: f64, col: f64) -> f64 {
    let max_r = (image.height() - 1) as f64;
    let max_c = (image.width() - 1) as f64;
    let r = row.clamp(0.0, max_r);
    let c = col.clamp(0.0, max_c);
    let (r0, c0) = (r.floor() as usize, c.floor() as usize);
    let (r1, c1) = ((r0 + 1).min(image.height() - 1), (c0 + 1).min(image.width() - 1));
    let (fr, fc) = (r - r0 as f64, c - c0 as f64);
    if fr == 0.0 && fc == 0.0 {
        return image.get(r0, c0);
    }
    let top = image.get(r0, c0) * (1.0 - fc) + image.get(r0, c1) * fc;
    let bottom = image.get(r1, c0) * (1.0 - fc) + image.get(r1, c1) * fc;
    top * (1.0 - fr) + bottom * fr
}

/// Convolves with a normalised line kernel of `kernel_length` taps oriented at
/// `angle` radians from the image x axis. Off-grid taps are bilinearly
/// interpolated; borders replicate the edge pixel.
pub fn motion_blur(image: &DepthImage, kernel_length: usize, angle: f64) -> Result<DepthImage> {
    if kernel_length % 2 == 0 {
        return Err(VisionError::Parameter(format!(
            "kernel length {kernel_length} must be odd and >= 1"
        )));
    }
    if kernel_length == 1 {
        return Ok(image.clone());
    }
    let half = (kernel_length / 2) as isize;
    let (dr, dc) = (angle.sin(), angle.cos());
    let weight = 1.0 / kernel_length as f64;
    let mut out = Vec::with_capacity(image.data().len());
    for r in 0..image.height() {
        for c in 0..image.width() {
            let acc: f64 = (-half..=half)
                .map(|t| sample_replicated(image, r as f64 + t as f64 * dr, c as f64 + t as f64 * dc))
                .sum();
            out.push(acc * weight);
        }
    }
    DepthImage::from_clamped(image.height(), image.width(), image.max_range(), &out)
}

/// Motion blur with the angle drawn uniformly from `[0, pi)`.
pub fn random_motion_blur<R: Rng + ?Sized>(
    image: &DepthImage,
    kernel_length: usize,
    rng: &mut R,
) -> Result<DepthImage> {
    let angle = rng.random_range(0.0..PI);
    motion_blur(image, kernel_length, angle)
}

/// `d -> mid + factor * (d - mid)` about `mid = max_range / 2`, then clamps.
pub fn contrast_stretch(image: &DepthImage, factor: f64) -> Result<DepthImage> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(VisionError::Parameter(format!("contrast factor {factor} must be > 0")));
    }
    let mid = image.max_range() / 2.0;
    let raw: Vec<f64> = image.data().iter().map(|d| mid + factor * (d - mid)).collect();
    DepthImage::from_clamped(image.height(), image.width(), image.max_range(), &raw)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Applies one augmentation with parameters drawn from `cfg`.
pub fn apply_random<R: Rng + ?Sized>(
    kind: AugmentationKind,
    image: &DepthImage,
    cfg: &InterventionConfig,
    rng: &mut R,
) -> Result<DepthImage> {
    match kind {
        AugmentationKind::Amplitude => {
            let lambda = uniform(rng, cfg.lambda_low, cfg.lambda_high);
            amplitude_perturb(image, lambda)
        }
        AugmentationKind::Noise => random_noise(image, cfg.noise_sigma, rng),
        AugmentationKind::Blur => random_motion_blur(image, cfg.blur_kernel_length, rng),
        AugmentationKind::Contrast => {
            let factor = uniform(rng, cfg.contrast_low, cfg.contrast_high);
            contrast_stretch(image, factor)
        }
    }
}

/// One variant per enabled augmentation type, in `cfg.kinds` order.
pub fn intervene_set<R: Rng + ?Sized>(
    image: &DepthImage,
    cfg: &InterventionConfig,
    rng: &mut R,
) -> Result<Vec<DepthImage>> {
    cfg.validate()?;
    cfg.kinds
        .iter()
        .map(|&kind| apply_random(kind, image, cfg, rng))
        .collect()
}
