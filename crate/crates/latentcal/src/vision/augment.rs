//! Image-level augmentation: flip, blur, salt-and-pepper.
//!
//! The default recipe applies, in order: horizontal flip with probability
//! 0.5, Gaussian blur with sigma 5 (truncated at three sigma, kernel
//! normalized to sum 1, edges replicated), and salt-and-pepper noise that
//! corrupts each pixel independently with total probability 0.2, half to
//! white and half to black.

use serde::{Deserialize, Serialize};

use crate::numeric::Rng;
use crate::vision::scene::{SceneProvenance, SyntheticScene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Probability of a horizontal flip.
    pub flip_prob: f64,
    /// Gaussian sigma; the stated blur radius.
    pub blur_sigma: f64,
    /// Kernel truncation in units of sigma.
    pub blur_truncate: f64,
    /// Total per-pixel corruption probability.
    pub noise_intensity: f64,
    /// Share of corrupted pixels set to white (the rest go black).
    pub salt_fraction: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            blur_sigma: 5.0,
            blur_truncate: 3.0,
            noise_intensity: 0.2,
            salt_fraction: 0.5,
        }
    }
}

/// Apply the augmentation recipe. Grid dimensions never change.
pub fn augment(scene: &SyntheticScene, config: &AugmentConfig, rng: &mut Rng) -> SyntheticScene {
    let mut out = scene.clone();
    out.provenance = SceneProvenance::Augmented;
    if rng.bernoulli(config.flip_prob) {
        flip_horizontal(&mut out);
    }
    gaussian_blur(&mut out, config.blur_sigma, config.blur_truncate);
    salt_and_pepper(&mut out, config.noise_intensity, config.salt_fraction, rng);
    out
}

pub fn flip_horizontal(scene: &mut SyntheticScene) {
    for y in 0..scene.height {
        let row = &mut scene.pixels[y * scene.width..(y + 1) * scene.width];
        row.reverse();
    }
}

/// Separable Gaussian blur with replicated edges. A constant image is a
/// fixed point because each 1-D kernel is normalized to sum 1.
pub fn gaussian_blur(scene: &mut SyntheticScene, sigma: f64, truncate: f64) {
    if sigma <= 0.0 {
        return;
    }
    let half = (truncate * sigma).floor() as isize;
    let mut kernel = Vec::with_capacity((2 * half + 1) as usize);
    for i in -half..=half {
        kernel.push((-(i as f64 * i as f64) / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= sum;
    }

    let (w, h) = (scene.width as isize, scene.height as isize);
    let clamp = |v: isize, hi: isize| v.clamp(0, hi - 1) as usize;

    // Horizontal pass.
    let src = scene.pixels.clone();
    for y in 0..scene.height {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (ki, k) in kernel.iter().enumerate() {
                let sx = clamp(x + ki as isize - half, w);
                let p = src[y * scene.width + sx];
                for c in 0..3 {
                    acc[c] += k * p[c];
                }
            }
            scene.pixels[y * scene.width + x as usize] = acc;
        }
    }
    // Vertical pass.
    let src = scene.pixels.clone();
    for y in 0..h {
        for x in 0..scene.width {
            let mut acc = [0.0f64; 3];
            for (ki, k) in kernel.iter().enumerate() {
                let sy = clamp(y + ki as isize - half, h);
                let p = src[sy * scene.width + x];
                for c in 0..3 {
                    acc[c] += k * p[c];
                }
            }
            scene.pixels[y as usize * scene.width + x] = acc;
        }
    }
}

/// Corrupt each pixel independently with probability `intensity`; corrupted
/// pixels become white with probability `salt_fraction`, otherwise black.
pub fn salt_and_pepper(
    scene: &mut SyntheticScene,
    intensity: f64,
    salt_fraction: f64,
    rng: &mut Rng,
) {
    for p in scene.pixels.iter_mut() {
        if rng.bernoulli(intensity) {
            let v = if rng.bernoulli(salt_fraction) { 1.0 } else { 0.0 };
            *p = [v, v, v];
        }
    }
}
