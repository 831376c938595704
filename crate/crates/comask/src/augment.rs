//! Strong photometric augmentation for the student view: color jitter and
//! Gaussian blur. Applied to RGB only; depth and labels pass through
//! unchanged.

use ndarray::{Array4, ArrayViewMut3};
use rand::Rng;

use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy)]
pub struct AugmentParams {
    pub jitter_strength: f64,
    pub jitter_prob: f64,
    pub blur_sigma_min: f64,
    pub blur_sigma_max: f64,
    pub blur_prob: f64,
}

impl AugmentParams {
    pub fn from_config(cfg: &crate::config::RunConfig) -> Self {
        Self {
            jitter_strength: cfg.jitter_strength,
            jitter_prob: 0.8,
            blur_sigma_min: cfg.blur_sigma_min,
            blur_sigma_max: cfg.blur_sigma_max,
            blur_prob: 0.5,
        }
    }
}

/// Apply jitter and blur in place to a `[B, 3, H, W]` batch; draws are
/// per-image, so batch order matters for determinism.
pub fn strong_augment(rgb: &mut Array4<f32>, params: &AugmentParams, rng: &mut StreamRng) {
    let b = rgb.dim().0;
    for bi in 0..b {
        let mut img = rgb.index_axis_mut(ndarray::Axis(0), bi);
        if rng.gen::<f64>() < params.jitter_prob {
            let s = params.jitter_strength;
            let brightness = rng.gen_range(1.0 - s..1.0 + s) as f32;
            let contrast = rng.gen_range(1.0 - s..1.0 + s) as f32;
            let saturation = rng.gen_range(1.0 - s..1.0 + s) as f32;
            color_jitter(&mut img, brightness, contrast, saturation);
        }
        if rng.gen::<f64>() < params.blur_prob {
            let sigma = rng.gen_range(params.blur_sigma_min..params.blur_sigma_max);
            gaussian_blur(&mut img, sigma);
        }
    }
}

fn color_jitter(img: &mut ArrayViewMut3<f32>, brightness: f32, contrast: f32, saturation: f32) {
    let (c, h, w) = img.dim();
    debug_assert_eq!(c, 3);
    let mean: f32 = img.iter().sum::<f32>() / (c * h * w) as f32;
    for y in 0..h {
        for x in 0..w {
            let gray = (img[[0, y, x]] + img[[1, y, x]] + img[[2, y, x]]) / 3.0;
            for ch in 0..3 {
                let mut v = img[[ch, y, x]];
                v *= brightness;
                v = (v - mean) * contrast + mean;
                v = gray + (v - gray) * saturation;
                img[[ch, y, x]] = v.clamp(0.0, 1.0);
            }
        }
    }
}

/// Separable Gaussian blur with a radius of ceil(2 sigma).
pub fn gaussian_blur(img: &mut ArrayViewMut3<f32>, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (2.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let denom = 2.0 * sigma * sigma;
    for k in -radius..=radius {
        kernel.push((-(k * k) as f64 / denom).exp() as f32);
    }
    let norm: f32 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= norm;
    }

    let (c, h, w) = img.dim();
    let mut tmp = vec![0.0f32; h * w];
    for ch in 0..c {
        // horizontal pass
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let xi = (x as isize + ki as isize - radius).clamp(0, w as isize - 1) as usize;
                    acc += kv * img[[ch, y, xi]];
                }
                tmp[y * w + x] = acc;
            }
        }
        // vertical pass
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let yi = (y as isize + ki as isize - radius).clamp(0, h as isize - 1) as usize;
                    acc += kv * tmp[yi * w + x];
                }
                img[[ch, y, x]] = acc;
            }
        }
    }
}
