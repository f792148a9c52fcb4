//! Object-centric augmentation of `(C, H, W)` pixel stimuli in `[0, 1]`.
//!
//! Channels are read in groups of three (one RGB frame each); every frame of a
//! stack receives the same draw so the stack stays temporally coherent.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Gaussian blur σ drawn from `[0, blur_sigma_max]` (pixels).
    pub blur_sigma_max: f64,
    /// Brightness, contrast and saturation factors drawn from `1 ± jitter`.
    pub jitter: f64,
    pub rotation_deg: f64,
    /// Translation drawn from `± translate · size` per axis.
    pub translate: f64,
    /// Isotropic scale drawn from `1 ± scale`.
    pub scale: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            blur_sigma_max: 1.0,
            jitter: 0.2,
            rotation_deg: 10.0,
            translate: 0.08,
            scale: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            blur_sigma_max: 0.0,
            jitter: 0.0,
            rotation_deg: 0.0,
            translate: 0.0,
            scale: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::none()
    }

    pub fn validate(&self) -> crate::Result<()> {
        let fields = [self.blur_sigma_max, self.jitter, self.rotation_deg, self.translate, self.scale];
        if fields.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || self.scale >= 1.0 || self.jitter >= 1.0 {
            return Err(crate::EtherError::Config(
                "augmentation strengths must be finite and ≥ 0, with scale and jitter < 1".into(),
            ));
        }
        Ok(())
    }
}

/// Augment `pixels` laid out as `(channels, size, size)`.
pub fn augment(pixels: &[f32], channels: usize, size: usize, cfg: &AugmentConfig, seed: u64) -> Vec<f32> {
    assert_eq!(pixels.len(), channels * size * size, "pixel buffer does not match (C, H, W)");
    if cfg.is_identity() {
        return pixels.to_vec();
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = pixels.to_vec();
    if cfg.rotation_deg > 0.0 || cfg.translate > 0.0 || cfg.scale > 0.0 {
        let angle = symmetric(&mut rng, cfg.rotation_deg).to_radians();
        let shift = (symmetric(&mut rng, cfg.translate) * size as f64, symmetric(&mut rng, cfg.translate) * size as f64);
        let zoom = 1.0 + symmetric(&mut rng, cfg.scale);
        out = affine(&out, channels, size, angle, shift, zoom);
    }
    if cfg.blur_sigma_max > 0.0 {
        let sigma = rng.random_range(0.0..=cfg.blur_sigma_max);
        out = blur(&out, channels, size, sigma);
    }
    if cfg.jitter > 0.0 {
        let factors = [
            1.0 + symmetric(&mut rng, cfg.jitter),
            1.0 + symmetric(&mut rng, cfg.jitter),
            1.0 + symmetric(&mut rng, cfg.jitter),
        ];
        jitter(&mut out, channels, size, factors);
    }
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

fn symmetric(rng: &mut StdRng, half_width: f64) -> f64 {
    if half_width == 0.0 {
        0.0
    } else {
        rng.random_range(-half_width..=half_width)
    }
}

/// Rotate by `angle`, scale by `zoom` about the centre, then translate;
/// bilinear sampling with zero fill.
fn affine(src: &[f32], channels: usize, size: usize, angle: f64, shift: (f64, f64), zoom: f64) -> Vec<f32> {
    let c = (size as f64 - 1.0) / 2.0;
    let (sin, cos) = angle.sin_cos();
    let mut out = vec![0f32; src.len()];
    let plane = size * size;
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 - c - shift.1) / zoom;
            let v = (y as f64 - c - shift.0) / zoom;
            let sx = cos * u + sin * v + c;
            let sy = -sin * u + cos * v + c;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            for ch in 0..channels {
                let base = &src[ch * plane..(ch + 1) * plane];
                let at = |yy: f64, xx: f64| -> f64 {
                    if yy < 0.0 || xx < 0.0 || yy >= size as f64 || xx >= size as f64 {
                        0.0
                    } else {
                        base[yy as usize * size + xx as usize] as f64
                    }
                };
                let value = at(y0, x0) * (1.0 - fx) * (1.0 - fy)
                    + at(y0, x0 + 1.0) * fx * (1.0 - fy)
                    + at(y0 + 1.0, x0) * (1.0 - fx) * fy
                    + at(y0 + 1.0, x0 + 1.0) * fx * fy;
                out[ch * plane + y * size + x] = value as f32;
            }
        }
    }
    out
}

/// Separable Gaussian blur, kernel radius `⌈3σ⌉`, edges clamped.
fn blur(src: &[f32], channels: usize, size: usize, sigma: f64) -> Vec<f32> {
    if sigma < 1e-3 {
        return src.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let plane = size * size;
    let clamp = |i: i64| i.clamp(0, size as i64 - 1) as usize;
    let mut tmp = vec![0f32; src.len()];
    let mut out = vec![0f32; src.len()];
    for ch in 0..channels {
        let s = &src[ch * plane..(ch + 1) * plane];
        for y in 0..size {
            for x in 0..size {
                let acc: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * s[y * size + clamp(x as i64 + k as i64 - radius)] as f64)
                    .sum();
                tmp[ch * plane + y * size + x] = acc as f32;
            }
        }
        let t = &tmp[ch * plane..(ch + 1) * plane];
        for y in 0..size {
            for x in 0..size {
                let acc: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * t[clamp(y as i64 + k as i64 - radius) * size + x] as f64)
                    .sum();
                out[ch * plane + y * size + x] = acc as f32;
            }
        }
    }
    out
}

/// Brightness, contrast, saturation, in that order, per RGB frame.
fn jitter(px: &mut [f32], channels: usize, size: usize, [brightness, contrast, saturation]: [f64; 3]) {
    let plane = size * size;
    for frame in 0..channels.div_ceil(3) {
        let chans: Vec<usize> = (frame * 3..(frame * 3 + 3).min(channels)).collect();
        for &ch in &chans {
            for v in &mut px[ch * plane..(ch + 1) * plane] {
                *v = (*v as f64 * brightness) as f32;
            }
        }
        let grey = |px: &[f32], i: usize| -> f64 {
            if chans.len() == 3 {
                0.299 * px[chans[0] * plane + i] as f64 + 0.587 * px[chans[1] * plane + i] as f64 + 0.114 * px[chans[2] * plane + i] as f64
            } else {
                chans.iter().map(|&c| px[c * plane + i] as f64).sum::<f64>() / chans.len() as f64
            }
        };
        let mean = (0..plane).map(|i| grey(px, i)).sum::<f64>() / plane as f64;
        for &ch in &chans {
            for v in &mut px[ch * plane..(ch + 1) * plane] {
                *v = ((*v as f64 - mean) * contrast + mean) as f32;
            }
        }
        for i in 0..plane {
            let g = grey(px, i);
            for &ch in &chans {
                let v = &mut px[ch * plane + i];
                *v = ((*v as f64 - g) * saturation + g) as f32;
            }
        }
    }
}
