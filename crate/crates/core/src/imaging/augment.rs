use rand::Rng;
use serde::{Deserialize, Serialize};

use super::raster::Raster;

/// Photometric augmentations that leave scene semantics untouched: Gaussian
/// blur and uniform per-channel quantization (a codec-free stand-in for JPEG
/// artifacts). No geometric or color-semantic transform is ever applied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub blur_prob: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub quantize_prob: f64,
    pub levels: [u32; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            blur_prob: 0.5,
            sigma_min: 0.3,
            sigma_max: 1.0,
            quantize_prob: 0.5,
            levels: [16, 32],
        }
    }
}

impl AugmentConfig {
    pub const OFF: AugmentConfig = AugmentConfig {
        blur_prob: 0.0,
        sigma_min: 0.3,
        sigma_max: 1.0,
        quantize_prob: 0.0,
        levels: [16, 32],
    };
}

pub fn augment<R: Rng + ?Sized>(img: &Raster, rng: &mut R, cfg: &AugmentConfig) -> Raster {
    // draws happen unconditionally so the stream position does not depend on
    // which branches fire
    let do_blur = rng.gen::<f64>() < cfg.blur_prob;
    let sigma = rng.gen_range(cfg.sigma_min..=cfg.sigma_max);
    let do_quant = rng.gen::<f64>() < cfg.quantize_prob;
    let levels = cfg.levels[rng.gen_range(0..cfg.levels.len())];
    let mut out = img.clone();
    if do_blur {
        out = gaussian_blur(&out, sigma);
    }
    if do_quant {
        out = quantize(&out, levels);
    }
    out
}

/// Normalized 1-D Gaussian taps of radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(img: &Raster, sigma: f64) -> Raster {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (img.width(), img.height());
    let src = img.data();
    let mut tmp = vec![0.0f64; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (t, &kw) in k.iter().enumerate() {
                    let xx = (x as i64 + t as i64 - r).clamp(0, w as i64 - 1) as usize;
                    acc += kw * src[(y * w + xx) * 3 + c] as f64;
                }
                tmp[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    let mut data = vec![0u8; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (t, &kw) in k.iter().enumerate() {
                    let yy = (y as i64 + t as i64 - r).clamp(0, h as i64 - 1) as usize;
                    acc += kw * tmp[(yy * w + x) * 3 + c];
                }
                data[(y * w + x) * 3 + c] = (acc + 0.5).floor().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Raster::new(w, h, data).expect("blur keeps dimensions")
}

/// Uniform quantization to `levels` bins per channel, reconstructed at bin
/// centers.
pub fn quantize(img: &Raster, levels: u32) -> Raster {
    let step = 256.0 / levels.max(1) as f64;
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let bin = (v as f64 / step).floor();
            ((bin + 0.5) * step).floor().min(255.0) as u8
        })
        .collect();
    Raster::new(img.width(), img.height(), data).expect("quantize keeps dimensions")
}
