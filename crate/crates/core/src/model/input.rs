use super::config::{EncoderMode, ModelConfig};
use crate::error::{IdcError, Result};
use crate::imaging::{concat_and_resize, resize_bilinear, Raster};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Splits a square image into `patch_side` squares in row-major order. Each
/// patch vector lists its pixels row by row, channels interleaved, scaled to
/// `[0, 1]`.
pub fn patchify<S: Scalar>(image: &Raster, cfg: &ModelConfig) -> Result<Tensor<S>> {
    let side = cfg.image_side;
    if image.width() != side || image.height() != side {
        return Err(IdcError::Shape(format!(
            "patchify expects {side}x{side}, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    let p = cfg.patch_side;
    let per_side = side / p;
    let px = image.data();
    let mut out = Vec::with_capacity(side * side * 3);
    for py in 0..per_side {
        for pxi in 0..per_side {
            for y in 0..p {
                let row = (py * p + y) * side + pxi * p;
                out.extend(px[row * 3..(row + p) * 3].iter().map(|&v| S::of(v as f64 / 255.0)));
            }
        }
    }
    Tensor::new(&[cfg.n_patches(), cfg.patch_dim()], out)
}

/// Model input for one (reference, modified) pair, shaped per encoder mode:
/// `[n_patches, patch_dim]` for the joint encoder, `[2 * n_patches,
/// patch_dim]` (reference first) for the two-stream one.
pub fn prepare_pair<S: Scalar>(img_ref: &Raster, img_mod: &Raster, cfg: &ModelConfig) -> Result<Tensor<S>> {
    match cfg.encoder_mode {
        EncoderMode::Joint => patchify(&concat_and_resize(img_ref, img_mod, cfg.image_side)?, cfg),
        EncoderMode::TwoStream => {
            let side = cfg.image_side;
            let a: Tensor<S> = patchify(&resize_bilinear(img_ref, side, side)?, cfg)?;
            let b: Tensor<S> = patchify(&resize_bilinear(img_mod, side, side)?, cfg)?;
            let mut data = a.data().to_vec();
            data.extend_from_slice(b.data());
            Tensor::new(&[2 * cfg.n_patches(), cfg.patch_dim()], data)
        }
    }
}
