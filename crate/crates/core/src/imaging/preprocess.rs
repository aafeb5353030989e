use super::raster::Raster;
use crate::error::{IdcError, Result};

/// Stacks `top` above `bottom`.
pub fn concat_vertical(top: &Raster, bottom: &Raster) -> Result<Raster> {
    if top.width() != bottom.width() || top.height() != bottom.height() {
        return Err(IdcError::Shape(format!(
            "cannot stack {}x{} over {}x{}: dimensions differ",
            top.width(),
            top.height(),
            bottom.width(),
            bottom.height()
        )));
    }
    let mut data = Vec::with_capacity(top.data().len() * 2);
    data.extend_from_slice(top.data());
    data.extend_from_slice(bottom.data());
    Raster::new(top.width(), top.height() * 2, data)
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
/// Output values are rounded half up.
pub fn resize_bilinear(src: &Raster, out_w: usize, out_h: usize) -> Result<Raster> {
    if out_w == 0 || out_h == 0 {
        return Err(IdcError::InvalidArgument(format!(
            "resize target must be positive, got {out_w}x{out_h}"
        )));
    }
    let (w, h) = (src.width(), src.height());
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    let taps = |o: usize, scale: f64, n: usize| {
        let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, pos - i0 as f64)
    };
    let mut data = Vec::with_capacity(out_w * out_h * 3);
    let px = src.data();
    for oy in 0..out_h {
        let (y0, y1, fy) = taps(oy, sy, h);
        for ox in 0..out_w {
            let (x0, x1, fx) = taps(ox, sx, w);
            for c in 0..3 {
                let at = |x: usize, y: usize| px[(y * w + x) * 3 + c] as f64;
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bot = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                let v = top * (1.0 - fy) + bot * fy;
                data.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Raster::new(out_w, out_h, data)
}

/// Reference image on top, modified below, stretched to `out_side` square.
pub fn concat_and_resize(img_ref: &Raster, img_mod: &Raster, out_side: usize) -> Result<Raster> {
    let stacked = concat_vertical(img_ref, img_mod)?;
    resize_bilinear(&stacked, out_side, out_side)
}
