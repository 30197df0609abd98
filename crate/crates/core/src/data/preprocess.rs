use sigan_tensor::Tensor;

use super::RawImage;
use crate::error::{Result, SiganError};

/// Network input resolution.
pub const IMAGE_SIZE: usize = 256;

/// Maps an 8-bit gray level to `[-1, 1]`.
pub fn normalize_value(v: f64) -> f64 {
    2.0 * (v / 255.0) - 1.0
}

/// Inverse of [`normalize_value`], rounded and clamped to a gray level.
pub fn denormalize_to_u8(p: f32) -> u8 {
    ((p as f64 + 1.0) * 255.0 / 2.0).round().clamp(0.0, 255.0) as u8
}

/// Bilinear resampling with pixel-centre alignment and edge clamping.
pub fn bilinear_resize(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert_eq!(src.len(), h * w);
    if (h, w) == (out_h, out_w) {
        return src.to_vec();
    }
    let taps = |out: usize, n: usize| -> Vec<(usize, usize, f64)> {
        let scale = n as f64 / out as f64;
        (0..out)
            .map(|i| {
                let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (pos.floor() as usize).min(n - 1);
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, pos - i0 as f64)
            })
            .collect()
    };
    let ys = taps(out_h, h);
    let xs = taps(out_w, w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Resizes to `IMAGE_SIZE x IMAGE_SIZE` and maps gray levels to `[-1, 1]`.
pub fn preprocess(raw: &RawImage) -> Result<Tensor<f32>> {
    preprocess_to(raw, IMAGE_SIZE)
}

/// [`preprocess`] at an arbitrary square resolution.
pub fn preprocess_to(raw: &RawImage, size: usize) -> Result<Tensor<f32>> {
    if raw.width < 2 || raw.height < 2 {
        return Err(SiganError::shape("preprocess input", "at least 2x2", (raw.height, raw.width)));
    }
    if size == 0 {
        return Err(SiganError::Config("image size must be positive".into()));
    }
    let src: Vec<f64> = raw.pixels.iter().map(|&v| v as f64).collect();
    let resized = bilinear_resize(&src, raw.height, raw.width, size, size);
    let data = resized.into_iter().map(|v| normalize_value(v).clamp(-1.0, 1.0) as f32).collect();
    Ok(Tensor::new([size, size], data))
}

/// Converts an `H x W` grid in `[-1, 1]` back to 8-bit gray levels.
pub fn to_raw_image(pixels: &Tensor<f32>) -> RawImage {
    let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
    RawImage::new(w, h, pixels.data().iter().map(|&p| denormalize_to_u8(p)).collect())
}
