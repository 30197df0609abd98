use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat};

use crate::error::{Result, SiganError};

/// 8-bit single-channel image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(width * height, pixels.len(), "raw image buffer size");
        Self { width, height, pixels }
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self::new(width, height, vec![value; width * height])
    }
}

/// Reads an image file as 8-bit grayscale. Colour or 16-bit inputs are
/// converted to 8-bit luminance with a warning.
pub fn read_gray(path: &Path) -> Result<RawImage> {
    let img = image::open(path)
        .map_err(|e| SiganError::CorruptImages { files: vec![(path.to_path_buf(), e.to_string())] })?;
    let gray = match img {
        DynamicImage::ImageLuma8(g) => g,
        other => {
            log::warn!("{}: {:?} input converted to 8-bit luminance", path.display(), other.color());
            other.to_luma8()
        }
    };
    let (w, h) = gray.dimensions();
    Ok(RawImage::new(w as usize, h as usize, gray.into_raw()))
}

/// Writes a lossless 8-bit grayscale PNG, creating parent directories.
pub fn write_gray_png(path: &Path, image: &RawImage) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| SiganError::io(parent, e))?;
    }
    let buf = GrayImage::from_raw(image.width as u32, image.height as u32, image.pixels.clone())
        .expect("buffer length checked by RawImage");
    buf.save_with_format(path, ImageFormat::Png).map_err(|e| SiganError::io(path, std::io::Error::other(e.to_string())))
}
