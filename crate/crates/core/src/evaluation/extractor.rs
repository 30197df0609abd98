use nalgebra::DMatrix;
use sigan_tensor::Tensor;

use crate::data::ImageSample;
use crate::error::{Result, SiganError};

/// Maps one `H x W` grayscale grid in `[-1, 1]` to a fixed-length vector.
pub trait FeatureExtractor {
    /// Identifies the network and layer; stored with every report.
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn extract(&self, pixels: &Tensor<f32>) -> Result<Vec<f64>>;
}

/// Features of every image, one row each.
pub fn extract_features(images: &[ImageSample], extractor: &dyn FeatureExtractor) -> Result<DMatrix<f64>> {
    if images.is_empty() {
        return Err(SiganError::Extractor("no images to extract features from".into()));
    }
    let dim = extractor.dim();
    let mut data = Vec::with_capacity(images.len() * dim);
    for image in images {
        let row = extractor.extract(&image.pixels)?;
        if row.len() != dim {
            return Err(SiganError::Extractor(format!(
                "{} returned {} features for {} (expected {dim})",
                extractor.id(),
                row.len(),
                image.id
            )));
        }
        data.extend(row);
    }
    Ok(DMatrix::from_row_slice(images.len(), dim, &data))
}

/// Normalized intensity histogram. Cheap and weight-free; its scores are not
/// comparable with network-feature FID.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GrayHistogram {
    pub bins: usize,
}

impl Default for GrayHistogram {
    fn default() -> Self {
        Self { bins: 32 }
    }
}

impl FeatureExtractor for GrayHistogram {
    fn id(&self) -> String {
        format!("gray-histogram-{}", self.bins)
    }

    fn dim(&self) -> usize {
        self.bins
    }

    fn extract(&self, pixels: &Tensor<f32>) -> Result<Vec<f64>> {
        let mut hist = vec![0.0; self.bins];
        for &v in pixels.data() {
            let u = ((v as f64 + 1.0) * 0.5).clamp(0.0, 1.0);
            hist[((u * self.bins as f64) as usize).min(self.bins - 1)] += 1.0;
        }
        let n = pixels.len().max(1) as f64;
        Ok(hist.into_iter().map(|c| c / n).collect())
    }
}
