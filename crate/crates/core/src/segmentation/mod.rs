//! Defect segmentation by translating a defective image to its defect-free
//! counterpart, subtracting, and thresholding the difference.

mod mask;
mod metrics;
mod threshold;

use serde::{Deserialize, Serialize};
use sigan_tensor::Tensor;

use crate::data::{stack_samples, ImageSample};
use crate::error::{Result, SiganError};
use crate::models::{GeneratorRole, Translator};

pub use mask::{filter_small_components, read_mask, write_mask, Mask};
pub use metrics::{aggregate, evaluate_masks, AggregateMetrics, MacroMetrics, SegMetrics};
pub use threshold::{otsu_threshold, threshold_select, ThresholdRule, OTSU_BINS};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffPolarity {
    /// `|input - generated|`
    #[default]
    Absolute,
    /// `max(input - generated, 0)`
    SignedClipped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    Fixed,
    Otsu,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub threshold: ThresholdRule,
    pub polarity: DiffPolarity,
    /// Connected components (8-neighbourhood) smaller than this are dropped;
    /// 0 keeps everything.
    pub min_area: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationResult {
    pub input_id: String,
    /// Translator output, `H x W` in `[-1, 1]`.
    pub generated: Tensor<f32>,
    /// `H x W`, values in `[0, 2]`.
    pub diff_map: Tensor<f32>,
    pub mask: Mask,
    pub threshold_used: f64,
    pub threshold_mode: ThresholdMode,
}

/// Pixelwise difference of two equally shaped grids.
pub fn difference_map(input: &Tensor<f32>, generated: &Tensor<f32>, polarity: DiffPolarity) -> Tensor<f32> {
    match polarity {
        DiffPolarity::Absolute => input.zip_map(generated, |x, y| (x - y).abs()),
        DiffPolarity::SignedClipped => input.zip_map(generated, |x, y| (x - y).max(0.0)),
    }
}

fn check_role(translator: &dyn Translator) -> Result<()> {
    if translator.role() != GeneratorRole::DefectToDefectFree {
        return Err(SiganError::RoleMismatch {
            expected: GeneratorRole::DefectToDefectFree.to_string(),
            actual: translator.role().to_string(),
        });
    }
    Ok(())
}

fn finish(sample: &ImageSample, generated: Tensor<f32>, cfg: &SegmentConfig) -> SegmentationResult {
    let diff_map = difference_map(&sample.pixels, &generated, cfg.polarity);
    let threshold_used = threshold_select(&diff_map, &cfg.threshold);
    let mut mask = Mask::above(&diff_map, threshold_used);
    if cfg.min_area > 0 {
        mask = filter_small_components(&mask, cfg.min_area);
    }
    let threshold_mode = match cfg.threshold {
        ThresholdRule::Fixed { .. } => ThresholdMode::Fixed,
        ThresholdRule::Otsu => ThresholdMode::Otsu,
    };
    SegmentationResult { input_id: sample.id.clone(), generated, diff_map, mask, threshold_used, threshold_mode }
}

/// Segments one defective image with a defect-to-defect-free translator.
pub fn segment(
    defective: &ImageSample,
    translator: &dyn Translator,
    cfg: &SegmentConfig,
) -> Result<SegmentationResult> {
    Ok(segment_all(std::slice::from_ref(defective), translator, cfg, 1)?.remove(0))
}

/// Segments many images, translating `batch_size` at a time. Results keep
/// the input order.
pub fn segment_all(
    samples: &[ImageSample],
    translator: &dyn Translator,
    cfg: &SegmentConfig,
    batch_size: usize,
) -> Result<Vec<SegmentationResult>> {
    check_role(translator)?;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let batch = stack_samples(chunk);
        let generated = translator.translate(&batch)?;
        if generated.shape() != batch.shape() {
            return Err(SiganError::shape("translator output", batch.shape(), generated.shape()));
        }
        let (_, _, h, w) = generated.dims4();
        for (i, sample) in chunk.iter().enumerate() {
            let grid = Tensor::new([h, w], generated.batch_item(i).to_vec());
            out.push(finish(sample, grid, cfg));
        }
    }
    Ok(out)
}
