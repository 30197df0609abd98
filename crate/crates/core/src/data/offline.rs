use serde::{Deserialize, Serialize};
use sigan_tensor::Tensor;

use super::{ImageSample, Provenance};

/// Deterministic transforms used to enlarge the defective training set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OfflineTransform {
    /// Left-right reflection.
    Mirror,
    /// Top-bottom reflection.
    Flip,
    /// Per-image linear stretch of the pixel range onto `[-1, 1]`.
    ContrastNormalize,
}

impl OfflineTransform {
    fn tag(self) -> &'static str {
        match self {
            OfflineTransform::Mirror => "mirror",
            OfflineTransform::Flip => "flip",
            OfflineTransform::ContrastNormalize => "contrast",
        }
    }

    pub fn apply(self, pixels: &Tensor<f32>) -> Tensor<f32> {
        let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
        let src = pixels.data();
        match self {
            OfflineTransform::Mirror => Tensor::from_fn([h, w], |i| src[(i / w) * w + (w - 1 - i % w)]),
            OfflineTransform::Flip => Tensor::from_fn([h, w], |i| src[(h - 1 - i / w) * w + i % w]),
            OfflineTransform::ContrastNormalize => {
                let (lo, hi) = (pixels.min(), pixels.max());
                if hi <= lo {
                    return pixels.clone();
                }
                let range = hi - lo;
                pixels.map(|v| ((v - lo) / range) * 2.0 - 1.0)
            }
        }
    }
}

pub const DEFAULT_OFFLINE_TRANSFORMS: [OfflineTransform; 3] =
    [OfflineTransform::Mirror, OfflineTransform::Flip, OfflineTransform::ContrastNormalize];

/// Originals plus a mirrored, a flipped and a contrast-normalized copy of each.
pub fn augment_offline(defective: &[ImageSample]) -> Vec<ImageSample> {
    augment_offline_with(defective, &DEFAULT_OFFLINE_TRANSFORMS)
}

/// Output holds each original followed by its transformed copies, so its
/// length is `input.len() * (transforms.len() + 1)`.
pub fn augment_offline_with(defective: &[ImageSample], transforms: &[OfflineTransform]) -> Vec<ImageSample> {
    let mut out = Vec::with_capacity(defective.len() * (transforms.len() + 1));
    for sample in defective {
        out.push(sample.clone());
        for &t in transforms {
            out.push(ImageSample {
                id: format!("{}#{}", sample.id, t.tag()),
                pixels: t.apply(&sample.pixels),
                provenance: Provenance::OfflineAugmented,
                ..sample.clone()
            });
        }
    }
    out
}
