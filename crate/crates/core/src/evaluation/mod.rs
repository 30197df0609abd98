//! Frechet distance between real and generated image groups over features
//! from a pluggable extractor.

mod extractor;
mod fid;
pub mod inception;

pub use extractor::{extract_features, FeatureExtractor, GrayHistogram};
pub use fid::{fid, fid_from_stats, FeatureStats, FidReport, FidSummary, SMALL_SAMPLE_WARNING};
pub use inception::InceptionV3;

use crate::error::{Result, SiganError};

pub const DEFAULT_EXTRACTOR: &str = "inception_v3";

/// Resolves an extractor name: `inception_v3` (pretrained weights from the
/// cache directory) or `histogram[:BINS]`.
pub fn extractor_by_id(id: &str) -> Result<Box<dyn FeatureExtractor>> {
    match id.split_once(':').unwrap_or((id, "")) {
        ("inception_v3", "") => Ok(Box::new(InceptionV3::from_cache()?)),
        ("histogram", "") => Ok(Box::new(GrayHistogram::default())),
        ("histogram", bins) => match bins.parse::<usize>() {
            Ok(bins) if bins >= 1 => Ok(Box::new(GrayHistogram { bins })),
            _ => Err(SiganError::Config(format!("invalid histogram bin count {bins:?}"))),
        },
        _ => Err(SiganError::Config(format!("unknown extractor {id:?} (expected inception_v3 or histogram[:BINS])"))),
    }
}

/// Extracts features for both groups and scores them.
pub fn fid_images(
    real: &[crate::data::ImageSample],
    fake: &[crate::data::ImageSample],
    extractor: &dyn FeatureExtractor,
) -> Result<FidReport> {
    let fr = extract_features(real, extractor)?;
    let ff = extract_features(fake, extractor)?;
    fid(&fr, &ff, &extractor.id())
}
