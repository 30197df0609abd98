//! Dataset loading, preprocessing, offline augmentation and unpaired sampling.
//!
//! Images live on disk as `<root>/<split>/<class>/*.png|*.jpg` with
//! `class` one of `defect_free`, `crack`, `finger_interruption`.

mod image_io;
mod loader;
mod offline;
mod preprocess;
mod sampler;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sigan_tensor::Tensor;

use crate::error::{Result, SiganError};

pub use image_io::{read_gray, write_gray_png, RawImage};
pub use loader::{list_images, load_dataset, load_image_files, DatasetLoader, IMAGE_EXTENSIONS};
pub use offline::{augment_offline, augment_offline_with, OfflineTransform, DEFAULT_OFFLINE_TRANSFORMS};
pub use preprocess::{
    bilinear_resize, denormalize_to_u8, normalize_value, preprocess, preprocess_to, to_raw_image, IMAGE_SIZE,
};
pub use sampler::{BatchPair, SamplerState, UnpairedSampler};

/// Image class. Domain A is defect-free; domain B is the defective classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    DefectFree,
    Crack,
    FingerInterruption,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::DefectFree, Domain::Crack, Domain::FingerInterruption];

    pub fn dir_name(self) -> &'static str {
        match self {
            Domain::DefectFree => "defect_free",
            Domain::Crack => "crack",
            Domain::FingerInterruption => "finger_interruption",
        }
    }

    pub fn is_defective(self) -> bool {
        self != Domain::DefectFree
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for Domain {
    type Err = SiganError;

    fn from_str(s: &str) -> Result<Self> {
        Domain::ALL.into_iter().find(|d| d.dir_name() == s).ok_or_else(|| {
            SiganError::Config(format!("unknown class {s:?} (expected defect_free, crack or finger_interruption)"))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Generated,
    OfflineAugmented,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = SiganError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(SiganError::Config(format!("unknown split {s:?}"))),
        }
    }
}

/// One preprocessed grayscale image.
#[derive(Clone, Debug)]
pub struct ImageSample {
    pub id: String,
    pub domain: Domain,
    /// `H x W` grid in `[-1, 1]`.
    pub pixels: Tensor<f32>,
    /// `(height, width)` before resizing.
    pub original_size: (usize, usize),
    pub provenance: Provenance,
    pub source_path: PathBuf,
}

impl ImageSample {
    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }

    /// The pixels as a `1 x 1 x H x W` batch.
    pub fn as_batch(&self) -> Tensor<f32> {
        self.pixels.clone().reshape([1, 1, self.height(), self.width()])
    }

    pub fn in_range(&self) -> bool {
        self.pixels.data().iter().all(|v| (-1.0..=1.0).contains(v))
    }
}

/// Stacks equally sized samples into a `B x 1 x H x W` batch.
pub fn stack_samples<'a>(samples: impl IntoIterator<Item = &'a ImageSample>) -> Tensor<f32> {
    let grids: Vec<&Tensor<f32>> = samples.into_iter().map(|s| &s.pixels).collect();
    let stacked = Tensor::stack(&grids);
    let (b, h, w) = (stacked.shape()[0], stacked.shape()[1], stacked.shape()[2]);
    stacked.reshape([b, 1, h, w])
}

/// Per-class tallies split by provenance.
pub type ClassCounts = BTreeMap<Domain, BTreeMap<Provenance, usize>>;

/// All samples of one split, grouped into the two translation domains.
#[derive(Clone, Debug)]
pub struct DomainCollection {
    pub split: Split,
    defect_free: Vec<ImageSample>,
    defective: Vec<ImageSample>,
    counts: ClassCounts,
}

impl DomainCollection {
    pub fn new(split: Split, defect_free: Vec<ImageSample>, defective: Vec<ImageSample>) -> Result<Self> {
        if let Some(s) = defect_free.iter().find(|s| s.domain.is_defective()) {
            return Err(SiganError::Config(format!("{} is defective but listed as defect-free", s.id)));
        }
        if let Some(s) = defective.iter().find(|s| !s.domain.is_defective()) {
            return Err(SiganError::Config(format!("{} is defect-free but listed as defective", s.id)));
        }
        if split == Split::Test {
            if let Some(s) = defect_free.iter().chain(&defective).find(|s| s.provenance == Provenance::Generated) {
                return Err(SiganError::Config(format!("generated sample {} cannot enter the test split", s.id)));
            }
        }
        let mut counts = ClassCounts::new();
        for s in defect_free.iter().chain(&defective) {
            *counts.entry(s.domain).or_default().entry(s.provenance).or_default() += 1;
        }
        Ok(Self { split, defect_free, defective, counts })
    }

    pub fn defect_free(&self) -> &[ImageSample] {
        &self.defect_free
    }

    pub fn defective(&self) -> &[ImageSample] {
        &self.defective
    }

    pub fn counts(&self) -> &ClassCounts {
        &self.counts
    }

    /// Number of samples of a class, all provenances.
    pub fn count(&self, domain: Domain) -> usize {
        self.counts.get(&domain).map_or(0, |m| m.values().sum())
    }

    pub fn count_with(&self, domain: Domain, provenance: Provenance) -> usize {
        self.counts.get(&domain).and_then(|m| m.get(&provenance)).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.defect_free.len() + self.defective.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &ImageSample> {
        self.defect_free.iter().chain(&self.defective)
    }

    /// Keeps only the defective samples of `class`.
    pub fn restrict_defective(self, class: Domain) -> Result<Self> {
        let defective = self.defective.into_iter().filter(|s| s.domain == class).collect();
        Self::new(self.split, self.defect_free, defective)
    }

    /// Replaces the defective list, e.g. after offline augmentation.
    pub fn with_defective(self, defective: Vec<ImageSample>) -> Result<Self> {
        Self::new(self.split, self.defect_free, defective)
    }

    /// Appends samples; they must respect the domain grouping.
    pub fn extend(self, extra: Vec<ImageSample>) -> Result<Self> {
        let (mut free, mut defective) = (self.defect_free, self.defective);
        for s in extra {
            if s.domain.is_defective() {
                defective.push(s);
            } else {
                free.push(s);
            }
        }
        Self::new(self.split, free, defective)
    }
}

/// Errors when two collections share a sample id.
pub fn check_disjoint(a: &DomainCollection, b: &DomainCollection) -> Result<()> {
    let ids: std::collections::HashSet<&str> = a.iter().map(|s| s.id.as_str()).collect();
    match b.iter().find(|s| ids.contains(s.id.as_str())) {
        Some(s) => Err(SiganError::Config(format!("sample {} appears in both splits", s.id))),
        None => Ok(()),
    }
}
