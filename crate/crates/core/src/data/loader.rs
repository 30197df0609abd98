use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::{preprocess_to, read_gray, Domain, DomainCollection, ImageSample, Provenance, Split, IMAGE_SIZE};
use crate::augmentation::{AugmentationManifest, MANIFEST_FILE};
use crate::error::{Result, SiganError};

/// File extensions recognised as images (case-insensitive).
pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Loads one split of a dataset directory.
///
/// Files listed in a `manifest.json` inside the split directory are tagged
/// [`Provenance::Generated`]; such a manifest is rejected for the test split.
#[derive(Clone, Debug)]
pub struct DatasetLoader {
    pub image_size: usize,
    pub classes: Vec<Domain>,
}

impl Default for DatasetLoader {
    fn default() -> Self {
        Self { image_size: IMAGE_SIZE, classes: Domain::ALL.to_vec() }
    }
}

/// Loads every class of `split` at the default resolution.
pub fn load_dataset(root: &Path, split: Split) -> Result<DomainCollection> {
    DatasetLoader::default().load(root, split)
}

/// Image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| SiganError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| SiganError::io(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if is_image && path.is_file() {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Loads a single image file, or every image directly inside a directory,
/// as samples of `domain` at `size x size`. Ids are the file stems.
pub fn load_image_files(path: &Path, size: usize, domain: Domain) -> Result<Vec<ImageSample>> {
    let files = if path.is_dir() {
        list_images(path)?
    } else if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        return Err(SiganError::DatasetLayout { path: path.to_path_buf() });
    };
    if files.is_empty() {
        return Err(SiganError::Config(format!("no images in {}", path.display())));
    }
    let mut samples = Vec::with_capacity(files.len());
    let mut failures = Vec::new();
    for file in files {
        let raw = match read_gray(&file) {
            Ok(raw) => raw,
            Err(SiganError::CorruptImages { files }) => {
                failures.extend(files);
                continue;
            }
            Err(e) => return Err(e),
        };
        samples.push(ImageSample {
            id: file.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string(),
            domain,
            pixels: preprocess_to(&raw, size)?,
            original_size: (raw.height, raw.width),
            provenance: Provenance::Real,
            source_path: file,
        });
    }
    if !failures.is_empty() {
        return Err(SiganError::CorruptImages { files: failures });
    }
    Ok(samples)
}

impl DatasetLoader {
    pub fn with_classes(mut self, classes: &[Domain]) -> Self {
        self.classes = classes.to_vec();
        self
    }

    pub fn with_image_size(mut self, size: usize) -> Self {
        self.image_size = size;
        self
    }

    pub fn load(&self, root: &Path, split: Split) -> Result<DomainCollection> {
        let split_dir = root.join(split.dir_name());
        if !split_dir.is_dir() {
            return Err(SiganError::DatasetLayout { path: split_dir });
        }
        let generated = self.generated_files(&split_dir, split)?;

        let mut free = Vec::new();
        let mut defective = Vec::new();
        let mut failures = Vec::new();
        for &class in &self.classes {
            let class_dir = split_dir.join(class.dir_name());
            if !class_dir.is_dir() {
                return Err(SiganError::DatasetLayout { path: class_dir });
            }
            let files = list_images(&class_dir)?;
            if files.is_empty() {
                return Err(SiganError::Config(format!("empty domain: no images in {}", class_dir.display())));
            }
            for path in files {
                let raw = match read_gray(&path) {
                    Ok(raw) => raw,
                    Err(SiganError::CorruptImages { files }) => {
                        failures.extend(files);
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                let provenance =
                    if generated.contains(&canonical(&path)) { Provenance::Generated } else { Provenance::Real };
                let sample = ImageSample {
                    id: format!("{}/{}/{}", split.dir_name(), class.dir_name(), stem),
                    domain: class,
                    pixels: preprocess_to(&raw, self.image_size)?,
                    original_size: (raw.height, raw.width),
                    provenance,
                    source_path: path,
                };
                if class.is_defective() {
                    defective.push(sample);
                } else {
                    free.push(sample);
                }
            }
        }
        if !failures.is_empty() {
            return Err(SiganError::CorruptImages { files: failures });
        }
        DomainCollection::new(split, free, defective)
    }

    fn generated_files(&self, split_dir: &Path, split: Split) -> Result<HashSet<PathBuf>> {
        let manifest_path = split_dir.join(MANIFEST_FILE);
        if !manifest_path.is_file() {
            return Ok(HashSet::new());
        }
        let manifest = AugmentationManifest::read(&manifest_path)?;
        if split == Split::Test && !manifest.entries.is_empty() {
            return Err(SiganError::Config(format!(
                "{} lists generated images; generated samples never enter the test split",
                manifest_path.display()
            )));
        }
        Ok(manifest.entries.iter().map(|e| canonical(&split_dir.join(&e.output_path))).collect())
    }
}

fn canonical(path: &Path) -> PathBuf {
    path.canonicalize().unwrap_or_else(|_| path.to_path_buf())
}
