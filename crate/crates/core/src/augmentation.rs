//! Synthetic defective images from defect-free ones.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    preprocess_to, read_gray, stack_samples, to_raw_image, write_gray_png, Domain, DomainCollection, ImageSample,
    Provenance, Split,
};
use crate::error::{Result, SiganError};
use crate::models::{GeneratorRole, Translator};

/// Name of the manifest inside an augmentation output directory.
pub const MANIFEST_FILE: &str = "manifest.json";

const GENERATION_BATCH: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub output_path: PathBuf,
    pub source_id: String,
    pub generator_checkpoint: String,
    pub target_class: Domain,
    pub provenance: Provenance,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTally {
    pub real: usize,
    pub fake: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationManifest {
    pub entries: Vec<ManifestEntry>,
    pub counts: BTreeMap<Domain, ClassTally>,
    /// Directory the entry paths are relative to.
    #[serde(skip)]
    pub root: PathBuf,
}

impl AugmentationManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read(path).map_err(|e| SiganError::io(path, e))?;
        let mut m: Self = serde_json::from_slice(&text)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    /// Writes `manifest.json` into `self.root`.
    pub fn write(&self) -> Result<PathBuf> {
        let path = self.root.join(MANIFEST_FILE);
        let tmp = self.root.join(format!(".{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(self)?).map_err(|e| SiganError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| SiganError::io(&path, e))?;
        Ok(path)
    }

    pub fn fake_count(&self) -> usize {
        self.counts.values().map(|t| t.fake).sum()
    }

    /// Fills the `real` tallies from the collection the fakes will join.
    pub fn with_real_counts(mut self, base: &DomainCollection) -> Self {
        for (class, tally) in self.counts.iter_mut() {
            tally.real = base.count_with(*class, Provenance::Real);
        }
        self
    }
}

#[derive(Clone, Debug)]
pub struct GenerationOptions {
    pub target_class: Domain,
    pub seed: u64,
    /// Draw sources with replacement once the pool is exhausted.
    pub with_replacement: bool,
    /// Recorded in each manifest entry.
    pub checkpoint_label: String,
}

fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SiganError::io(dir, e))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| SiganError::io(dir, e))?;
    fs::remove_file(&probe).map_err(|e| SiganError::io(&probe, e))
}

/// Picks `count` source indices: a shuffled pass without replacement, then
/// uniform draws with replacement if allowed.
fn choose_sources(pool: usize, count: usize, opts: &GenerationOptions) -> Result<Vec<usize>> {
    if count > pool && !opts.with_replacement {
        return Err(SiganError::Config(format!(
            "{count} images requested from {pool} defect-free inputs; enable sampling with replacement"
        )));
    }
    if count > 0 && pool == 0 {
        return Err(SiganError::Config("no defect-free inputs to generate from".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..pool).collect();
    order.shuffle(&mut rng);
    order.truncate(count);
    while order.len() < count {
        order.push(rng.random_range(0..pool));
    }
    Ok(order)
}

/// Translates defect-free images with `generator` and writes `count` 8-bit
/// PNGs to `<out_dir>/<target_class>/` plus `<out_dir>/manifest.json`.
pub fn generate_defective(
    defect_free: &[ImageSample],
    generator: &dyn Translator,
    count: usize,
    out_dir: &Path,
    opts: &GenerationOptions,
) -> Result<AugmentationManifest> {
    if generator.role() != GeneratorRole::DefectFreeToDefect {
        return Err(SiganError::RoleMismatch {
            expected: GeneratorRole::DefectFreeToDefect.to_string(),
            actual: generator.role().to_string(),
        });
    }
    if !opts.target_class.is_defective() {
        return Err(SiganError::Config("generated images must target a defective class".into()));
    }
    if let Some(s) = defect_free.iter().find(|s| s.domain.is_defective()) {
        return Err(SiganError::Config(format!("{} is not a defect-free input", s.id)));
    }
    let class_dir = out_dir.join(opts.target_class.dir_name());
    ensure_writable(&class_dir)?;

    let mut picks = choose_sources(defect_free.len(), count, opts)?;
    picks.sort_by(|&a, &b| defect_free[a].id.cmp(&defect_free[b].id));

    let mut entries = Vec::with_capacity(count);
    for (chunk_no, chunk) in picks.chunks(GENERATION_BATCH).enumerate() {
        let batch = stack_samples(chunk.iter().map(|&i| &defect_free[i]));
        let out = generator.translate(&batch)?;
        if out.shape() != batch.shape() {
            return Err(SiganError::shape("generator output", batch.shape(), out.shape()));
        }
        let (_, _, h, w) = out.dims4();
        for (k, &src) in chunk.iter().enumerate() {
            let index = chunk_no * GENERATION_BATCH + k;
            let rel = PathBuf::from(opts.target_class.dir_name()).join(format!("gen_{index:05}.png"));
            let grid = sigan_tensor::Tensor::new([h, w], out.batch_item(k).to_vec());
            write_gray_png(&out_dir.join(&rel), &to_raw_image(&grid))?;
            entries.push(ManifestEntry {
                output_path: rel,
                source_id: defect_free[src].id.clone(),
                generator_checkpoint: opts.checkpoint_label.clone(),
                target_class: opts.target_class,
                provenance: Provenance::Generated,
            });
        }
    }
    let mut counts = BTreeMap::new();
    counts.insert(opts.target_class, ClassTally { real: 0, fake: entries.len() });
    let manifest = AugmentationManifest { entries, counts, root: out_dir.to_path_buf() };
    manifest.write()?;
    Ok(manifest)
}

/// Adds the generated images of `manifest` to a training collection.
pub fn merge_dataset(base: DomainCollection, manifest: &AugmentationManifest) -> Result<DomainCollection> {
    if base.split == Split::Test {
        return Err(SiganError::Config("generated images never enter the test split".into()));
    }
    let size = base.iter().next().map_or(crate::data::IMAGE_SIZE, |s| s.height());
    let mut extra = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        if !entry.target_class.is_defective() {
            return Err(SiganError::Config(format!(
                "manifest entry {} targets a defect-free class",
                entry.output_path.display()
            )));
        }
        let path = manifest.root.join(&entry.output_path);
        if !path.is_file() {
            return Err(SiganError::DatasetLayout { path });
        }
        let raw = read_gray(&path)?;
        let stem = entry.output_path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        extra.push(ImageSample {
            id: format!("generated/{}/{stem}", entry.target_class.dir_name()),
            domain: entry.target_class,
            pixels: preprocess_to(&raw, size)?,
            original_size: (raw.height, raw.width),
            provenance: Provenance::Generated,
            source_path: path,
        });
    }
    base.extend(extra)
}
