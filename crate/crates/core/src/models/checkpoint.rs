//! On-disk checkpoints.
//!
//! A checkpoint is a directory holding `meta.json` and one raw little-endian
//! `f32` file per named tensor. The metadata records every tensor's shape and
//! file, the architecture and role of each network, the training position and
//! a free-form config snapshot. Directories are written under a temporary
//! name and renamed into place, so a reader never sees a partial checkpoint.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sigan_tensor::Tensor;

use super::{
    DiscriminatorArch, DiscriminatorParams, DiscriminatorRole, GeneratorArch, GeneratorParams, GeneratorRole, ModelSet,
    ParamStore,
};
use crate::error::{Result, SiganError};

pub const FORMAT_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";
const KIND: &str = "sigan-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NetworkRecord {
    Generator { role: GeneratorRole, arch: GeneratorArch },
    Discriminator { role: DiscriminatorRole, arch: DiscriminatorArch },
}

impl NetworkRecord {
    /// Tensor-name prefix of this network inside the checkpoint.
    pub fn prefix(&self) -> &'static str {
        match self {
            NetworkRecord::Generator { role, .. } => role.short_name(),
            NetworkRecord::Discriminator { role, .. } => role.short_name(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub kind: String,
    pub epoch: u64,
    pub step: u64,
    pub config: serde_json::Value,
    pub networks: Vec<NetworkRecord>,
    pub tensors: Vec<TensorRecord>,
    #[serde(default)]
    pub extras: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

fn prefixed<'a>(prefix: &'a str, store: &'a ParamStore<f32>) -> impl Iterator<Item = (String, Tensor<f32>)> + 'a {
    store.iter().map(move |(k, v)| (format!("{prefix}/{k}"), v.clone()))
}

impl Checkpoint {
    pub fn new(epoch: u64, step: u64, config: serde_json::Value) -> Self {
        Self {
            meta: CheckpointMeta {
                format_version: FORMAT_VERSION,
                kind: KIND.into(),
                epoch,
                step,
                config,
                networks: Vec::new(),
                tensors: Vec::new(),
                extras: serde_json::Value::Null,
            },
            tensors: BTreeMap::new(),
        }
    }

    pub fn add_generator(&mut self, g: &GeneratorParams<f32>) {
        let record = NetworkRecord::Generator { role: g.role, arch: g.arch.clone() };
        self.tensors.extend(prefixed(record.prefix(), &g.store));
        self.meta.networks.push(record);
    }

    pub fn add_discriminator(&mut self, d: &DiscriminatorParams<f32>) {
        let record = NetworkRecord::Discriminator { role: d.role, arch: d.arch.clone() };
        self.tensors.extend(prefixed(record.prefix(), &d.store));
        self.meta.networks.push(record);
    }

    pub fn from_models(models: &ModelSet<f32>, epoch: u64, step: u64, config: serde_json::Value) -> Self {
        let mut ck = Self::new(epoch, step, config);
        ck.add_generator(&models.g);
        ck.add_generator(&models.f);
        ck.add_discriminator(&models.d_a);
        ck.add_discriminator(&models.d_b);
        ck
    }

    /// Tensors whose name starts with `prefix/`, with the prefix removed.
    pub fn tensors_under(&self, prefix: &str) -> BTreeMap<String, Tensor<f32>> {
        let p = format!("{prefix}/");
        self.tensors.iter().filter_map(|(k, v)| k.strip_prefix(&p).map(|rest| (rest.to_string(), v.clone()))).collect()
    }

    pub fn insert_under(&mut self, prefix: &str, tensors: &BTreeMap<String, Tensor<f32>>) {
        for (k, v) in tensors {
            self.tensors.insert(format!("{prefix}/{k}"), v.clone());
        }
    }

    pub fn generator(&self, role: GeneratorRole) -> Result<GeneratorParams<f32>> {
        let arch = self
            .meta
            .networks
            .iter()
            .find_map(|n| match n {
                NetworkRecord::Generator { role: r, arch } if *r == role => Some(arch.clone()),
                _ => None,
            })
            .ok_or_else(|| SiganError::RoleMismatch {
                expected: role.to_string(),
                actual: format!("checkpoint without generator {}", role.short_name()),
            })?;
        arch.validate()?;
        let store = ParamStore::from_tensors(&arch.param_specs(), self.tensors_under(role.short_name()))?;
        Ok(GeneratorParams { role, arch, store })
    }

    pub fn discriminator(&self, role: DiscriminatorRole) -> Result<DiscriminatorParams<f32>> {
        let arch = self
            .meta
            .networks
            .iter()
            .find_map(|n| match n {
                NetworkRecord::Discriminator { role: r, arch } if *r == role => Some(arch.clone()),
                _ => None,
            })
            .ok_or_else(|| SiganError::Checkpoint(format!("no discriminator {}", role.short_name())))?;
        arch.validate()?;
        let store = ParamStore::from_tensors(&arch.param_specs(), self.tensors_under(role.short_name()))?;
        Ok(DiscriminatorParams { role, arch, store })
    }

    pub fn models(&self) -> Result<ModelSet<f32>> {
        Ok(ModelSet {
            g: self.generator(GeneratorRole::DefectFreeToDefect)?,
            f: self.generator(GeneratorRole::DefectToDefectFree)?,
            d_a: self.discriminator(DiscriminatorRole::DefectFree)?,
            d_b: self.discriminator(DiscriminatorRole::Defective)?,
        })
    }

    /// Writes the checkpoint to `dir`, replacing any previous one atomically.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| SiganError::io(parent, e))?;
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("checkpoint");
        let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| SiganError::io(&tmp, e))?;
        }
        fs::create_dir_all(&tmp).map_err(|e| SiganError::io(&tmp, e))?;

        let mut meta = self.meta.clone();
        meta.tensors.clear();
        for (name, t) in &self.tensors {
            let file = format!("{name}.bin");
            let path = tmp.join(&file);
            if let Some(p) = path.parent() {
                fs::create_dir_all(p).map_err(|e| SiganError::io(p, e))?;
            }
            let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(&path, bytes).map_err(|e| SiganError::io(&path, e))?;
            meta.tensors.push(TensorRecord { name: name.clone(), shape: t.shape().to_vec(), file });
        }
        let meta_path = tmp.join(META_FILE);
        fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?).map_err(|e| SiganError::io(&meta_path, e))?;

        let old = parent.join(format!(".{name}.old-{}", std::process::id()));
        if dir.exists() {
            fs::rename(dir, &old).map_err(|e| SiganError::io(dir, e))?;
        }
        fs::rename(&tmp, dir).map_err(|e| SiganError::io(dir, e))?;
        if old.exists() {
            fs::remove_dir_all(&old).map_err(|e| SiganError::io(&old, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let text = fs::read(&meta_path).map_err(|e| SiganError::io(&meta_path, e))?;
        let meta: CheckpointMeta = serde_json::from_slice(&text)?;
        if meta.kind != KIND {
            return Err(SiganError::Checkpoint(format!("{} is not a model checkpoint", meta_path.display())));
        }
        if meta.format_version != FORMAT_VERSION {
            return Err(SiganError::Checkpoint(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                meta.format_version
            )));
        }
        let mut tensors = BTreeMap::new();
        for rec in &meta.tensors {
            let path: PathBuf = dir.join(&rec.file);
            let bytes = fs::read(&path).map_err(|e| SiganError::io(&path, e))?;
            let n: usize = rec.shape.iter().product();
            if bytes.len() != 4 * n {
                return Err(SiganError::Checkpoint(format!(
                    "{}: {} bytes for shape {:?}",
                    path.display(),
                    bytes.len(),
                    rec.shape
                )));
            }
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            tensors.insert(rec.name.clone(), Tensor::new(rec.shape.clone(), data));
        }
        Ok(Self { meta, tensors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_params, ModelConfig};

    #[test]
    fn round_trip_is_bitwise() {
        let cfg = ModelConfig {
            generator: GeneratorArch::small(32, vec![2, 4]),
            discriminator: DiscriminatorArch::table(1, 2),
        };
        let models: ModelSet = init_params(&cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck");
        Checkpoint::from_models(&models, 2, 40, serde_json::json!({"seed": 3})).save(&path).unwrap();
        // A second save replaces the first.
        Checkpoint::from_models(&models, 3, 60, serde_json::json!({"seed": 3})).save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.meta.epoch, 3);
        assert_eq!(loaded.models().unwrap(), models);
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn truncated_tensor_is_rejected() {
        let cfg = ModelConfig {
            generator: GeneratorArch::small(32, vec![2, 4]),
            discriminator: DiscriminatorArch::table(1, 2),
        };
        let models: ModelSet = init_params(&cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        Checkpoint::from_models(&models, 0, 0, serde_json::Value::Null).save(dir.path().join("ck").as_path()).unwrap();
        let victim = dir.path().join("ck/G/out.conv.bias.bin");
        fs::write(&victim, [0u8; 3]).unwrap();
        assert!(matches!(Checkpoint::load(&dir.path().join("ck")), Err(SiganError::Checkpoint(_))));
    }
}
