//! Generators, discriminators and their persistence.

mod arch;
mod checkpoint;
mod discriminator;
mod generator;
mod nonlocal;
mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sigan_tensor::{Float, Tensor};

use crate::error::Result;

pub use arch::{
    DiscLayer, DiscriminatorArch, DiscriminatorRole, GeneratorArch, GeneratorRole, NonLocalConfig, NormKind, ParamKind,
    ParamSpec,
};
pub use checkpoint::{Checkpoint, CheckpointMeta, NetworkRecord, TensorRecord, FORMAT_VERSION, META_FILE};
pub use discriminator::{discriminator_forward, DiscriminatorParams};
pub use generator::{generator_forward, GeneratorParams};
pub use nonlocal::{attention_matrix, nonlocal_forward};
pub use params::{ForwardCtx, Mode, ParamStore, BN_MOMENTUM, INIT_STD, NORM_EPS};

/// Anything that maps an image batch from one domain to the other.
///
/// Implemented by trained generators; tests substitute closed-form oracles.
pub trait Translator {
    fn role(&self) -> GeneratorRole;

    /// Maps a `B x C x H x W` batch in `[-1, 1]` to a batch of the same shape.
    fn translate(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>>;
}

/// Architecture of all four networks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub generator: GeneratorArch,
    pub discriminator: DiscriminatorArch,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.discriminator.in_channels != self.generator.out_channels
            || self.generator.in_channels != self.generator.out_channels
        {
            return Err(crate::error::SiganError::Config(
                "generator input/output and discriminator input channel counts must agree".into(),
            ));
        }
        let s = self.generator.image_size;
        if self.discriminator.output_size(s, s).is_none() {
            return Err(crate::error::SiganError::Config(format!("discriminator does not fit {s}x{s} images")));
        }
        Ok(())
    }
}

/// The two generators and two discriminators of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSet<T = f32> {
    pub g: GeneratorParams<T>,
    pub f: GeneratorParams<T>,
    pub d_a: DiscriminatorParams<T>,
    pub d_b: DiscriminatorParams<T>,
}

impl<T: Float> ModelSet<T> {
    pub fn generator(&self, role: GeneratorRole) -> &GeneratorParams<T> {
        match role {
            GeneratorRole::DefectFreeToDefect => &self.g,
            GeneratorRole::DefectToDefectFree => &self.f,
        }
    }

    pub fn discriminator(&self, role: DiscriminatorRole) -> &DiscriminatorParams<T> {
        match role {
            DiscriminatorRole::DefectFree => &self.d_a,
            DiscriminatorRole::Defective => &self.d_b,
        }
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig { generator: self.g.arch.clone(), discriminator: self.d_a.arch.clone() }
    }

    pub fn cast<U: Float>(&self) -> ModelSet<U> {
        ModelSet { g: self.g.cast(), f: self.f.cast(), d_a: self.d_a.cast(), d_b: self.d_b.cast() }
    }

    pub fn all_finite(&self) -> bool {
        [&self.g.store, &self.f.store, &self.d_a.store, &self.d_b.store].iter().all(|s| s.all_finite())
    }
}

/// Seeded initialization of `G`, `F`, `D_a` and `D_b`, in that order, from
/// one random stream.
pub fn init_params<T: Float>(cfg: &ModelConfig, seed: u64) -> Result<ModelSet<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ModelSet {
        g: GeneratorParams::init(GeneratorRole::DefectFreeToDefect, cfg.generator.clone(), &mut rng)?,
        f: GeneratorParams::init(GeneratorRole::DefectToDefectFree, cfg.generator.clone(), &mut rng)?,
        d_a: DiscriminatorParams::init(DiscriminatorRole::DefectFree, cfg.discriminator.clone(), &mut rng)?,
        d_b: DiscriminatorParams::init(DiscriminatorRole::Defective, cfg.discriminator.clone(), &mut rng)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig { generator: GeneratorArch::small(32, vec![4, 8]), discriminator: DiscriminatorArch::table(1, 4) }
    }

    #[test]
    fn same_seed_same_weights() {
        let a: ModelSet = init_params(&tiny(), 5).unwrap();
        let b: ModelSet = init_params(&tiny(), 5).unwrap();
        let c: ModelSet = init_params(&tiny(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.g.store, c.g.store);
        assert_ne!(a.g.store, a.f.store);
    }

    #[test]
    fn init_statistics() {
        let m: ModelSet<f64> = init_params(&ModelConfig::default(), 0).unwrap();
        let w = m.g.store.get("down3.conv.weight").unwrap();
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let std = (w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-3, "{mean}");
        assert!((std - INIT_STD).abs() < 1e-3, "{std}");
        assert!(m.d_b.store.get("layer4.conv.bias").unwrap().data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn invalid_width_is_a_config_error() {
        let mut cfg = tiny();
        cfg.generator.widths[1] = 0;
        assert!(matches!(init_params::<f32>(&cfg, 0), Err(crate::error::SiganError::Config(_))));
    }
}
