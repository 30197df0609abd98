use serde::{Deserialize, Serialize};

use crate::data::Domain;
use crate::error::{Result, SiganError};
use crate::losses::{AdversarialKind, GeneratorObjective, LossConfig, LossWeights, Reduction};
use crate::models::{DiscriminatorArch, GeneratorArch, ModelConfig, NonLocalConfig, NormKind};

use super::optim::AdamConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    #[default]
    GeneratorsFirst,
    DiscriminatorsFirst,
}

/// Training configuration. Serialized as a flat key-value document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub epochs_constant: u64,
    pub epochs_decay: u64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub optimizer: String,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub image_size: usize,
    /// Epochs between checkpoints; a final checkpoint is always written.
    pub checkpoint_every: u64,
    /// Defective class paired with the defect-free domain.
    pub defect_class: Domain,
    /// Mirror, flip and contrast copies of the defective training images.
    pub offline_augment: bool,
    pub generator_widths: Vec<usize>,
    pub norm: NormKind,
    pub nonlocal: bool,
    pub nonlocal_max_positions: usize,
    /// Width of the 1x1 projection around the attention; 0 disables it.
    pub nonlocal_projection: usize,
    pub nonlocal_learned_qkv: bool,
    pub disc_base_width: usize,
    pub leaky_slope: f64,
    pub adversarial: AdversarialKind,
    pub generator_objective: GeneratorObjective,
    pub l1_reduction: Reduction,
    pub update_order: UpdateOrder,
    pub history_pool: bool,
    pub history_size: usize,
    /// Global gradient-norm limit per optimizer; 0 disables clipping.
    pub grad_clip: f64,
    /// Stop after this many steps; 0 runs the full schedule.
    pub max_steps: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = GeneratorArch::default();
        Self {
            batch_size: 4,
            base_lr: 2e-4,
            epochs_constant: 30,
            epochs_decay: 30,
            lambda1: 10.0,
            lambda2: 5.0,
            optimizer: "adam".into(),
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            image_size: 256,
            checkpoint_every: 10,
            defect_class: Domain::Crack,
            offline_augment: true,
            generator_widths: arch.widths,
            norm: NormKind::Batch,
            nonlocal: true,
            nonlocal_max_positions: 4096,
            nonlocal_projection: 64,
            nonlocal_learned_qkv: false,
            disc_base_width: 64,
            leaky_slope: 0.2,
            adversarial: AdversarialKind::Log,
            generator_objective: GeneratorObjective::NonSaturating,
            l1_reduction: Reduction::Mean,
            update_order: UpdateOrder::GeneratorsFirst,
            history_pool: false,
            history_size: 50,
            grad_clip: 0.0,
            max_steps: 0,
        }
    }
}

fn parse_override(raw: &str) -> Result<(String, toml::Value)> {
    let (key, value) =
        raw.split_once('=').ok_or_else(|| SiganError::Config(format!("override {raw:?} is not key=value")))?;
    let key = key.trim().to_string();
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key, parsed))
}

impl TrainConfig {
    /// Defaults, overlaid by the config file, overlaid by `key=value`
    /// overrides.
    pub fn resolve(file: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut table = toml::Table::try_from(Self::default()).map_err(|e| SiganError::Config(e.to_string()))?;
        if let Some(text) = file {
            let layer: toml::Table = text.parse().map_err(|e: toml::de::Error| SiganError::Config(e.to_string()))?;
            table.extend(layer);
        }
        for raw in overrides {
            let (k, v) = parse_override(raw)?;
            table.insert(k, v);
        }
        let cfg: Self =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| SiganError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn total_epochs(&self) -> u64 {
        self.epochs_constant + self.epochs_decay
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { lambda1: self.lambda1, lambda2: self.lambda2 }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            adversarial: self.adversarial,
            generator_objective: self.generator_objective,
            reduction: self.l1_reduction,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon }
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut discriminator = DiscriminatorArch::table(1, self.disc_base_width);
        discriminator.leaky_slope = self.leaky_slope;
        ModelConfig {
            generator: GeneratorArch {
                in_channels: 1,
                out_channels: 1,
                image_size: self.image_size,
                widths: self.generator_widths.clone(),
                norm: self.norm,
                nonlocal: NonLocalConfig {
                    enabled: self.nonlocal,
                    max_positions: self.nonlocal_max_positions,
                    projection_channels: (self.nonlocal_projection > 0).then_some(self.nonlocal_projection),
                    learned_qkv: self.nonlocal_learned_qkv,
                },
            },
            discriminator,
        }
    }

    // Negated comparisons so that NaN fails them.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(SiganError::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return fail(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if self.total_epochs() == 0 {
            return fail("at least one epoch is required".into());
        }
        if self.optimizer != "adam" {
            return fail(format!("unknown optimizer {:?}; only adam is supported", self.optimizer));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return fail("adam needs beta1, beta2 in [0, 1) and epsilon > 0".into());
        }
        if !self.defect_class.is_defective() {
            return fail("defect_class must be crack or finger_interruption".into());
        }
        if self.checkpoint_every == 0 {
            return fail("checkpoint_every must be at least 1".into());
        }
        if self.history_pool && self.history_size == 0 {
            return fail("history_size must be positive when the history pool is on".into());
        }
        if !(self.grad_clip >= 0.0) {
            return fail("grad_clip must be nonnegative".into());
        }
        self.loss_weights().validate()?;
        self.model_config().validate()
    }
}
