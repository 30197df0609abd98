//! Architecture descriptors and the parameter layouts they imply.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SiganError};

/// Which translation a generator performs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GeneratorRole {
    /// `G`: defect-free (domain A) to defective (domain B).
    #[serde(rename = "G_defectfree_to_defect")]
    DefectFreeToDefect,
    /// `F`: defective (domain B) to defect-free (domain A).
    #[serde(rename = "F_defect_to_defectfree")]
    DefectToDefectFree,
}

impl GeneratorRole {
    pub fn short_name(self) -> &'static str {
        match self {
            GeneratorRole::DefectFreeToDefect => "G",
            GeneratorRole::DefectToDefectFree => "F",
        }
    }
}

impl std::fmt::Display for GeneratorRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GeneratorRole::DefectFreeToDefect => f.write_str("G (defect-free -> defect)"),
            GeneratorRole::DefectToDefectFree => f.write_str("F (defect -> defect-free)"),
        }
    }
}

/// `D_a` scores defect-free images, `D_b` defective ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiscriminatorRole {
    #[serde(rename = "D_a")]
    DefectFree,
    #[serde(rename = "D_b")]
    Defective,
}

impl DiscriminatorRole {
    pub fn short_name(self) -> &'static str {
        match self {
            DiscriminatorRole::DefectFree => "D_a",
            DiscriminatorRole::Defective => "D_b",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Batch,
    Instance,
}

/// Placement and shape of the generator's non-local block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonLocalConfig {
    pub enabled: bool,
    /// Attention budget: the feature map is average-pooled by powers of two
    /// until `H * W` fits.
    pub max_positions: usize,
    /// Width of the 1x1 projection around the attention, `None` for none.
    pub projection_channels: Option<usize>,
    /// Learned 1x1 query/key/value maps instead of using the feature itself.
    pub learned_qkv: bool,
}

impl Default for NonLocalConfig {
    fn default() -> Self {
        Self { enabled: true, max_positions: 4096, projection_channels: Some(64), learned_qkv: false }
    }
}

/// UNet encoder-decoder with skip concatenation.
///
/// Encoder block `i` halves the resolution to `widths[i]` channels; the
/// decoder mirrors it, concatenating the matching encoder output before each
/// upsampling. The non-local block acts on the last decoder feature, just
/// before the output convolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorArch {
    pub in_channels: usize,
    pub out_channels: usize,
    pub image_size: usize,
    pub widths: Vec<usize>,
    pub norm: NormKind,
    pub nonlocal: NonLocalConfig,
}

impl Default for GeneratorArch {
    fn default() -> Self {
        Self {
            in_channels: 1,
            out_channels: 1,
            image_size: 256,
            widths: vec![64, 128, 256, 512, 512, 512, 512, 512],
            norm: NormKind::Batch,
            nonlocal: NonLocalConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    Bias,
    NormScale,
    NormShift,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    /// Buffers are state but not optimized.
    pub fn is_buffer(self) -> bool {
        matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

fn conv_specs(out: &mut Vec<ParamSpec>, prefix: &str, shape: [usize; 4], bias_len: Option<usize>) {
    out.push(ParamSpec { name: format!("{prefix}.conv.weight"), shape: shape.to_vec(), kind: ParamKind::ConvWeight });
    if let Some(n) = bias_len {
        out.push(ParamSpec { name: format!("{prefix}.conv.bias"), shape: vec![n], kind: ParamKind::Bias });
    }
}

fn norm_specs(out: &mut Vec<ParamSpec>, prefix: &str, channels: usize, norm: NormKind) {
    let push = |out: &mut Vec<ParamSpec>, leaf: &str, kind| {
        out.push(ParamSpec { name: format!("{prefix}.norm.{leaf}"), shape: vec![channels], kind })
    };
    push(out, "weight", ParamKind::NormScale);
    push(out, "bias", ParamKind::NormShift);
    if norm == NormKind::Batch {
        push(out, "running_mean", ParamKind::RunningMean);
        push(out, "running_var", ParamKind::RunningVar);
    }
}

impl GeneratorArch {
    /// A reduced-width variant for tests and small experiments.
    pub fn small(image_size: usize, widths: Vec<usize>) -> Self {
        Self {
            image_size,
            widths,
            nonlocal: NonLocalConfig { projection_channels: None, ..Default::default() },
            ..Default::default()
        }
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    /// Channels of the feature map the non-local block sees.
    pub fn final_feature_channels(&self) -> usize {
        if self.depth() == 1 {
            self.widths[0]
        } else {
            2 * self.widths[0]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(SiganError::Config(format!("generator architecture: {msg}")));
        if self.widths.is_empty() {
            return fail("at least one encoder block is required".into());
        }
        if let Some(i) = self.widths.iter().position(|&w| w == 0) {
            return fail(format!("channel width {i} must be positive"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return fail("channel counts must be positive".into());
        }
        let depth = self.depth() as u32;
        if depth >= usize::BITS || self.image_size == 0 || !self.image_size.is_multiple_of(1usize << depth) {
            return fail(format!("image size {} is not a multiple of 2^{depth}", self.image_size));
        }
        if self.nonlocal.enabled {
            if self.nonlocal.projection_channels == Some(0) {
                return fail("non-local projection width must be positive".into());
            }
            self.nonlocal_pool_factor()?;
        }
        Ok(())
    }

    /// Pooling factor that brings the non-local input within budget.
    pub fn nonlocal_pool_factor(&self) -> Result<usize> {
        let side = self.image_size / 2;
        let mut factor = 1;
        while (side / factor) * (side / factor) > self.nonlocal.max_positions {
            factor *= 2;
            if !side.is_multiple_of(factor) {
                return Err(SiganError::Config(format!(
                    "non-local block: {side}x{side} feature cannot be pooled within {} positions; place it at a coarser resolution",
                    self.nonlocal.max_positions
                )));
            }
        }
        Ok(factor)
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        let d = self.depth();
        let w = &self.widths;
        for i in 0..d {
            let cin = if i == 0 { self.in_channels } else { w[i - 1] };
            let normed = i > 0 && i + 1 < d;
            conv_specs(&mut out, &format!("down{i}"), [w[i], cin, 4, 4], (!normed).then_some(w[i]));
            if normed {
                norm_specs(&mut out, &format!("down{i}"), w[i], self.norm);
            }
        }
        for j in (1..d).rev() {
            let cin = if j == d - 1 { w[d - 1] } else { 2 * w[j] };
            conv_specs(&mut out, &format!("up{j}"), [cin, w[j - 1], 4, 4], None);
            norm_specs(&mut out, &format!("up{j}"), w[j - 1], self.norm);
        }
        let h = self.final_feature_channels();
        if self.nonlocal.enabled {
            let inner = self.nonlocal.projection_channels.unwrap_or(h);
            if let Some(p) = self.nonlocal.projection_channels {
                conv_specs(&mut out, "nonlocal.proj_in", [p, h, 1, 1], Some(p));
                conv_specs(&mut out, "nonlocal.proj_out", [h, p, 1, 1], Some(h));
            }
            if self.nonlocal.learned_qkv {
                for name in ["query", "key", "value"] {
                    conv_specs(&mut out, &format!("nonlocal.{name}"), [inner, inner, 1, 1], Some(inner));
                }
            }
        }
        conv_specs(&mut out, "out", [h, self.out_channels, 4, 4], Some(self.out_channels));
        out
    }
}

/// One row of the discriminator table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscLayer {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Batch normalization followed by LeakyReLU.
    pub norm_act: bool,
}

/// Plain stack of convolutions emitting patch logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorArch {
    pub in_channels: usize,
    pub layers: Vec<DiscLayer>,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorArch {
    fn default() -> Self {
        Self::table(1, 64)
    }
}

impl DiscriminatorArch {
    /// Four `Conv+BN+LeakyReLU` layers with `base, 2*base, 4*base, 8*base`
    /// filters (strides 2, 2, 2, 1) and a final 1-filter convolution with
    /// stride 1; every kernel is 4x4 with padding 1. `base = 64` is the
    /// reference network.
    pub fn table(in_channels: usize, base: usize) -> Self {
        let row = |out_channels, stride, norm_act| DiscLayer { out_channels, kernel: 4, stride, padding: 1, norm_act };
        Self {
            in_channels,
            layers: vec![
                row(base, 2, true),
                row(2 * base, 2, true),
                row(4 * base, 2, true),
                row(8 * base, 1, true),
                row(1, 1, false),
            ],
            leaky_slope: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.in_channels == 0 {
            return Err(SiganError::Config("discriminator needs input channels and at least one layer".into()));
        }
        if self.layers.iter().any(|l| l.out_channels == 0 || l.kernel == 0 || l.stride == 0) {
            return Err(SiganError::Config("discriminator layer widths, kernels and strides must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(SiganError::Config(format!("LeakyReLU slope {} outside [0, 1)", self.leaky_slope)));
        }
        Ok(())
    }

    /// Spatial size of the logit map, `None` if a layer does not fit.
    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        self.layers.iter().try_fold((h, w), |(h, w), l| {
            sigan_tensor::Conv2dGeometry::square(l.kernel, l.stride, l.padding).conv_output(h, w)
        })
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        let mut cin = self.in_channels;
        for (i, l) in self.layers.iter().enumerate() {
            let prefix = format!("layer{i}");
            conv_specs(
                &mut out,
                &prefix,
                [l.out_channels, cin, l.kernel, l.kernel],
                (!l.norm_act).then_some(l.out_channels),
            );
            if l.norm_act {
                norm_specs(&mut out, &prefix, l.out_channels, NormKind::Batch);
            }
            cin = l.out_channels;
        }
        out
    }
}
