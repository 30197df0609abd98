use rand::Rng;
use sigan_tensor::{Conv2dGeometry, Float, Tape, Tensor, Var};

use super::arch::{GeneratorArch, GeneratorRole};
use super::nonlocal::nonlocal_block;
use super::params::{ForwardCtx, Mode, ParamStore};
use super::Translator;
use crate::error::{Result, SiganError};

const LEAKY_SLOPE: f64 = 0.2;

/// One generator: its role, architecture and weights.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams<T = f32> {
    pub role: GeneratorRole,
    pub arch: GeneratorArch,
    pub store: ParamStore<T>,
}

impl<T: Float> GeneratorParams<T> {
    pub fn init(role: GeneratorRole, arch: GeneratorArch, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let store = ParamStore::init(&arch.param_specs(), rng);
        Ok(Self { role, arch, store })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    pub fn cast<U: Float>(&self) -> GeneratorParams<U> {
        GeneratorParams { role: self.role, arch: self.arch.clone(), store: self.store.cast() }
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let a = &self.arch;
        let expected = [a.in_channels, a.image_size, a.image_size];
        if shape.len() != 4 || shape[1..] != expected {
            return Err(SiganError::shape(
                format!("generator {} input", self.role.short_name()),
                format!("B x {} x {} x {}", expected[0], expected[1], expected[2]),
                shape,
            ));
        }
        Ok(())
    }

    /// Stateless forward pass; batch norm uses running statistics.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        if !x.all_finite() {
            return Err(SiganError::NonFinite("generator input".into()));
        }
        let tape = Tape::new();
        let ctx = ForwardCtx::new(&tape, &self.store, Mode::Eval, false);
        let y = generator_forward(&self.arch, &ctx, tape.constant(x.clone()))?;
        let out = (*y.value()).clone();
        Ok(out)
    }
}

impl Translator for GeneratorParams<f32> {
    fn role(&self) -> GeneratorRole {
        self.role
    }

    fn translate(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.forward(batch)
    }
}

/// UNet forward pass on a tape.
///
/// Encoder block `i` is `[LeakyReLU] -> Conv(4, 2, 1) -> [Norm]`; the first
/// block has no activation and neither the first nor the innermost block is
/// normalized. Decoder block `j` is `ReLU -> ConvT(4, 2, 1) -> Norm` on the
/// concatenation of the previous decoder output with encoder output `j`. The
/// last feature map, at half resolution, goes through the non-local block
/// and then `ReLU -> ConvT -> tanh`.
pub fn generator_forward<'t, T: Float>(
    arch: &GeneratorArch,
    ctx: &ForwardCtx<'t, '_, T>,
    x: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let g = Conv2dGeometry::square(4, 2, 1);
    let d = arch.depth();
    let slope = T::lit(LEAKY_SLOPE);

    let mut enc: Vec<Var<'t, T>> = Vec::with_capacity(d);
    let mut h = x;
    for i in 0..d {
        let input = if i == 0 { h } else { h.leaky_relu(slope) };
        let prefix = format!("down{i}");
        h = ctx.conv(&prefix, input, g);
        if i > 0 && i + 1 < d {
            h = ctx.norm(&prefix, h, arch.norm);
        }
        enc.push(h);
    }

    let mut u = enc[d - 1];
    for j in (1..d).rev() {
        let input = if j == d - 1 { u } else { Var::concat_channels(&[u, enc[j]]) };
        let prefix = format!("up{j}");
        u = ctx.norm(&prefix, ctx.conv_t(&prefix, input.relu(), g), arch.norm);
    }
    let mut feat = if d == 1 { enc[0] } else { Var::concat_channels(&[u, enc[0]]) };
    if arch.nonlocal.enabled {
        feat = nonlocal_block(ctx, &arch.nonlocal, feat)?;
    }
    Ok(ctx.conv_t("out", feat.relu(), g).tanh())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn small(widths: Vec<usize>, size: usize) -> GeneratorParams<f32> {
        let arch = GeneratorArch::small(size, widths);
        GeneratorParams::init(GeneratorRole::DefectToDefectFree, arch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn shape_and_range_at_reduced_size() {
        let g = small(vec![4, 8, 8], 32);
        let x = Tensor::from_fn([2, 1, 32, 32], |i| ((i % 17) as f32 / 8.0) - 1.0);
        let y = g.forward(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn single_block_generator() {
        let g = small(vec![4], 8);
        let y = g.forward(&Tensor::zeros([1, 1, 8, 8])).unwrap();
        assert_eq!(y.shape(), &[1, 1, 8, 8]);
    }

    #[test]
    fn wrong_input_size_names_both_shapes() {
        let g = small(vec![4, 4], 16);
        let err = g.forward(&Tensor::zeros([1, 1, 8, 8])).unwrap_err().to_string();
        assert!(err.contains("16") && err.contains('8'), "{err}");
    }

    #[test]
    fn forward_is_deterministic() {
        let g = small(vec![4, 8], 16);
        let x = Tensor::from_fn([1, 1, 16, 16], |i| (i as f32 * 0.37).sin());
        assert_eq!(g.forward(&x).unwrap(), g.forward(&x).unwrap());
    }

    #[test]
    fn parameter_count_matches_layout() {
        let arch = GeneratorArch::default();
        let expected: usize =
            arch.param_specs().iter().filter(|s| !s.kind.is_buffer()).map(|s| s.shape.iter().product::<usize>()).sum();
        let g =
            GeneratorParams::<f32>::init(GeneratorRole::DefectFreeToDefect, arch, &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap();
        assert_eq!(g.num_params(), expected);
    }
}
