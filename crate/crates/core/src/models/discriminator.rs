use rand::Rng;
use sigan_tensor::{Conv2dGeometry, Float, Tape, Tensor, Var};

use super::arch::{DiscriminatorArch, DiscriminatorRole, NormKind};
use super::params::{ForwardCtx, Mode, ParamStore};
use crate::error::{Result, SiganError};

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams<T = f32> {
    pub role: DiscriminatorRole,
    pub arch: DiscriminatorArch,
    pub store: ParamStore<T>,
}

impl<T: Float> DiscriminatorParams<T> {
    pub fn init(role: DiscriminatorRole, arch: DiscriminatorArch, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let store = ParamStore::init(&arch.param_specs(), rng);
        Ok(Self { role, arch, store })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_params()
    }

    pub fn cast<U: Float>(&self) -> DiscriminatorParams<U> {
        DiscriminatorParams { role: self.role, arch: self.arch.clone(), store: self.store.cast() }
    }

    /// Patch logits for a batch, batch norm on running statistics.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let ctx = ForwardCtx::new(&tape, &self.store, Mode::Eval, false);
        let y = discriminator_forward(&self.arch, &ctx, tape.constant(x.clone()))?;
        let out = (*y.value()).clone();
        Ok(out)
    }
}

/// Runs the convolution stack; every layer but the last is
/// `Conv -> BatchNorm -> LeakyReLU`, the last is a plain convolution.
pub fn discriminator_forward<'t, T: Float>(
    arch: &DiscriminatorArch,
    ctx: &ForwardCtx<'t, '_, T>,
    x: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let shape = x.shape();
    if shape.len() != 4 || shape[1] != arch.in_channels {
        return Err(SiganError::shape("discriminator input", format!("B x {} x H x W", arch.in_channels), &shape));
    }
    if arch.output_size(shape[2], shape[3]).is_none() {
        return Err(SiganError::shape("discriminator input", "at least the receptive field", &shape));
    }
    if !x.value().all_finite() {
        return Err(SiganError::NonFinite("discriminator input".into()));
    }
    let slope = T::lit(arch.leaky_slope);
    let mut h = x;
    for (i, layer) in arch.layers.iter().enumerate() {
        let prefix = format!("layer{i}");
        h = ctx.conv(&prefix, h, Conv2dGeometry::square(layer.kernel, layer.stride, layer.padding));
        if layer.norm_act {
            h = ctx.norm(&prefix, h, NormKind::Batch).leaky_relu(slope);
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn closed_form_output_size() {
        let arch = DiscriminatorArch::default();
        // Three stride-2 layers then two stride-1 layers, k=4, p=1.
        let oracle = |mut s: usize| {
            for _ in 0..3 {
                s = (s + 2 - 4) / 2 + 1;
            }
            s - 2
        };
        for s in [32, 64, 96, 128, 256] {
            assert_eq!(arch.output_size(s, s), Some((oracle(s), oracle(s))));
        }
    }

    #[test]
    fn rejects_non_finite_input() {
        let d = DiscriminatorParams::<f32>::init(
            DiscriminatorRole::DefectFree,
            DiscriminatorArch::table(1, 2),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let mut x = Tensor::zeros([1, 1, 32, 32]);
        x.data_mut()[5] = f32::NAN;
        assert!(matches!(d.forward(&x), Err(SiganError::NonFinite(_))));
        assert_eq!(d.forward(&Tensor::zeros([2, 1, 32, 32])).unwrap().shape(), &[2, 1, 2, 2]);
    }
}
