//! Loss graphs of one training step, generic over the float type so the
//! same code is differentiated in training and checked in double precision.

use sigan_tensor::{Float, Var};

use crate::error::Result;
use crate::losses::{
    adversarial_loss_discriminator, adversarial_loss_generator, cycle_loss, strong_identity_loss, LossConfig,
    LossReport, LossWeights,
};
use crate::models::{
    discriminator_forward, generator_forward, DiscriminatorArch, ForwardCtx, GeneratorArch, GeneratorRole,
};

/// The four networks bound to one tape.
pub struct Networks<'a, 't, 's, T: Float> {
    pub gen_arch: &'a GeneratorArch,
    pub disc_arch: &'a DiscriminatorArch,
    pub g: &'a ForwardCtx<'t, 's, T>,
    pub f: &'a ForwardCtx<'t, 's, T>,
    pub d_a: &'a ForwardCtx<'t, 's, T>,
    pub d_b: &'a ForwardCtx<'t, 's, T>,
}

pub struct GeneratorPass<'t, T: Float> {
    /// `G(a)`
    pub fake_b: Var<'t, T>,
    /// `F(b)`
    pub fake_a: Var<'t, T>,
    pub adv_g: Var<'t, T>,
    pub adv_f: Var<'t, T>,
    /// `None` when the corresponding weight is zero.
    pub cyc: Option<Var<'t, T>>,
    pub si_g: Option<Var<'t, T>>,
    pub si_f: Option<Var<'t, T>>,
    pub total: Var<'t, T>,
}

fn scalar<T: Float>(v: &Option<Var<'_, T>>) -> f64 {
    v.as_ref().map_or(0.0, |v| v.value().item().as_f64())
}

impl<T: Float> GeneratorPass<'_, T> {
    /// Generator-side entries of a [`LossReport`]; discriminator entries are zero.
    pub fn report(&self) -> LossReport {
        LossReport {
            adv_g: self.adv_g.value().item().as_f64(),
            adv_f: self.adv_f.value().item().as_f64(),
            cyc: scalar(&self.cyc),
            si_g: scalar(&self.si_g),
            si_f: scalar(&self.si_f),
            total_generators: self.total.value().item().as_f64(),
            ..Default::default()
        }
    }
}

/// Translations, reconstructions and the weighted generator objective.
///
/// `G` is scored by `D_b` on `G(a)` and `F` by `D_a` on `F(b)`. A term whose
/// weight is zero is not built at all.
pub fn generator_pass<'t, T: Float>(
    nets: &Networks<'_, 't, '_, T>,
    a: Var<'t, T>,
    b: Var<'t, T>,
    weights: &LossWeights,
    cfg: &LossConfig,
) -> Result<GeneratorPass<'t, T>> {
    weights.validate()?;
    let fake_b = generator_forward(nets.gen_arch, nets.g, a)?;
    let fake_a = generator_forward(nets.gen_arch, nets.f, b)?;
    let need_rec = weights.lambda1 > 0.0 || weights.lambda2 > 0.0;
    let (rec_a, rec_b) = if need_rec {
        (
            Some(generator_forward(nets.gen_arch, nets.f, fake_b)?),
            Some(generator_forward(nets.gen_arch, nets.g, fake_a)?),
        )
    } else {
        (None, None)
    };

    let adv_g = adversarial_loss_generator(discriminator_forward(nets.disc_arch, nets.d_b, fake_b)?, cfg)?;
    let adv_f = adversarial_loss_generator(discriminator_forward(nets.disc_arch, nets.d_a, fake_a)?, cfg)?;
    let mut total = adv_g.add(adv_f);

    let (mut cyc, mut si_g, mut si_f) = (None, None, None);
    if let (Some(rec_a), Some(rec_b)) = (rec_a, rec_b) {
        if weights.lambda1 > 0.0 {
            let lg = strong_identity_loss(GeneratorRole::DefectFreeToDefect, a, fake_b, fake_a, rec_b, cfg.reduction)?;
            let lf = strong_identity_loss(GeneratorRole::DefectToDefectFree, b, fake_a, fake_b, rec_a, cfg.reduction)?;
            let l1 = T::lit(weights.lambda1);
            total = total.add(lg.scale(l1)).add(lf.scale(l1));
            si_g = Some(lg);
            si_f = Some(lf);
        }
        if weights.lambda2 > 0.0 {
            let lc = cycle_loss(a, rec_a, b, rec_b, cfg.reduction)?;
            total = total.add(lc.scale(T::lit(weights.lambda2)));
            cyc = Some(lc);
        }
    }
    Ok(GeneratorPass { fake_b, fake_a, adv_g, adv_f, cyc, si_g, si_f, total })
}

/// `D_a` separates real `a` from `fake_a`; `D_b` real `b` from `fake_b`.
/// Returns `(adv_da, adv_db)`.
pub fn discriminator_pass<'t, T: Float>(
    nets: &Networks<'_, 't, '_, T>,
    a: Var<'t, T>,
    b: Var<'t, T>,
    fake_a: Var<'t, T>,
    fake_b: Var<'t, T>,
    cfg: &LossConfig,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let arch = nets.disc_arch;
    let da = adversarial_loss_discriminator(
        discriminator_forward(arch, nets.d_a, a)?,
        discriminator_forward(arch, nets.d_a, fake_a)?,
        cfg.adversarial,
    )?;
    let db = adversarial_loss_discriminator(
        discriminator_forward(arch, nets.d_b, b)?,
        discriminator_forward(arch, nets.d_b, fake_b)?,
        cfg.adversarial,
    )?;
    Ok((da, db))
}
