//! Adversarial, cycle-consistency and strong-identity losses.
//!
//! Every loss is built on the tape so the trainer can differentiate it. The
//! logistic losses are written with `softplus` for stability:
//! `-log sigmoid(x) = softplus(-x)` and `-log(1 - sigmoid(x)) = softplus(x)`.

use serde::{Deserialize, Serialize};
use sigan_tensor::{Float, Var};

use crate::error::{Result, SiganError};
use crate::models::GeneratorRole;

/// `lambda1` weighs the strong-identity terms, `lambda2` the cycle term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 10.0, lambda2: 5.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SiganError::Config(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialKind {
    /// Binary cross-entropy on logits.
    #[default]
    Log,
    /// Least squares against targets 1 (real) and 0 (fake).
    LeastSquares,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorObjective {
    /// Minimize `-log D(G(a))`.
    #[default]
    NonSaturating,
    /// Minimize `log(1 - D(G(a)))`.
    Saturating,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossConfig {
    pub adversarial: AdversarialKind,
    pub generator_objective: GeneratorObjective,
    pub reduction: Reduction,
}

/// All loss terms of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub adv_g: f64,
    pub adv_f: f64,
    pub adv_da: f64,
    pub adv_db: f64,
    pub cyc: f64,
    pub si_g: f64,
    pub si_f: f64,
    pub total_generators: f64,
}

impl LossReport {
    pub fn all_finite(&self) -> bool {
        [self.adv_g, self.adv_f, self.adv_da, self.adv_db, self.cyc, self.si_g, self.si_f, self.total_generators]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain numeric struct")
    }
}

fn same_shape<T: Float>(context: &str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(SiganError::shape(context, sa, sb));
    }
    Ok(())
}

fn finite<T: Float>(context: &str, v: &Var<'_, T>) -> Result<()> {
    if !v.value().all_finite() {
        return Err(SiganError::NonFinite(context.into()));
    }
    Ok(())
}

/// Discriminator loss on patch logits; zero only for perfect separation.
pub fn adversarial_loss_discriminator<'t, T: Float>(
    real_logits: Var<'t, T>,
    fake_logits: Var<'t, T>,
    kind: AdversarialKind,
) -> Result<Var<'t, T>> {
    same_shape("discriminator logits", &real_logits, &fake_logits)?;
    finite("real logits", &real_logits)?;
    finite("fake logits", &fake_logits)?;
    Ok(match kind {
        AdversarialKind::Log => real_logits.neg().softplus().mean_all().add(fake_logits.softplus().mean_all()),
        AdversarialKind::LeastSquares => {
            real_logits.add_scalar(-T::one()).square().mean_all().add(fake_logits.square().mean_all())
        }
    })
}

/// Generator-side adversarial loss on the discriminator's logits for fakes.
pub fn adversarial_loss_generator<'t, T: Float>(fake_logits: Var<'t, T>, cfg: &LossConfig) -> Result<Var<'t, T>> {
    finite("fake logits", &fake_logits)?;
    Ok(match (cfg.adversarial, cfg.generator_objective) {
        (AdversarialKind::Log, GeneratorObjective::NonSaturating) => fake_logits.neg().softplus().mean_all(),
        (AdversarialKind::Log, GeneratorObjective::Saturating) => fake_logits.softplus().mean_all().neg(),
        (AdversarialKind::LeastSquares, _) => fake_logits.add_scalar(-T::one()).square().mean_all(),
    })
}

/// L1 distance between two batches.
pub fn l1<'t, T: Float>(x: Var<'t, T>, y: Var<'t, T>, reduction: Reduction) -> Result<Var<'t, T>> {
    same_shape("L1 operands", &x, &y)?;
    let d = x.sub(y).abs();
    Ok(match reduction {
        Reduction::Mean => d.mean_all(),
        Reduction::Sum => d.sum_all(),
    })
}

/// `|a - F(G(a))| + |b - G(F(b))|`.
pub fn cycle_loss<'t, T: Float>(
    a: Var<'t, T>,
    fga: Var<'t, T>,
    b: Var<'t, T>,
    gfb: Var<'t, T>,
    reduction: Reduction,
) -> Result<Var<'t, T>> {
    Ok(l1(a, fga, reduction)?.add(l1(b, gfb, reduction)?))
}

/// Strong-identity loss of one generator over its two (input, output) pairs.
///
/// For `G` the pairs are `(a, G(a))` and `(F(b), G(F(b)))`; for `F` they are
/// `(b, F(b))` and `(G(a), F(G(a)))`.
pub fn strong_identity_loss<'t, T: Float>(
    role: GeneratorRole,
    x_in: Var<'t, T>,
    x_out: Var<'t, T>,
    y_in: Var<'t, T>,
    y_out: Var<'t, T>,
    reduction: Reduction,
) -> Result<Var<'t, T>> {
    let first = l1(x_in, x_out, reduction).map_err(|e| tag_role(e, role))?;
    let second = l1(y_in, y_out, reduction).map_err(|e| tag_role(e, role))?;
    Ok(first.add(second))
}

fn tag_role(e: SiganError, role: GeneratorRole) -> SiganError {
    match e {
        SiganError::Shape { context, expected, actual } => SiganError::Shape {
            context: format!("{context} (strong identity of {})", role.short_name()),
            expected,
            actual,
        },
        other => other,
    }
}

/// `adv_g + adv_f + lambda1 * (si_g + si_f) + lambda2 * cyc`.
pub fn total_generator_loss(report: &LossReport, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    Ok(report.adv_g + report.adv_f + w.lambda1 * report.si_g + w.lambda1 * report.si_f + w.lambda2 * report.cyc)
}
