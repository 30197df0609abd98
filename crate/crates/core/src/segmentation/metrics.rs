use serde::{Deserialize, Serialize};

use super::Mask;
use crate::error::{Result, SiganError};

/// Pixel counts and scores of one predicted mask against ground truth.
///
/// `m_g` ground-truth pixels, `m_d` detected pixels, `m` their overlap;
/// completeness `cpt = m / m_g`, correctness `crt = m / m_d` and their
/// harmonic mean. Empty sets: a zero denominator makes its ratio 0, except
/// that two empty masks agree perfectly and score 1 throughout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub m_g: u64,
    pub m_d: u64,
    pub m: u64,
    pub cpt: f64,
    pub crt: f64,
    pub fscore: f64,
}

impl SegMetrics {
    pub fn from_counts(m_g: u64, m_d: u64, m: u64) -> Self {
        debug_assert!(m <= m_g.min(m_d));
        if m_g == 0 && m_d == 0 {
            return Self { m_g, m_d, m, cpt: 1.0, crt: 1.0, fscore: 1.0 };
        }
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let (cpt, crt) = (ratio(m, m_g), ratio(m, m_d));
        let fscore = if cpt + crt == 0.0 { 0.0 } else { 2.0 * cpt * crt / (cpt + crt) };
        Self { m_g, m_d, m, cpt, crt, fscore }
    }
}

pub fn evaluate_masks(predicted: &Mask, ground_truth: &Mask) -> Result<SegMetrics> {
    if predicted.shape() != ground_truth.shape() {
        return Err(SiganError::shape("mask comparison", ground_truth.shape(), predicted.shape()));
    }
    let (mut m_g, mut m_d, mut m) = (0u64, 0u64, 0u64);
    for (&p, &g) in predicted.bits.iter().zip(&ground_truth.bits) {
        m_g += g as u64;
        m_d += p as u64;
        m += (p && g) as u64;
    }
    Ok(SegMetrics::from_counts(m_g, m_d, m))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub cpt: f64,
    pub crt: f64,
    pub fscore: f64,
}

/// Split-level scores: micro from summed pixel counts, macro as the mean of
/// per-image scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub images: usize,
    pub micro: SegMetrics,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
}

pub fn aggregate(per_image: &[SegMetrics]) -> AggregateMetrics {
    let (g, d, m) = per_image.iter().fold((0, 0, 0), |(g, d, m), s| (g + s.m_g, d + s.m_d, m + s.m));
    let n = per_image.len().max(1) as f64;
    let mean = |f: fn(&SegMetrics) -> f64| per_image.iter().map(f).sum::<f64>() / n;
    AggregateMetrics {
        images: per_image.len(),
        micro: SegMetrics::from_counts(g, d, m),
        macro_avg: MacroMetrics { cpt: mean(|s| s.cpt), crt: mean(|s| s.crt), fscore: mean(|s| s.fscore) },
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn worked_counts() {
        let s = SegMetrics::from_counts(100, 80, 60);
        assert_eq!((s.cpt, s.crt), (0.6, 0.75));
        assert!((s.fscore - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_set_conventions() {
        let missed = SegMetrics::from_counts(10, 0, 0);
        assert_eq!((missed.cpt, missed.crt, missed.fscore), (0.0, 0.0, 0.0));
        let spurious = SegMetrics::from_counts(0, 7, 0);
        assert_eq!((spurious.cpt, spurious.crt, spurious.fscore), (0.0, 0.0, 0.0));
        assert_eq!(SegMetrics::from_counts(0, 0, 0).fscore, 1.0);
    }

    #[test]
    fn micro_and_macro_differ() {
        let a = SegMetrics::from_counts(10, 10, 10);
        let b = SegMetrics::from_counts(90, 10, 0);
        let agg = aggregate(&[a, b]);
        assert_eq!(agg.macro_avg.fscore, 0.5);
        assert_eq!(agg.micro.cpt, 0.1);
        assert_eq!(agg.micro.crt, 0.5);
    }

    proptest! {
        #[test]
        fn scores_are_bounded_harmonic_means(g in 0u64..500, d in 0u64..500, frac in 0.0f64..=1.0) {
            let m = (g.min(d) as f64 * frac) as u64;
            let s = SegMetrics::from_counts(g, d, m);
            for v in [s.cpt, s.crt, s.fscore] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(s.fscore <= s.cpt.max(s.crt) + 1e-15);
            if s.cpt + s.crt > 0.0 && !(g == 0 && d == 0) {
                prop_assert_eq!(s.fscore, 2.0 * s.cpt * s.crt / (s.cpt + s.crt));
            }
        }
    }
}
