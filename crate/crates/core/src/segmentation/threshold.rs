use serde::{Deserialize, Serialize};
use sigan_tensor::Tensor;

pub const OTSU_BINS: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ThresholdRule {
    Fixed {
        value: f64,
    },
    #[default]
    Otsu,
}

pub fn threshold_select(diff_map: &Tensor<f32>, rule: &ThresholdRule) -> f64 {
    match *rule {
        ThresholdRule::Fixed { value } => value,
        ThresholdRule::Otsu => otsu_threshold(diff_map.data()),
    }
}

/// Otsu's threshold over a histogram spanning the data range.
///
/// Bin `k` holds the values in `(e[k-1], e[k]]` for equally spaced upper
/// edges `e`. The split maximizing the between-class variance (first one on
/// ties) returns its edge, so pixels strictly above it form the foreground.
/// Constant input returns the constant.
pub fn otsu_threshold(values: &[f32]) -> f64 {
    let Some(lo) = values.iter().map(|&v| v as f64).reduce(f64::min) else { return 0.0 };
    let hi = values.iter().map(|&v| v as f64).fold(lo, f64::max);
    if hi <= lo {
        log::warn!("Otsu threshold on a constant map ({lo}); the mask will be empty");
        return lo;
    }
    let width = (hi - lo) / OTSU_BINS as f64;
    let mut edges: Vec<f64> = (1..=OTSU_BINS).map(|k| lo + k as f64 * width).collect();
    edges[OTSU_BINS - 1] = hi;

    let mut count = [0u64; OTSU_BINS];
    let mut sum = [0f64; OTSU_BINS];
    for &v in values {
        let k = edges.partition_point(|&e| e < v as f64);
        count[k] += 1;
        sum[k] += v as f64;
    }
    let total = values.len() as f64;
    let sum_all: f64 = sum.iter().sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best_k, mut best) = (0, f64::NEG_INFINITY);
    for k in 0..OTSU_BINS - 1 {
        w0 += count[k] as f64;
        sum0 += sum[k];
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let diff = sum0 / w0 - (sum_all - sum0) / w1;
        let between = w0 * w1 * diff * diff;
        if between > best {
            best = between;
            best_k = k;
        }
    }
    edges[best_k]
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    /// Between-class variance of splitting the raw values at `t`.
    fn between(values: &[f32], t: f64) -> f64 {
        let below: Vec<f64> = values.iter().map(|&v| v as f64).filter(|&v| v <= t).collect();
        let above: Vec<f64> = values.iter().map(|&v| v as f64).filter(|&v| v > t).collect();
        if below.is_empty() || above.is_empty() {
            return 0.0;
        }
        let n = values.len() as f64;
        let (w0, w1) = (below.len() as f64 / n, above.len() as f64 / n);
        let m0 = below.iter().sum::<f64>() / below.len() as f64;
        let m1 = above.iter().sum::<f64>() / above.len() as f64;
        w0 * w1 * (m0 - m1).powi(2)
    }

    #[test]
    fn bimodal_split_lies_between_modes() {
        let values: Vec<f32> = (0..200).map(|i| if i % 2 == 0 { 0.1 } else { 1.1 }).collect();
        let t = otsu_threshold(&values);
        assert!(t > 0.1 && t < 1.1, "{t}");
    }

    #[test]
    fn constant_and_empty_maps() {
        assert_eq!(otsu_threshold(&[0.0; 16]), 0.0);
        assert_eq!(otsu_threshold(&[0.7; 4]), 0.7f32 as f64);
        assert_eq!(otsu_threshold(&[]), 0.0);
    }

    proptest! {
        #[test]
        fn otsu_maximizes_over_every_bin_edge(values in prop::collection::vec(0u8..=200, 2..120)) {
            let values: Vec<f32> = values.into_iter().map(|v| v as f32 / 100.0).collect();
            let lo = values.iter().copied().fold(f32::INFINITY, f32::min) as f64;
            let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            prop_assume!(hi > lo);
            let t = otsu_threshold(&values);
            let w = (hi - lo) / OTSU_BINS as f64;
            let best = (1..OTSU_BINS).map(|k| between(&values, lo + k as f64 * w)).fold(0.0, f64::max);
            prop_assert!((between(&values, t) - best).abs() <= 1e-9 * best.max(1.0), "t={t} best={best}");
        }
    }
}
