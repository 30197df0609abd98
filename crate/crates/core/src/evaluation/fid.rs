use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Result, SiganError};

/// Below this many samples per group the covariance estimate is poor and the
/// score is biased upward.
pub const SMALL_SAMPLE_WARNING: usize = 2048;

const SYMMETRY_TOL: f64 = 1e-8;
const NEGATIVE_EIGEN_TOL: f64 = 1e-6;
const MAX_EIGEN_ITERATIONS: usize = 100_000;

/// Gaussian fit of one feature group: mean, unbiased covariance, count.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mu: DVector<f64>,
    pub phi: DMatrix<f64>,
    pub n: usize,
}

impl FeatureStats {
    pub fn new(mu: DVector<f64>, phi: DMatrix<f64>, n: usize) -> Result<Self> {
        let d = mu.len();
        if phi.shape() != (d, d) {
            return Err(SiganError::shape("covariance", (d, d), phi.shape()));
        }
        if n < 2 {
            return Err(SiganError::Numerical(format!("feature statistics need at least 2 samples, got {n}")));
        }
        if !mu.iter().chain(phi.iter()).all(|v| v.is_finite()) {
            return Err(SiganError::Numerical("non-finite feature statistics".into()));
        }
        let asym = (&phi - phi.transpose()).amax();
        if asym > SYMMETRY_TOL {
            return Err(SiganError::Numerical(format!("covariance is not symmetric (max deviation {asym:e})")));
        }
        Ok(Self { mu, phi, n })
    }

    /// Mean and unbiased covariance of the rows of an `N x D` matrix.
    pub fn from_features(features: &DMatrix<f64>) -> Result<Self> {
        let n = features.nrows();
        if n < 2 {
            return Err(SiganError::Numerical(format!("feature statistics need at least 2 samples, got {n}")));
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(SiganError::Numerical("non-finite feature values".into()));
        }
        let mu = features.row_mean().transpose();
        let mut centered = features.clone();
        for mut row in centered.row_iter_mut() {
            row -= mu.transpose();
        }
        let mut phi = centered.tr_mul(&centered) / (n - 1) as f64;
        phi = (&phi + phi.transpose()) * 0.5;
        Self::new(mu, phi, n)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FidReport {
    pub score: f64,
    pub stats_real: FeatureStats,
    pub stats_fake: FeatureStats,
    pub extractor_id: String,
}

/// What gets printed and stored for a FID run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FidSummary {
    pub score: f64,
    pub n_real: usize,
    pub n_fake: usize,
    pub dim: usize,
    pub extractor_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caveat: Option<String>,
}

impl FidReport {
    pub fn summary(&self) -> FidSummary {
        let n = self.stats_real.n.min(self.stats_fake.n);
        FidSummary {
            score: self.score,
            n_real: self.stats_real.n,
            n_fake: self.stats_fake.n,
            dim: self.stats_real.dim(),
            extractor_id: self.extractor_id.clone(),
            caveat: small_sample_caveat(n, self.stats_real.dim()),
        }
    }
}

fn small_sample_caveat(n: usize, dim: usize) -> Option<String> {
    (n < SMALL_SAMPLE_WARNING.max(dim)).then(|| {
        format!("only {n} samples per group for {dim}-dimensional features; the score is biased upward at this size")
    })
}

/// Frechet distance between the Gaussian fits of two `N x D` feature sets.
pub fn fid(real: &DMatrix<f64>, fake: &DMatrix<f64>, extractor_id: &str) -> Result<FidReport> {
    if real.ncols() != fake.ncols() {
        return Err(SiganError::shape("feature dimension", real.ncols(), fake.ncols()));
    }
    let stats_real = FeatureStats::from_features(real)?;
    let stats_fake = FeatureStats::from_features(fake)?;
    let score = fid_from_stats(&stats_real, &stats_fake)?;
    if let Some(c) = small_sample_caveat(stats_real.n.min(stats_fake.n), stats_real.dim()) {
        log::warn!("{c}");
    }
    Ok(FidReport { score, stats_real, stats_fake, extractor_id: extractor_id.to_string() })
}

/// `|mu_x - mu_g|^2 + tr(phi_x + phi_g - 2 (phi_x phi_g)^(1/2))`.
///
/// The trace of the root is taken from the eigenvalues of the symmetric
/// matrix `phi_g^(1/2) phi_x phi_g^(1/2)`, which shares its spectrum with
/// `phi_x phi_g`.
pub fn fid_from_stats(x: &FeatureStats, g: &FeatureStats) -> Result<f64> {
    if x.dim() != g.dim() {
        return Err(SiganError::shape("feature dimension", x.dim(), g.dim()));
    }
    let mean_term = (&x.mu - &g.mu).norm_squared();
    let root_g = psd_sqrt(&g.phi, "generated covariance")?;
    let mut inner = &root_g * &x.phi * &root_g;
    inner = (&inner + inner.transpose()) * 0.5;
    let eig = eigenvalues(&inner, "covariance product")?;
    let trace_root: f64 = eig.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let score = mean_term + x.phi.trace() + g.phi.trace() - 2.0 * trace_root;
    if !score.is_finite() {
        return Err(SiganError::Numerical(format!("FID evaluated to {score}")));
    }
    if score < 0.0 {
        if score < -NEGATIVE_EIGEN_TOL * (1.0 + x.phi.trace() + g.phi.trace()) {
            return Err(SiganError::Numerical(format!("FID evaluated to {score:e}")));
        }
        log::info!("clamping FID {score:e} to 0");
        return Ok(0.0);
    }
    Ok(score)
}

fn eigenvalues(m: &DMatrix<f64>, what: &str) -> Result<DVector<f64>> {
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, MAX_EIGEN_ITERATIONS).ok_or_else(|| {
        SiganError::Numerical(format!(
            "eigendecomposition of the {what} did not converge ({}x{}, {})",
            m.nrows(),
            m.ncols(),
            conditioning(m)
        ))
    })?;
    let top = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    let low = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if low < -NEGATIVE_EIGEN_TOL * top.max(1.0) {
        return Err(SiganError::Numerical(format!(
            "the {what} has eigenvalue {low:e} (largest {top:e}); it is not positive semidefinite"
        )));
    }
    Ok(eig.eigenvalues)
}

fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, MAX_EIGEN_ITERATIONS).ok_or_else(|| {
        SiganError::Numerical(format!("square root of the {what} did not converge ({})", conditioning(m)))
    })?;
    let top = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    if let Some(&low) = eig.eigenvalues.iter().find(|&&l| l < -NEGATIVE_EIGEN_TOL * top.max(1.0)) {
        return Err(SiganError::Numerical(format!(
            "the {what} has eigenvalue {low:e}; it is not positive semidefinite"
        )));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

fn conditioning(m: &DMatrix<f64>) -> String {
    let diag = m.diagonal();
    let hi = diag.iter().map(|v| v.abs()).fold(0.0f64, f64::max);
    let lo = diag.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    format!("diagonal range {lo:e}..{hi:e}, max entry {:e}", m.amax())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_features(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
    }

    /// Reference square root by Denman-Beavers iteration on the (non-symmetric)
    /// product, used to cross-check the eigen route.
    fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let m = a * b;
        let mut y = m.clone();
        let mut z = DMatrix::identity(m.nrows(), m.ncols());
        for _ in 0..100 {
            let yi = y.clone().try_inverse().unwrap();
            let zi = z.clone().try_inverse().unwrap();
            y = (&y + zi) * 0.5;
            z = (&z + yi) * 0.5;
        }
        y.trace()
    }

    #[test]
    fn unbiased_covariance() {
        let f = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 2.0, 3.0, 4.0]);
        let s = FeatureStats::from_features(&f).unwrap();
        assert_eq!(s.mu.as_slice(), &[2.0, 2.0]);
        assert_eq!(s.phi, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]));
    }

    #[test]
    fn injected_mean_shift() {
        let x = FeatureStats::new(DVector::from_vec(vec![0.0, 0.0]), DMatrix::identity(2, 2), 10).unwrap();
        let g = FeatureStats::new(DVector::from_vec(vec![3.0, 4.0]), DMatrix::identity(2, 2), 10).unwrap();
        assert!((fid_from_stats(&x, &g).unwrap() - 25.0).abs() < 1e-8);
    }

    #[test]
    fn trace_term_matches_iterative_root() {
        let a = FeatureStats::from_features(&random_features(40, 5, 1)).unwrap();
        let b = FeatureStats::from_features(&random_features(40, 5, 2)).unwrap();
        let expected =
            (&a.mu - &b.mu).norm_squared() + a.phi.trace() + b.phi.trace() - 2.0 * trace_sqrt_product(&a.phi, &b.phi);
        assert!((fid_from_stats(&a, &b).unwrap() - expected).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_inputs() {
        let one = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert!(fid(&one, &one, "t").is_err());
        let nan = DMatrix::from_row_slice(2, 1, &[0.0, f64::NAN]);
        assert!(fid(&nan, &nan, "t").is_err());
        assert!(fid(&random_features(4, 2, 0), &random_features(4, 3, 0), "t").is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(FeatureStats::new(DVector::zeros(2), asym, 3).is_err());
    }

    #[test]
    fn rank_deficient_covariance_is_handled() {
        // More dimensions than samples: singular covariance.
        let x = random_features(5, 12, 3);
        let r = fid(&x, &x, "t").unwrap();
        assert!(r.score <= 1e-5, "{}", r.score);
        assert!(r.summary().caveat.is_some());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn self_distance_vanishes(seed in any::<u64>(), rows in 2usize..30, cols in 1usize..6) {
            let x = random_features(rows, cols, seed);
            prop_assert!(fid(&x, &x, "t").unwrap().score <= 1e-5);
        }

        #[test]
        fn symmetric(seed in any::<u64>(), cols in 1usize..6) {
            let x = random_features(20, cols, seed);
            let y = random_features(25, cols, seed ^ 0x55).map(|v| v * 1.7 + 0.3);
            let (a, b) = (fid(&x, &y, "t").unwrap().score, fid(&y, &x, "t").unwrap().score);
            prop_assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }

        #[test]
        fn equal_diagonal_covariances_leave_mean_term(
            mu in prop::collection::vec(-5.0f64..5.0, 4),
            diag in prop::collection::vec(0.01f64..4.0, 4),
        ) {
            let phi = DMatrix::from_diagonal(&DVector::from_vec(diag));
            let x = FeatureStats::new(DVector::zeros(4), phi.clone(), 10).unwrap();
            let g = FeatureStats::new(DVector::from_vec(mu.clone()), phi, 10).unwrap();
            let expected: f64 = mu.iter().map(|m| m * m).sum();
            prop_assert!((fid_from_stats(&x, &g).unwrap() - expected).abs() <= 1e-8);
        }

        #[test]
        fn rotation_invariant(seed in any::<u64>(), angle in 0.0f64..std::f64::consts::TAU) {
            let x = random_features(30, 2, seed);
            let y = random_features(30, 2, seed.wrapping_add(1)).map(|v| v * 0.5 + 1.0);
            let (c, s) = (angle.cos(), angle.sin());
            let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
            let before = fid(&x, &y, "t").unwrap().score;
            let after = fid(&(&x * &rot), &(&y * &rot), "t").unwrap().score;
            prop_assert!((before - after).abs() <= 1e-6, "{before} vs {after}");
        }
    }
}
