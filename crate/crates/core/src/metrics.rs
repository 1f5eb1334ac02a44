//! Inception Score and Fréchet distance over classifier outputs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SPLITS: usize = 10;
const ROW_SUM_TOLERANCE: f64 = 1e-5;
const SYMMETRY_TOLERANCE: f64 = 1e-8;
const PSD_TOLERANCE: f64 = 1e-6;
const STABILIZER: f64 = 1e-6;
const ROW_BLOCK: usize = 256;

/// Row-stochastic matrix: one class distribution per image.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix(DMatrix<f64>);

impl ProbMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        for (i, row) in m.row_iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite())
                || (sum - 1.0).abs() > ROW_SUM_TOLERANCE
            {
                return Err(Error::InvalidDistribution(i));
            }
        }
        Ok(ProbMatrix(m))
    }

    pub fn from_rows(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }
}

/// Per-image feature vectors, one row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(DMatrix<f64>);

impl FeatureMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalError("feature matrix has non-finite entries".into()));
        }
        Ok(FeatureMatrix(m))
    }

    pub fn from_rows(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InceptionScore {
    pub mean: f64,
    pub std: f64,
}

/// Mean with one refinement pass, so identical values average to exactly
/// themselves.
fn refined_mean(values: impl Iterator<Item = f64> + Clone, n: f64) -> f64 {
    let mean = values.clone().sum::<f64>() / n;
    mean + values.map(|v| v - mean).sum::<f64>() / n
}

/// Inception Score over `splits` contiguous groups of rows (the remainder
/// goes to the last group). Returns the mean and population standard
/// deviation of the per-split scores.
pub fn inception_score(probs: &ProbMatrix, splits: usize) -> Result<InceptionScore> {
    let n = probs.nrows();
    if splits == 0 || n < splits {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= splits <= rows (splits = {splits}, rows = {n})"
        )));
    }
    let m = probs.matrix();
    let size = n / splits;
    let scores: Vec<f64> = (0..splits)
        .map(|s| {
            let start = s * size;
            let end = if s + 1 == splits { n } else { start + size };
            let part = m.rows(start, end - start);
            let rows = (end - start) as f64;
            let marginal: Vec<f64> = part.column_iter().map(|c| refined_mean(c.iter().copied(), rows)).collect();
            let mean_kl = part
                .row_iter()
                .map(|row| {
                    row.iter()
                        .zip(&marginal)
                        .filter(|(&p, _)| p > 0.0)
                        .map(|(&p, &q)| p * (p / q).ln())
                        .sum::<f64>()
                })
                .sum::<f64>()
                / rows;
            mean_kl.max(0.0).exp()
        })
        .collect();
    let mean = refined_mean(scores.iter().copied(), splits as f64);
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok(InceptionScore {
        mean,
        std: var.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianStats {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                actual: covariance.nrows(),
            });
        }
        Ok(GaussianStats { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Column means and unbiased covariance, accumulated in row blocks that are
/// reduced in block order.
pub fn fit_gaussian(features: &FeatureMatrix) -> Result<GaussianStats> {
    let x = features.matrix();
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::InsufficientSamples(n));
    }
    let blocks: Vec<(usize, usize)> = (0..n)
        .step_by(ROW_BLOCK)
        .map(|s| (s, ROW_BLOCK.min(n - s)))
        .collect();
    let sums: Vec<DVector<f64>> = blocks
        .par_iter()
        .map(|&(s, len)| x.rows(s, len).row_sum().transpose())
        .collect();
    let mean = sums.into_iter().fold(DVector::zeros(d), |acc, s| acc + s) / n as f64;
    let scatters: Vec<DMatrix<f64>> = blocks
        .par_iter()
        .map(|&(s, len)| {
            let mut centered = x.rows(s, len).into_owned();
            for mut row in centered.row_iter_mut() {
                row -= mean.transpose();
            }
            centered.transpose() * &centered
        })
        .collect();
    let scatter = scatters.into_iter().fold(DMatrix::zeros(d, d), |acc, s| acc + s);
    let cov = scatter / (n - 1) as f64;
    let covariance = (&cov + cov.transpose()) * 0.5;
    GaussianStats::new(mean, covariance)
}

fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Principal square root of a symmetric positive semi-definite matrix via a
/// symmetric eigendecomposition. Eigenvalues slightly below zero are clamped.
pub fn sqrtm_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalError("matrix has non-finite entries".into()));
    }
    let scale = a.amax().max(1.0);
    let asym = max_asymmetry(a);
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::NumericalError("symmetric eigensolver did not converge".into()))?;
    let floor = -PSD_TOLERANCE * eig.eigenvalues.amax().max(1.0);
    if let Some(&bad) = eig.eigenvalues.iter().find(|&&l| l < floor) {
        return Err(Error::NotPositiveSemiDefinite(bad));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    let root = q * DMatrix::from_diagonal(&roots) * q.transpose();
    Ok((&root + root.transpose()) * 0.5)
}

fn trace_sqrt_product(s1: &DMatrix<f64>, s2: &DMatrix<f64>) -> Result<f64> {
    let root1 = sqrtm_psd(s1)?;
    let inner = &root1 * s2 * &root1;
    let inner = (&inner + inner.transpose()) * 0.5;
    Ok(sqrtm_psd(&inner)?.trace())
}

/// Squared Wasserstein-2 distance between two Gaussians:
/// ‖μ1−μ2‖² + Tr Σ1 + Tr Σ2 − 2 Tr (Σ1^½ Σ2 Σ1^½)^½.
pub fn frechet_distance(g1: &GaussianStats, g2: &GaussianStats) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimensionMismatch {
            expected: g1.dim(),
            actual: g2.dim(),
        });
    }
    let diff = (&g1.mean - &g2.mean).norm_squared();
    let trace_term = match trace_sqrt_product(&g1.covariance, &g2.covariance) {
        Ok(t) => t,
        Err(Error::NumericalError(msg)) => {
            log::warn!("{msg}; retrying with {STABILIZER:e} added to covariance diagonals");
            let eye = DMatrix::<f64>::identity(g1.dim(), g1.dim()) * STABILIZER;
            trace_sqrt_product(&(&g1.covariance + &eye), &(&g2.covariance + &eye))?
        }
        Err(e) => return Err(e),
    };
    let fid = diff + g1.covariance.trace() + g2.covariance.trace() - 2.0 * trace_term;
    if fid < -PSD_TOLERANCE {
        log::warn!("Fréchet distance {fid:e} below the numerical floor; clamping to 0");
    }
    Ok(fid.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn uniform_rows_score_one() {
        for (n, c) in [(64, 10), (50, 7), (10, 1000), (16, 4)] {
            let p = ProbMatrix::new(DMatrix::from_element(n, c, 1.0 / c as f64)).unwrap();
            for splits in [1, 2, n.min(10)] {
                let is = inception_score(&p, splits).unwrap();
                assert_eq!((is.mean, is.std), (1.0, 0.0), "n = {n}, c = {c}");
            }
        }
    }

    #[test]
    fn balanced_one_hot_scores_class_count() {
        let c = 10;
        let p = ProbMatrix::new(DMatrix::from_fn(100, c, |i, j| (i % c == j) as u8 as f64)).unwrap();
        let is = inception_score(&p, 1).unwrap();
        assert!((is.mean - c as f64).abs() < 1e-9);
    }

    #[test]
    fn invalid_rows_are_reported() {
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.7, 0.7]);
        assert!(matches!(ProbMatrix::new(m), Err(Error::InvalidDistribution(1))));
        let m = DMatrix::from_row_slice(1, 2, &[1.5, -0.5]);
        assert!(matches!(ProbMatrix::new(m), Err(Error::InvalidDistribution(0))));
        let p = ProbMatrix::new(DMatrix::from_element(3, 2, 0.5)).unwrap();
        assert!(inception_score(&p, 4).is_err());
        assert!(inception_score(&p, 0).is_err());
    }

    #[test]
    fn two_point_gaussian() {
        let f = FeatureMatrix::from_rows(2, 2, &[0.0, 0.0, 2.0, 2.0]).unwrap();
        let g = fit_gaussian(&f).unwrap();
        assert_eq!(g.mean.as_slice(), &[1.0, 1.0]);
        assert_eq!(g.covariance, DMatrix::from_element(2, 2, 2.0));
    }

    #[test]
    fn identical_rows_have_zero_covariance() {
        let f = FeatureMatrix::new(DMatrix::from_fn(5, 3, |_, j| j as f64)).unwrap();
        let g = fit_gaussian(&f).unwrap();
        assert_eq!(g.covariance, DMatrix::zeros(3, 3));
        let single = FeatureMatrix::from_rows(1, 2, &[1.0, 2.0]).unwrap();
        assert!(matches!(fit_gaussian(&single), Err(Error::InsufficientSamples(1))));
    }

    #[test]
    fn sampled_mean_is_recovered() {
        let mu = [1.0, -2.0, 0.5];
        let sigma = [1.0, 3.0, 0.2];
        let n = 500;
        let mut rng = crate::rng::child(42, &[]);
        let data: Vec<f64> = (0..n)
            .flat_map(|_| {
                (0..3)
                    .map(|j| mu[j] + sigma[j] * rng.sample::<f64, _>(StandardNormal))
                    .collect::<Vec<_>>()
            })
            .collect();
        let g = fit_gaussian(&FeatureMatrix::from_rows(n, 3, &data).unwrap()).unwrap();
        for j in 0..3 {
            assert!((g.mean[j] - mu[j]).abs() < 5.0 * sigma[j] / (n as f64).sqrt());
        }
    }

    #[test]
    fn blocked_covariance_matches_direct_formula() {
        let n = 700;
        let d = 4;
        let mut rng = crate::rng::child(3, &[]);
        let data: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
        let x = DMatrix::from_row_slice(n, d, &data);
        let g = fit_gaussian(&FeatureMatrix::new(x.clone()).unwrap()).unwrap();
        for a in 0..d {
            for b in 0..d {
                let ma = x.column(a).mean();
                let mb = x.column(b).mean();
                let c: f64 = (0..n).map(|i| (x[(i, a)] - ma) * (x[(i, b)] - mb)).sum::<f64>()
                    / (n - 1) as f64;
                assert!((g.covariance[(a, b)] - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sqrtm_simple_cases() {
        let eye = DMatrix::<f64>::identity(3, 3);
        assert!((sqrtm_psd(&eye).unwrap() - &eye).amax() < 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = sqrtm_psd(&d).unwrap();
        assert!((r - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).amax() < 1e-14);
    }

    #[test]
    fn sqrtm_rejects_bad_input() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(sqrtm_psd(&asym), Err(Error::NotSymmetric(_))));
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(sqrtm_psd(&neg), Err(Error::NotPositiveSemiDefinite(_))));
        let tiny_neg = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-9]));
        let r = sqrtm_psd(&tiny_neg).unwrap();
        assert_eq!(r[(1, 1)], 0.0);
    }

    #[test]
    fn fid_identity_and_shift() {
        let d = 5;
        let g = GaussianStats::new(DVector::zeros(d), DMatrix::identity(d, d)).unwrap();
        assert!(frechet_distance(&g, &g).unwrap() < 1e-6);
        let v = DVector::from_fn(d, |i, _| i as f64 + 0.5);
        let h = GaussianStats::new(v.clone(), DMatrix::identity(d, d)).unwrap();
        let fid = frechet_distance(&g, &h).unwrap();
        assert!((fid - v.norm_squared()).abs() <= 1e-8 * v.norm_squared());
        let bad = GaussianStats::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(frechet_distance(&g, &bad), Err(Error::DimensionMismatch { .. })));
    }
}
