//! Prior, noise model, likelihood and random-walk proposal.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of the clean-response 2-norm used as the noise standard deviation.
pub const DEFAULT_NOISE_FRACTION: f64 = 0.06;

/// Uniform prior on a closed box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    bounds: Vec<(f64, f64)>,
}

impl PriorSpec {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Empty("prior bounds"));
        }
        if let Some((lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo < hi && lo.is_finite() && hi.is_finite())) {
            return Err(Error::Config(format!("prior bound [{lo}, {hi}] is not a proper interval")));
        }
        Ok(Self { bounds })
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    /// Closed-box membership.
    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim() && p.iter().zip(&self.bounds).all(|(v, (lo, hi))| v >= lo && v <= hi)
    }

    /// `0` inside the box (normalizing constant dropped), `-∞` outside.
    pub fn log_prior(&self, p: &[f64]) -> f64 {
        if self.contains(p) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.bounds.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect()
    }
}

/// I.i.d. zero-mean Gaussian measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidSigma(sigma));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// `0.06 · ‖clean‖₂`.
pub fn noise_sigma_from_clean(clean: &[f64]) -> Result<f64> {
    noise_sigma_with_fraction(clean, DEFAULT_NOISE_FRACTION)
}

pub fn noise_sigma_with_fraction(clean: &[f64], fraction: f64) -> Result<f64> {
    if clean.is_empty() {
        return Err(Error::Empty("clean response"));
    }
    Ok(fraction * clean.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Gaussian log-likelihood with the additive constant dropped:
/// `-Σ (prediction_i - d_i)² / (2σ²)`.
pub fn log_likelihood(data: &[f64], prediction: &[f64], noise: &NoiseModel) -> Result<f64> {
    if data.len() != prediction.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            got: prediction.len(),
            context: "prediction vs observations",
        });
    }
    let sigma = noise.sigma();
    if !(sigma > 0.0) {
        return Err(Error::InvalidSigma(sigma));
    }
    let misfit: f64 = data.iter().zip(prediction).map(|(d, p)| (p - d) * (p - d)).sum();
    Ok(-misfit / (2.0 * sigma * sigma))
}

/// Gaussian random-walk proposal `z* = z + L ξ`, `L Lᵀ = covariance`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSpec {
    covariance: Vec<Vec<f64>>,
    cholesky: Vec<Vec<f64>>,
}

impl ProposalSpec {
    pub fn new(covariance: Vec<Vec<f64>>) -> Result<Self> {
        let n = covariance.len();
        if n == 0 || covariance.iter().any(|row| row.len() != n) {
            return Err(Error::NotPositiveDefinite);
        }
        for i in 0..n {
            for j in 0..i {
                if (covariance[i][j] - covariance[j][i]).abs() > 1e-12 * covariance[i][j].abs().max(1.0) {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }
        let cholesky = cholesky(&covariance)?;
        Ok(Self { covariance, cholesky })
    }

    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        let n = variances.len();
        let cov = (0..n)
            .map(|i| (0..n).map(|j| if i == j { variances[i] } else { 0.0 }).collect())
            .collect();
        Self::new(cov)
    }

    pub fn covariance(&self) -> &[Vec<f64>] {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.covariance.len()
    }

    pub fn propose<R: Rng + ?Sized>(&self, z: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: z.len(),
                context: "proposal state",
            });
        }
        let xi: Vec<f64> = (0..z.len()).map(|_| rng.sample(StandardNormal)).collect();
        Ok(z.iter()
            .zip(&self.cholesky)
            .map(|(zi, row)| zi + row.iter().zip(&xi).map(|(l, x)| l * x).sum::<f64>())
            .collect())
    }
}

fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) || !d.is_finite() {
                    return Err(Error::NotPositiveDefinite);
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Log of the Metropolis-Hastings acceptance probability,
/// `min(0, candidate - current + log q-ratio)`.
pub fn log_acceptance(log_post_current: f64, log_post_candidate: f64, log_q_ratio: f64) -> f64 {
    if log_post_candidate == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    (log_post_candidate - log_post_current + log_q_ratio).min(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prior() -> PriorSpec {
        PriorSpec::new(vec![(10.0, 100.0), (0.1, 4.0)]).unwrap()
    }

    #[test]
    fn prior_box() {
        let p = prior();
        assert_eq!(p.log_prior(&[55.0, 2.0]), 0.0);
        assert_eq!(p.log_prior(&[9.9, 2.0]), f64::NEG_INFINITY);
        assert_eq!(p.log_prior(&[10.0, 0.1]), 0.0);
        assert_eq!(p.log_prior(&[100.0, 4.0]), 0.0);
        assert!(PriorSpec::new(vec![(1.0, 1.0)]).is_err());
    }

    #[test]
    fn sigma_from_clean() {
        assert_eq!(noise_sigma_from_clean(&[0.0; 81]).unwrap(), 0.0);
        let mut unit = vec![0.0; 81];
        unit[40] = 1.0;
        assert_eq!(noise_sigma_from_clean(&unit).unwrap(), 0.06);
        assert!(noise_sigma_from_clean(&[]).is_err());
        assert!(NoiseModel::new(0.0).is_err());
    }

    #[test]
    fn likelihood_values() {
        let noise = NoiseModel::new(0.3).unwrap();
        assert_eq!(log_likelihood(&[1.0, 2.0], &[1.0, 2.0], &noise).unwrap(), 0.0);
        assert!((log_likelihood(&[1.0], &[1.3], &noise).unwrap() + 0.5).abs() < 1e-15);
        assert!(log_likelihood(&[1.0], &[1.0, 2.0], &noise).is_err());
    }

    #[test]
    fn likelihood_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d: Vec<f64> = (0..81).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pred: Vec<f64> = (0..81).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sigma = 0.17;
        let mut direct = 0.0;
        for i in 0..81 {
            let r = pred[i] - d[i];
            direct -= 0.5 * (r / sigma) * (r / sigma);
        }
        let ll = log_likelihood(&d, &pred, &NoiseModel::new(sigma).unwrap()).unwrap();
        assert!((ll - direct).abs() <= 1e-12 * direct.abs());
        // Scaling sigma by k divides the log-likelihood by k².
        let ll2 = log_likelihood(&d, &pred, &NoiseModel::new(2.0 * sigma).unwrap()).unwrap();
        assert!((ll2 - ll / 4.0).abs() <= 1e-14 * ll.abs());
    }

    #[test]
    fn acceptance_formula() {
        assert_eq!(log_acceptance(-10.0, -5.0, 0.0), 0.0);
        assert_eq!(log_acceptance(-10.0, f64::NEG_INFINITY, 0.0), f64::NEG_INFINITY);
        assert!((log_acceptance(-3.0, -4.2, 0.0) + 1.2).abs() < 1e-12);
        assert_eq!(log_acceptance(-3.0 + 7.5, -4.2 + 7.5, 0.0), log_acceptance(-3.0, -4.2, 0.0));
    }

    #[test]
    fn proposal_statistics() {
        let spec = ProposalSpec::diagonal(&[3.2, 0.006]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = [45.0, 1.95];
        let n = 100_000;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| spec.propose(&z, &mut rng).unwrap()).collect();
        for (k, var) in [(0usize, 3.2f64), (1, 0.006)] {
            let mean = draws.iter().map(|d| d[k]).sum::<f64>() / n as f64;
            let s2 = draws.iter().map(|d| (d[k] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((mean - z[k]).abs() < 3.0 * (var / n as f64).sqrt());
            if k == 0 {
                assert!((3.0..=3.4).contains(&s2), "{s2}");
            }
        }
    }

    #[test]
    fn proposal_rejects_non_pd() {
        assert!(ProposalSpec::diagonal(&[0.0, 0.0]).is_err());
        assert!(ProposalSpec::new(vec![vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
        assert!(ProposalSpec::new(vec![vec![1.0, 0.5], vec![0.4, 1.0]]).is_err());
    }
}
