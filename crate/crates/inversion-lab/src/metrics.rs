//! Quantitative evaluation: reconstruction error, PSNR, standard-normal
//! log-likelihood of terminal latents (editability proxy), trajectory
//! deviation, and mixture responsibilities (semantic-fidelity proxy).
//!
//! Everything here is a pure function.

use serde::{Deserialize, Serialize};

use crate::denoiser::{Embedding, MixtureModel};
use crate::error::{Error, Result};
use crate::sampler::Trajectory;

/// PSNR value reported when the reconstruction is exact.
pub const PSNR_CAP_DB: f64 = 200.0;

/// Metric block attached to inversion results and harness rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub psnr: f64,
    /// Peak value the PSNR was computed with.
    pub peak: f64,
    /// Standard-normal log-likelihood of the terminal latent.
    pub loglik_z_terminal: f64,
    /// Per-index distance between pivot and replay trajectories.
    pub deviation: Vec<f64>,
    /// Posterior responsibility of the edit-target component, when an edit
    /// was evaluated.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target_responsibility: Option<f64>,
}

/// Mean squared error and `20 log10(peak / sqrt(mse))`, capped at
/// [`PSNR_CAP_DB`] for exact matches.
pub fn mse_psnr(reference: &[f64], candidate: &[f64], peak: f64) -> Result<(f64, f64)> {
    if reference.len() != candidate.len() {
        return Err(Error::Shape(format!(
            "reference has dimension {} but candidate has dimension {}",
            reference.len(),
            candidate.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::Parameter("vectors must be non-empty".into()));
    }
    if !(peak > 0.0) {
        return Err(Error::Parameter("peak must be positive".into()));
    }
    let mse = reference
        .iter()
        .zip(candidate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    let psnr = if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (20.0 * (peak / mse.sqrt()).log10()).min(PSNR_CAP_DB)
    };
    Ok((mse, psnr))
}

/// Log density of `z` under the standard multivariate normal:
/// `-(d/2) ln(2 pi) - ||z||^2 / 2`.
pub fn gaussian_loglik(z: &[f64]) -> f64 {
    let d = z.len() as f64;
    let sq: f64 = z.iter().map(|v| v * v).sum();
    -0.5 * d * (2.0 * std::f64::consts::PI).ln() - 0.5 * sq
}

/// Per-index Euclidean distance between two trajectories of equal length.
pub fn trajectory_deviation(pivot: &Trajectory, replay: &Trajectory) -> Result<Vec<f64>> {
    if pivot.latents.len() != replay.latents.len() {
        return Err(Error::Shape(format!(
            "trajectories have lengths {} and {}",
            pivot.latents.len(),
            replay.latents.len()
        )));
    }
    pivot
        .latents
        .iter()
        .zip(&replay.latents)
        .map(|(a, b)| {
            if a.len() != b.len() {
                return Err(Error::Shape("latent dimensions differ".into()));
            }
            Ok(a.iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt())
        })
        .collect()
}

/// Posterior probability that `x` was generated by component `k`, under
/// uniform component weights.
pub fn component_responsibility(mix: &MixtureModel, x: &[f64], k: usize) -> Result<f64> {
    if k >= mix.num_components() {
        return Err(Error::Parameter(format!(
            "component index {k} out of range (K = {})",
            mix.num_components()
        )));
    }
    let uniform = Embedding::zeros(mix.num_components());
    Ok(mix.responsibilities(x, 1.0, &uniform)?[k])
}

/// PSNR peak for a mixture dataset: the widest extent of the component-mean
/// bounding box plus six component standard deviations.
pub fn psnr_peak(mix: &MixtureModel) -> f64 {
    let d = mix.dim();
    let mut widest = 0.0f64;
    for dim in 0..d {
        let lo = mix
            .means()
            .iter()
            .map(|m| m[dim])
            .fold(f64::INFINITY, f64::min);
        let hi = mix
            .means()
            .iter()
            .map(|m| m[dim])
            .fold(f64::NEG_INFINITY, f64::max);
        widest = widest.max(hi - lo);
    }
    widest + 6.0 * mix.sigma()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::TrajectoryRole;

    #[test]
    fn identical_inputs_hit_the_cap() {
        let (mse, psnr) = mse_psnr(&[1.0, 2.0], &[1.0, 2.0], 8.0).unwrap();
        assert_eq!(mse, 0.0);
        assert_eq!(psnr, PSNR_CAP_DB);
    }

    #[test]
    fn constant_offset_psnr() {
        let (mse, psnr) = mse_psnr(&[0.0, 0.0], &[0.1, 0.1], 8.0).unwrap();
        assert!((mse - 0.01).abs() < 1e-15);
        assert!((psnr - 20.0 * 80.0f64.log10()).abs() < 1e-12);
        assert!((psnr - 38.0618).abs() < 1e-3);
    }

    #[test]
    fn random_pair_matches_two_line_recomputation() {
        let a = [0.3, -1.2, 4.5];
        let b = [0.1, 0.7, 4.0];
        let (mse, psnr) = mse_psnr(&a, &b, 10.0).unwrap();
        let want_mse = ((0.2f64).powi(2) + (1.9f64).powi(2) + (0.5f64).powi(2)) / 3.0;
        let want_psnr = 20.0 * (10.0 / want_mse.sqrt()).log10();
        assert!((mse - want_mse).abs() < 1e-14);
        assert!((psnr - want_psnr).abs() < 1e-12);
    }

    #[test]
    fn psnr_decreasing_in_mse() {
        let mut prev = f64::INFINITY;
        for i in 1..20 {
            let off = 0.05 * i as f64;
            let (_, psnr) = mse_psnr(&[0.0], &[off], 8.0).unwrap();
            assert!(psnr < prev);
            prev = psnr;
        }
    }

    #[test]
    fn shape_and_parameter_errors() {
        assert!(mse_psnr(&[1.0], &[1.0, 2.0], 8.0).is_err());
        assert!(mse_psnr(&[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn loglik_known_values() {
        let two_pi_ln = (2.0 * std::f64::consts::PI).ln();
        assert!((gaussian_loglik(&[0.0, 0.0]) + two_pi_ln).abs() < 1e-12);
        assert!((gaussian_loglik(&[1.0, 0.0]) + two_pi_ln + 0.5).abs() < 1e-12);
        assert!((gaussian_loglik(&[0.0, 0.0]) + 1.8379).abs() < 1e-4);
    }

    #[test]
    fn loglik_monte_carlo_mean() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(4);
        let d = 2;
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let ll = gaussian_loglik(&z);
            sum += ll;
            sumsq += ll * ll;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        let want = -0.5 * d as f64 * ((2.0 * std::f64::consts::PI).ln() + 1.0);
        assert!((mean - want).abs() <= 3.0 * se, "mean {mean}, want {want}");
    }

    #[test]
    fn deviation_basics() {
        let a = Trajectory {
            role: TrajectoryRole::Pivot,
            w: Some(1.0),
            latents: vec![vec![0.0, 0.0], vec![1.0, 1.0]],
        };
        let same = trajectory_deviation(&a, &a).unwrap();
        assert_eq!(same, vec![0.0, 0.0]);
        let b = Trajectory {
            role: TrajectoryRole::Replay,
            w: Some(7.5),
            latents: vec![vec![3.0, 4.0], vec![1.0, 1.0]],
        };
        let dev = trajectory_deviation(&a, &b).unwrap();
        assert_eq!(dev, vec![5.0, 0.0]);
        let short = Trajectory {
            role: TrajectoryRole::Replay,
            w: Some(7.5),
            latents: vec![vec![0.0, 0.0]],
        };
        assert!(trajectory_deviation(&a, &short).is_err());
    }

    #[test]
    fn responsibility_symmetry_and_separation() {
        let mix = MixtureModel::default_toy();
        // The origin is equidistant from the three circle means.
        for k in 0..3 {
            let r = component_responsibility(&mix, &[0.0, 0.0], k).unwrap();
            assert!((r - 1.0 / 3.0).abs() < 1e-12);
        }
        let total: f64 = (0..3)
            .map(|k| component_responsibility(&mix, &[1.0, 0.5], k).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(component_responsibility(&mix, &[0.0, 0.0], 3).is_err());

        // Separation of exactly 8 sigma puts > 0.999 mass on the hit mean.
        let sigma = 0.5;
        let mix = MixtureModel::new(vec![vec![0.0, 0.0], vec![8.0 * sigma, 0.0]], sigma).unwrap();
        let r = component_responsibility(&mix, &[0.0, 0.0], 0).unwrap();
        assert!(r > 0.999, "responsibility {r}");
    }

    #[test]
    fn default_toy_peak() {
        let mix = MixtureModel::default_toy();
        let peak = psnr_peak(&mix);
        // Bounding box: x extent 6, y extent 4 sqrt(3) ~ 6.928; plus 6 sigma.
        assert!((peak - (4.0 * 3.0f64.sqrt() + 1.8)).abs() < 1e-12);
    }
}
