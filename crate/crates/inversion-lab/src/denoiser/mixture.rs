//! Isotropic Gaussian mixture used as the data distribution, together with
//! the closed-form posterior over clean data given a noised observation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::denoiser::embedding::Embedding;
use crate::error::{Error, Result};

/// Mixture of `K` isotropic Gaussian components sharing one standard
/// deviation. Component weights are supplied per query through an embedding.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixtureModel {
    means: Vec<Vec<f64>>,
    sigma: f64,
}

/// Posterior quantities for an observation `z = sqrt(ab) * x0 + sqrt(1-ab) * eps`.
pub struct Posterior {
    /// Component responsibilities (a probability vector).
    pub responsibilities: Vec<f64>,
    /// Per-component posterior means of the clean data.
    pub component_means: Vec<Vec<f64>>,
    /// Responsibility-weighted posterior mean.
    pub mean: Vec<f64>,
}

impl MixtureModel {
    pub fn new(means: Vec<Vec<f64>>, sigma: f64) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::Parameter("mixture needs at least one component".into()));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(Error::Parameter("component means must be non-empty".into()));
        }
        for m in &means {
            if m.len() != d {
                return Err(Error::Shape("component means must share one dimension".into()));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parameter("component means must be finite".into()));
            }
        }
        for i in 0..means.len() {
            for j in (i + 1)..means.len() {
                if means[i] == means[j] {
                    return Err(Error::Parameter(format!(
                        "component means {i} and {j} coincide"
                    )));
                }
            }
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Parameter("sigma must be finite and non-negative".into()));
        }
        Ok(Self { means, sigma })
    }

    /// Default toy model: three components on a circle of radius 4 in the
    /// plane, sigma 0.3.
    pub fn default_toy() -> Self {
        let r = 4.0;
        let means = (0..3)
            .map(|k| {
                let angle = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
                vec![r * angle.cos(), r * angle.sin()]
            })
            .collect();
        Self::new(means, 0.3).expect("default toy model is valid")
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn num_components(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Draws a sample with component weights `softmax(c)`.
    pub fn sample<R: Rng + ?Sized>(&self, c: &Embedding, rng: &mut R) -> Result<Vec<f64>> {
        self.check_embed(c)?;
        let weights = c.weights();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        self.sample_component(k, rng)
    }

    /// Draws from one specific component.
    pub fn sample_component<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<f64>> {
        if k >= self.num_components() {
            return Err(Error::Parameter(format!(
                "component index {k} out of range (K = {})",
                self.num_components()
            )));
        }
        Ok(self.means[k]
            .iter()
            .map(|&m| {
                let draw: f64 = StandardNormal.sample(rng);
                m + self.sigma * draw
            })
            .collect())
    }

    fn check_embed(&self, c: &Embedding) -> Result<()> {
        if c.dim() != self.num_components() {
            return Err(Error::Shape(format!(
                "embedding has dimension {} but the mixture has {} components",
                c.dim(),
                self.num_components()
            )));
        }
        Ok(())
    }

    fn check_obs(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::Shape(format!(
                "observation has dimension {} but the mixture has dimension {}",
                z.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Full posterior for `x0` given `z` observed at signal level `alpha_bar`
    /// with component weights `softmax(c)`.
    ///
    /// With `v = alpha_bar * sigma^2 + (1 - alpha_bar)`, responsibilities are
    /// proportional to `softmax(c)_k * N(z; sqrt(alpha_bar) * mu_k, v I)`
    /// (computed with log-sum-exp stabilization) and the per-component mean is
    /// `mu_k + (sqrt(alpha_bar) * sigma^2 / v) * (z - sqrt(alpha_bar) * mu_k)`.
    pub fn posterior(&self, z: &[f64], alpha_bar: f64, c: &Embedding) -> Result<Posterior> {
        self.check_embed(c)?;
        self.check_obs(z)?;
        if !(alpha_bar > 0.0 && alpha_bar <= 1.0) {
            return Err(Error::Parameter(format!(
                "alpha_bar must lie in (0, 1], got {alpha_bar}"
            )));
        }
        let var = alpha_bar * self.sigma * self.sigma + (1.0 - alpha_bar);
        if var == 0.0 {
            return Err(Error::DegeneratePosterior);
        }
        let root = alpha_bar.sqrt();
        let shrink = root * self.sigma * self.sigma / var;

        // log responsibility (up to a constant): c_k - ||z - sqrt(ab) mu_k||^2 / (2v)
        let mut log_resp = Vec::with_capacity(self.num_components());
        let mut component_means = Vec::with_capacity(self.num_components());
        for (k, mu) in self.means.iter().enumerate() {
            let mut sq = 0.0;
            let mut m = Vec::with_capacity(self.dim());
            for (zi, mi) in z.iter().zip(mu) {
                let diff = zi - root * mi;
                sq += diff * diff;
                m.push(mi + shrink * diff);
            }
            log_resp.push(c.logits()[k] - sq / (2.0 * var));
            component_means.push(m);
        }
        let responsibilities = super::embedding::softmax(&log_resp);

        let mut mean = vec![0.0; self.dim()];
        for (r, m) in responsibilities.iter().zip(&component_means) {
            for (acc, &mi) in mean.iter_mut().zip(m) {
                *acc += r * mi;
            }
        }

        Ok(Posterior {
            responsibilities,
            component_means,
            mean,
        })
    }

    /// Posterior mean of the clean data (minimum-MSE estimate of `x0`).
    pub fn posterior_mean(&self, z: &[f64], alpha_bar: f64, c: &Embedding) -> Result<Vec<f64>> {
        Ok(self.posterior(z, alpha_bar, c)?.mean)
    }

    /// Posterior component responsibilities.
    pub fn responsibilities(&self, z: &[f64], alpha_bar: f64, c: &Embedding) -> Result<Vec<f64>> {
        Ok(self.posterior(z, alpha_bar, c)?.responsibilities)
    }
}
