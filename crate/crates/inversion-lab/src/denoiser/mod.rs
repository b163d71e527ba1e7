//! Noise-prediction models.
//!
//! Two interchangeable denoisers drive every experiment: an analytic one that
//! evaluates the exact minimum-MSE noise predictor for the Gaussian-mixture
//! data model, and a per-timestep affine model fitted by least squares on
//! noise-prediction data. Both are differentiable in the conditioning
//! embedding, which is what the inversion optimizers exploit.

mod embedding;
mod mixture;

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use embedding::{Embedding, PromptTable};
pub use mixture::{MixtureModel, Posterior};

use crate::error::{Error, Result};
use crate::schedule::{forward_noise, NoiseSchedule};

/// Conditional noise predictor `eps(z, t, c)`.
///
/// Implementations are immutable once constructed and safe to share across
/// threads.
pub trait Denoiser {
    /// Data dimension.
    fn dim(&self) -> usize;

    /// Embedding (logit) dimension.
    fn embed_dim(&self) -> usize;

    /// Predicts the noise component of `z` at timestep `t` under
    /// conditioning `c`.
    fn predict_noise(&self, z: &[f64], t: usize, c: &Embedding) -> Result<Vec<f64>>;

    /// Prediction together with its Jacobian in the embedding logits,
    /// row-major `dim x embed_dim`.
    fn predict_noise_with_grad(
        &self,
        z: &[f64],
        t: usize,
        c: &Embedding,
    ) -> Result<(Vec<f64>, Vec<f64>)>;
}

/// Exact minimum-MSE noise predictor for the mixture data model:
/// `eps = (z - sqrt(alpha_bar) * posterior_mean) / sqrt(1 - alpha_bar)`.
#[derive(Clone, Debug)]
pub struct AnalyticDenoiser {
    mixture: MixtureModel,
    schedule: NoiseSchedule,
}

impl AnalyticDenoiser {
    pub fn new(mixture: MixtureModel, schedule: NoiseSchedule) -> Self {
        Self { mixture, schedule }
    }

    pub fn mixture(&self) -> &MixtureModel {
        &self.mixture
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn alpha_bar_checked(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.schedule.t_train() {
            return Err(Error::Parameter(format!(
                "timestep {t} outside [1, {}]",
                self.schedule.t_train()
            )));
        }
        let ab = self.schedule.alpha_bar(t);
        if ab >= 1.0 {
            return Err(Error::Parameter(format!(
                "noise prediction needs alpha_bar < 1, got {ab} at t = {t}"
            )));
        }
        Ok(ab)
    }
}

impl Denoiser for AnalyticDenoiser {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn embed_dim(&self) -> usize {
        self.mixture.num_components()
    }

    fn predict_noise(&self, z: &[f64], t: usize, c: &Embedding) -> Result<Vec<f64>> {
        let ab = self.alpha_bar_checked(t)?;
        let mean = self.mixture.posterior_mean(z, ab, c)?;
        let root = ab.sqrt();
        let spread = (1.0 - ab).sqrt();
        Ok(z.iter()
            .zip(&mean)
            .map(|(&zi, &mi)| (zi - root * mi) / spread)
            .collect())
    }

    fn predict_noise_with_grad(
        &self,
        z: &[f64],
        t: usize,
        c: &Embedding,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let ab = self.alpha_bar_checked(t)?;
        let post = self.mixture.posterior(z, ab, c)?;
        let root = ab.sqrt();
        let spread = (1.0 - ab).sqrt();
        let d = self.dim();
        let k = self.embed_dim();

        let eps = z
            .iter()
            .zip(&post.mean)
            .map(|(&zi, &mi)| (zi - root * mi) / spread)
            .collect();

        // d posterior_mean / d c_j = r_j * (m_j - mean); the noise prediction
        // scales it by -sqrt(ab) / sqrt(1 - ab).
        let scale = -root / spread;
        let mut jac = vec![0.0; d * k];
        for j in 0..k {
            let r = post.responsibilities[j];
            for i in 0..d {
                jac[i * k + j] = scale * r * (post.component_means[j][i] - post.mean[i]);
            }
        }
        Ok((eps, jac))
    }
}

/// One affine parameter block: `eps_hat = A z + B c + b`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AffineBlock {
    /// `dim x dim`, row-major.
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    /// `dim x embed_dim`, row-major.
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    /// Length `dim`.
    #[serde(rename = "b")]
    pub bias: Vec<f64>,
}

/// Per-timestep affine noise predictor with one parameter block per sampler
/// timestep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AffineDenoiser {
    dim: usize,
    embed_dim: usize,
    blocks: BTreeMap<usize, AffineBlock>,
    /// Mean training loss per fitted timestep.
    train_loss: BTreeMap<usize, f64>,
}

impl AffineDenoiser {
    pub fn block(&self, t: usize) -> Option<&AffineBlock> {
        self.blocks.get(&t)
    }

    pub fn train_loss(&self, t: usize) -> Option<f64> {
        self.train_loss.get(&t).copied()
    }

    pub fn timesteps(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks.keys().copied()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let model: AffineDenoiser = serde_json::from_str(json)?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let (d, k) = (self.dim, self.embed_dim);
        if d == 0 || k == 0 {
            return Err(Error::Config("denoiser dimensions must be positive".into()));
        }
        for (t, block) in &self.blocks {
            if block.a.len() != d * d || block.b.len() != d * k || block.bias.len() != d {
                return Err(Error::Config(format!(
                    "parameter block at timestep {t} has inconsistent shapes"
                )));
            }
        }
        Ok(())
    }
}

impl Denoiser for AffineDenoiser {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    fn predict_noise(&self, z: &[f64], t: usize, c: &Embedding) -> Result<Vec<f64>> {
        if z.len() != self.dim {
            return Err(Error::Shape(format!(
                "latent has dimension {} but the model expects {}",
                z.len(),
                self.dim
            )));
        }
        if c.dim() != self.embed_dim {
            return Err(Error::Shape(format!(
                "embedding has dimension {} but the model expects {}",
                c.dim(),
                self.embed_dim
            )));
        }
        let block = self.blocks.get(&t).ok_or(Error::MissingTimestep(t))?;
        let (d, k) = (self.dim, self.embed_dim);
        let mut out = block.bias.clone();
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += block.a[i * d + j] * z[j];
            }
            for j in 0..k {
                acc += block.b[i * k + j] * c.logits()[j];
            }
            out[i] += acc;
        }
        Ok(out)
    }

    fn predict_noise_with_grad(
        &self,
        z: &[f64],
        t: usize,
        c: &Embedding,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let eps = self.predict_noise(z, t, c)?;
        let block = self.blocks.get(&t).ok_or(Error::MissingTimestep(t))?;
        Ok((eps, block.b.clone()))
    }
}

/// Fits the affine denoiser by closed-form least squares, one block per
/// sampler timestep.
///
/// For each timestep, `n_samples` triples `(x0, c, noise)` are drawn: a prompt
/// token uniformly from the table, `x0` from the mixture under that token's
/// weights, `noise` standard normal; the noised latent follows the forward
/// process. The block minimizes `sum ||noise - (A z + B c + b)||^2`.
pub fn train_affine(
    mixture: &MixtureModel,
    table: &PromptTable,
    schedule: &NoiseSchedule,
    n_samples: usize,
    rng_seed: u64,
) -> Result<AffineDenoiser> {
    if table.embed_dim() != mixture.num_components() {
        return Err(Error::Shape(
            "prompt table dimension must match the mixture component count".into(),
        ));
    }
    let d = mixture.dim();
    let k = mixture.num_components();
    let p = d + k + 1;
    let tokens: Vec<String> = table.tokens().map(str::to_owned).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);

    let mut blocks = BTreeMap::new();
    let mut train_loss = BTreeMap::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    for &t in schedule.ddim_steps() {
        let mut xtx = DMatrix::<f64>::zeros(p, p);
        let mut xty = DMatrix::<f64>::zeros(p, d);
        rows.clear();
        targets.clear();
        let mut row = vec![0.0; p];
        for _ in 0..n_samples {
            let token = &tokens[rng.random_range(0..tokens.len())];
            let c = table.embed(token)?;
            let x0 = mixture.sample(&c, &mut rng)?;
            let noise: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let z = forward_noise(&x0, t, &noise, schedule)?;

            row[..d].copy_from_slice(&z);
            row[d..d + k].copy_from_slice(c.logits());
            row[p - 1] = 1.0;
            for i in 0..p {
                for j in i..p {
                    let v = row[i] * row[j];
                    xtx[(i, j)] += v;
                    if i != j {
                        xtx[(j, i)] += v;
                    }
                }
                for j in 0..d {
                    xty[(i, j)] += row[i] * noise[j];
                }
            }
            rows.extend_from_slice(&row);
            targets.extend_from_slice(&noise);
        }

        let chol = Cholesky::new(xtx).ok_or_else(|| Error::Fit {
            timestep: t,
            reason: "rank-deficient design matrix".into(),
        })?;
        let w = chol.solve(&xty);

        // Mean squared residual by a direct second pass; the algebraic
        // shortcut through the normal equations cancels catastrophically
        // when the fit is near exact.
        let mut loss = 0.0;
        for s in 0..n_samples {
            let row = &rows[s * p..(s + 1) * p];
            for j in 0..d {
                let pred: f64 = (0..p).map(|i| row[i] * w[(i, j)]).sum();
                let diff = targets[s * d + j] - pred;
                loss += diff * diff;
            }
        }
        loss /= n_samples as f64;

        let mut a = vec![0.0; d * d];
        let mut b = vec![0.0; d * k];
        let mut bias = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] = w[(j, i)];
            }
            for j in 0..k {
                b[i * k + j] = w[(d + j, i)];
            }
            bias[i] = w[(p - 1, i)];
        }
        blocks.insert(t, AffineBlock { a, b, bias });
        train_loss.insert(t, loss);
    }

    Ok(AffineDenoiser {
        dim: d,
        embed_dim: k,
        blocks,
        train_loss,
    })
}
