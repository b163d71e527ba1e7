//! Diffusion noise schedule: per-timestep beta values, cumulative signal
//! coefficients and the strided timestep subset used by the deterministic
//! sampler.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noise schedule over training timesteps `1..=t_train`.
///
/// `alpha_bar(t)` is the cumulative product of `1 - beta` up to `t`, with the
/// convention `alpha_bar(0) = 1`. `ddim_steps` is the strictly increasing
/// subset of training timesteps visited by the deterministic sampler; its
/// length is the sampler step count `T`.
///
/// Immutable after construction and safe to share across threads.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoiseSchedule {
    t_train: usize,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    ddim_steps: Vec<usize>,
}

impl NoiseSchedule {
    /// Builds a linear beta schedule with `ddim_count` evenly strided sampler
    /// steps starting at timestep 1 (leading spacing). The stride
    /// `t_train / ddim_count` must be exact.
    pub fn linear(
        t_train: usize,
        beta_start: f64,
        beta_end: f64,
        ddim_count: usize,
    ) -> Result<Self> {
        if t_train == 0 {
            return Err(Error::Parameter("t_train must be positive".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Parameter(format!(
                "beta range must satisfy 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        if ddim_count == 0 || ddim_count > t_train {
            return Err(Error::Parameter(format!(
                "ddim step count must lie in [1, t_train], got {ddim_count}"
            )));
        }
        if t_train % ddim_count != 0 {
            return Err(Error::Parameter(format!(
                "ddim step count {ddim_count} must divide t_train {t_train} exactly"
            )));
        }

        let mut betas = Vec::with_capacity(t_train);
        for i in 0..t_train {
            let frac = if t_train == 1 {
                0.0
            } else {
                i as f64 / (t_train - 1) as f64
            };
            betas.push(beta_start + frac * (beta_end - beta_start));
        }

        let mut alpha_bars = Vec::with_capacity(t_train);
        let mut prod = 1.0f64;
        for &beta in &betas {
            prod *= 1.0 - beta;
            alpha_bars.push(prod);
        }

        let stride = t_train / ddim_count;
        let ddim_steps = (0..ddim_count).map(|i| 1 + i * stride).collect();

        Ok(Self {
            t_train,
            betas,
            alpha_bars,
            ddim_steps,
        })
    }

    pub fn t_train(&self) -> usize {
        self.t_train
    }

    /// Beta at training timestep `t` (1-based).
    pub fn beta(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.t_train, "timestep {t} out of range");
        self.betas[t - 1]
    }

    /// Cumulative signal coefficient at timestep `t`, with `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            return 1.0;
        }
        assert!(t <= self.t_train, "timestep {t} out of range");
        self.alpha_bars[t - 1]
    }

    /// Training timesteps visited by the deterministic sampler, ascending.
    pub fn ddim_steps(&self) -> &[usize] {
        &self.ddim_steps
    }

    /// Sampler step count `T`.
    pub fn num_ddim_steps(&self) -> usize {
        self.ddim_steps.len()
    }

    /// Training timestep at sampler chain position `idx` in `0..=T`, where
    /// position 0 is clean data (timestep 0).
    pub fn chain_timestep(&self, idx: usize) -> usize {
        if idx == 0 {
            0
        } else {
            self.ddim_steps[idx - 1]
        }
    }
}

/// Mixes clean data and noise with the signal/noise split at `alpha_bar`.
fn noise_mix(x0: &[f64], noise: &[f64], alpha_bar: f64) -> Vec<f64> {
    let signal = alpha_bar.sqrt();
    let spread = (1.0 - alpha_bar).sqrt();
    x0.iter()
        .zip(noise)
        .map(|(&x, &n)| signal * x + spread * n)
        .collect()
}

/// Noises `x0` directly to timestep `t`: `sqrt(alpha_bar_t) * x0 +
/// sqrt(1 - alpha_bar_t) * noise`.
pub fn forward_noise(
    x0: &[f64],
    t: usize,
    noise: &[f64],
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if x0.len() != noise.len() {
        return Err(Error::Shape(format!(
            "x0 has dimension {} but noise has dimension {}",
            x0.len(),
            noise.len()
        )));
    }
    if t == 0 || t > sched.t_train() {
        return Err(Error::Parameter(format!(
            "timestep {t} outside [1, {}]",
            sched.t_train()
        )));
    }
    Ok(noise_mix(x0, noise, sched.alpha_bar(t)))
}
