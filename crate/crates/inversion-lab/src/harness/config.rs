//! Experiment configuration: a single strict JSON document drives every
//! runner. Unknown keys are rejected so config drift surfaces immediately.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::denoiser::{AnalyticDenoiser, MixtureModel, PromptTable};
use crate::error::{Error, Result};
use crate::inversion::{InversionConfig, PivotSource, Variant};
use crate::metrics::psnr_peak;
use crate::sampler::GuidanceConfig;
use crate::schedule::NoiseSchedule;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleBlock {
    pub t_train: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub ddim_steps: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureBlock {
    pub means: Vec<Vec<f64>>,
    pub sigma: f64,
    /// One-hot logit scale for class prompts.
    pub kappa: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionBlock {
    pub variant: Variant,
    pub pivot_source: PivotSource,
    pub iterations: usize,
    pub lr: f64,
    pub early_stop: f64,
    /// Heavy-ball momentum; zero (the default) is the plain update.
    #[serde(default)]
    pub momentum: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// Iteration counts swept by the ablation.
    pub iteration_counts: Vec<usize>,
    /// Guidance scales swept by the inversion analysis; must lie in [1, 8].
    pub guidance_scales: Vec<f64>,
    /// SDEdit noise strengths; must lie strictly inside (0, 1).
    pub sdedit_t0: Vec<f64>,
}

/// Everything a harness run needs. `(config, seeds)` fully determines every
/// output byte apart from wall-clock columns.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schedule: ScheduleBlock,
    pub mixture: MixtureBlock,
    pub guidance: GuidanceConfig,
    pub inversion: InversionBlock,
    pub sweeps: SweepBlock,
    /// Class index of the inverted sample.
    pub source_class: usize,
    /// Class index used by editing and SDEdit evaluations.
    pub target_class: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let toy = MixtureModel::default_toy();
        Self {
            schedule: ScheduleBlock {
                t_train: 1000,
                beta_start: 1e-4,
                beta_end: 0.02,
                ddim_steps: 50,
            },
            mixture: MixtureBlock {
                means: toy.means().to_vec(),
                sigma: toy.sigma(),
                kappa: 4.0,
            },
            guidance: GuidanceConfig { w: 7.5 },
            inversion: InversionBlock {
                variant: Variant::NullPivotal,
                pivot_source: PivotSource::DdimW1,
                iterations: 10,
                // The loss is an unnormalized squared norm, so the step size
                // scales with the data dimension; 0.01 suits latents with
                // tens of thousands of coordinates, while the planar toy
                // needs a correspondingly larger step to move at all.
                lr: 2.0,
                early_stop: 1e-5,
                momentum: 0.0,
            },
            sweeps: SweepBlock {
                iteration_counts: vec![1, 2, 5, 10, 20],
                guidance_scales: (1..=8).map(|w| w as f64).collect(),
                sdedit_t0: vec![0.4, 0.6, 0.8],
            },
            source_class: 0,
            target_class: 1,
            seeds: (1..=20).collect(),
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Runtime objects assembled from a validated config.
pub struct Lab {
    pub schedule: NoiseSchedule,
    pub mixture: MixtureModel,
    pub table: PromptTable,
    pub denoiser: AnalyticDenoiser,
    pub psnr_peak: f64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.build()?;
        let k = self.mixture.means.len();
        if self.source_class >= k || self.target_class >= k {
            return Err(Error::Config(format!(
                "class indices must be below {k} (source {}, target {})",
                self.source_class, self.target_class
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list must be non-empty".into()));
        }
        if self.sweeps.iteration_counts.is_empty() {
            return Err(Error::Config("iteration-count sweep must be non-empty".into()));
        }
        for &w in &self.sweeps.guidance_scales {
            if !(1.0..=8.0).contains(&w) {
                return Err(Error::Config(format!(
                    "guidance sweep values must lie in [1, 8], got {w}"
                )));
            }
        }
        for &t0 in &self.sweeps.sdedit_t0 {
            if !(t0 > 0.0 && t0 < 1.0) {
                return Err(Error::Config(format!(
                    "sdedit t0 values must lie in (0, 1), got {t0}"
                )));
            }
        }
        if !self.guidance.w.is_finite() {
            return Err(Error::Config("guidance scale must be finite".into()));
        }
        self.inversion_config().validate().map_err(|e| match e {
            Error::Parameter(msg) => Error::Config(msg),
            other => other,
        })?;
        Ok(())
    }

    /// Builds the schedule, mixture, prompt table and analytic denoiser.
    pub fn build(&self) -> Result<Lab> {
        let schedule = NoiseSchedule::linear(
            self.schedule.t_train,
            self.schedule.beta_start,
            self.schedule.beta_end,
            self.schedule.ddim_steps,
        )
        .map_err(|e| Error::Config(e.to_string()))?;
        let mixture = MixtureModel::new(self.mixture.means.clone(), self.mixture.sigma)
            .map_err(|e| Error::Config(e.to_string()))?;
        let table = PromptTable::with_classes(mixture.num_components(), self.mixture.kappa)
            .map_err(|e| Error::Config(e.to_string()))?;
        let denoiser = AnalyticDenoiser::new(mixture.clone(), schedule.clone());
        let peak = psnr_peak(&mixture);
        Ok(Lab {
            schedule,
            mixture,
            table,
            denoiser,
            psnr_peak: peak,
        })
    }

    /// The inversion hyperparameters implied by this config.
    pub fn inversion_config(&self) -> InversionConfig {
        let peak = MixtureModel::new(self.mixture.means.clone(), self.mixture.sigma)
            .map(|m| psnr_peak(&m))
            .unwrap_or(1.0);
        InversionConfig {
            variant: self.inversion.variant,
            pivot_source: self.inversion.pivot_source,
            w: self.guidance.w,
            iterations: self.inversion.iterations,
            lr: self.inversion.lr,
            early_stop: self.inversion.early_stop,
            momentum: self.inversion.momentum,
            psnr_peak: peak,
        }
    }

    pub fn source_token(&self) -> String {
        format!("class{}", self.source_class)
    }

    pub fn target_token(&self) -> String {
        format!("class{}", self.target_class)
    }
}
