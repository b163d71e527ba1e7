//! Desk-scale laboratory for inverting classifier-free-guided diffusion
//! models.
//!
//! The crate implements deterministic DDIM sampling and inversion, pivotal
//! null-text optimization with its ablation variants, and a seeded experiment
//! harness, all exercised against a conditional Gaussian-mixture data model
//! whose optimal noise predictor is known in closed form. That closed form
//! makes every claim checkable: the analytic denoiser is the exact
//! minimum-MSE predictor, so sampler and optimizer behavior can be separated
//! from model error.
//!
//! Modules:
//! - [`schedule`]: beta/alpha-bar tables and the strided sampler timesteps.
//! - [`denoiser`]: the analytic mixture denoiser, a trainable per-timestep
//!   affine denoiser, and the prompt-to-embedding map.
//! - [`sampler`]: guided prediction, DDIM step/inversion, ancestral sampling
//!   and the SDEdit baseline.
//! - [`inversion`]: pivotal null-text optimization, the global and
//!   stochastic ablation variants, reconstruction and editing.
//! - [`metrics`]: reconstruction error, normal log-likelihood of terminal
//!   latents, trajectory deviation and mixture responsibilities.
//! - [`harness`]: config-driven, seed-deterministic experiment runners with
//!   CSV/JSON artifacts.
//!
//! The `examples/` directory contains one runnable walk-through per major
//! capability; the `inversion-lab` binary exposes the same runners as CLI
//! subcommands.

pub mod denoiser;
mod error;
pub mod harness;
pub mod inversion;
pub mod metrics;
pub mod sampler;
pub mod schedule;

pub use error::{Error, Result};
