//! Thin CLI over the experiment harness. Everything interesting lives in the
//! library; see the examples directory for programmatic use.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use inversion_lab::harness::{
    ablation_csv, emit_report, guidance_csv, parse_ablation_csv, parse_guidance_csv,
    parse_sdedit_csv, run_ablation, run_guidance_sweep, run_inversion, run_sample,
    run_sdedit_eval, sdedit_csv, ExperimentConfig, Report,
};
use inversion_lab::inversion::edit;
use inversion_lab::metrics::{component_responsibility, MetricReport};
use inversion_lab::Result;

#[derive(Parser)]
#[command(
    name = "inversion-lab",
    about = "Seeded experiments on DDIM inversion and null-text optimization over a Gaussian-mixture toy model",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TableFormat {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Write the default experiment config as JSON.
    GenConfig {
        /// Output path.
        #[arg(long, default_value = "config.json")]
        out: PathBuf,
    },
    /// Run the configured inversion variant once and write the result JSON.
    Invert {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample one guided trajectory from a fresh terminal latent.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Invert the source-class sample, then replay with the target class.
    Edit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every inversion variant over the configured sweep grid.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
        format: TableFormat,
    },
    /// Invert at each configured guidance scale and record editability and
    /// round-trip quality.
    SweepGuidance {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
        format: TableFormat,
    },
    /// Compare SDEdit with and without a prior null-text inversion.
    SdeditEval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
        format: TableFormat,
    },
    /// Aggregate the run tables into medians, series files and flags.
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_out_dir(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_table(
    cfg: &ExperimentConfig,
    stem: &str,
    format: TableFormat,
    csv: String,
    json: impl Serialize,
) -> Result<PathBuf> {
    ensure_out_dir(cfg)?;
    let path = match format {
        TableFormat::Csv => {
            let path = cfg.out_dir.join(format!("{stem}.csv"));
            fs::write(&path, csv)?;
            path
        }
        TableFormat::Json => {
            let path = cfg.out_dir.join(format!("{stem}.json"));
            write_json(&path, &json)?;
            path
        }
    };
    Ok(path)
}

#[derive(Serialize)]
struct EditOutcome {
    edited: Vec<f64>,
    target_responsibility: f64,
    reconstruction: MetricReport,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenConfig { out } => {
            let cfg = ExperimentConfig::default();
            cfg.save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Invert { config, seed, out } => {
            let cfg = load_config(&config, seed, out)?;
            let lab = cfg.build()?;
            ensure_out_dir(&cfg)?;
            let seed = cfg.seeds[0];
            let result = run_inversion(&cfg, &lab, seed)?;
            let path = cfg.out_dir.join("invert.json");
            write_json(&path, &result)?;
            println!(
                "variant {} seed {seed}: mse {:.6e}, psnr {:.2} dB, {} gradient evaluations -> {}",
                result.variant.as_str(),
                result.metrics.mse,
                result.metrics.psnr,
                result.iterations_used(),
                path.display()
            );
        }
        Command::Sample { config, seed, out } => {
            let cfg = load_config(&config, seed, out)?;
            ensure_out_dir(&cfg)?;
            let seed = cfg.seeds[0];
            let traj = run_sample(&cfg, seed)?;
            let path = cfg.out_dir.join("sample.json");
            write_json(&path, &traj)?;
            println!(
                "sampled {} latents at w = {} -> {}",
                traj.latents.len(),
                cfg.guidance.w,
                path.display()
            );
        }
        Command::Edit { config, seed, out } => {
            let cfg = load_config(&config, seed, out)?;
            let lab = cfg.build()?;
            ensure_out_dir(&cfg)?;
            let seed = cfg.seeds[0];
            let result = run_inversion(&cfg, &lab, seed)?;
            let c_target = lab.table.embed(&cfg.target_token())?;
            let edited = edit(&lab.denoiser, &result, &c_target, &lab.schedule)?;
            let responsibility =
                component_responsibility(&lab.mixture, &edited, cfg.target_class)?;
            let outcome = EditOutcome {
                edited,
                target_responsibility: responsibility,
                reconstruction: result.metrics.clone(),
            };
            let path = cfg.out_dir.join("edit.json");
            write_json(&path, &outcome)?;
            println!(
                "edited class{} -> class{}: target responsibility {:.4} -> {}",
                cfg.source_class,
                cfg.target_class,
                outcome.target_responsibility,
                path.display()
            );
        }
        Command::Ablate {
            config,
            seed,
            out,
            format,
        } => {
            let cfg = load_config(&config, seed, out)?;
            let rows = run_ablation(&cfg)?;
            let path = write_table(&cfg, "ablation", format, ablation_csv(&rows), &rows)?;
            println!("wrote {} rows -> {}", rows.len(), path.display());
        }
        Command::SweepGuidance {
            config,
            seed,
            out,
            format,
        } => {
            let cfg = load_config(&config, seed, out)?;
            let rows = run_guidance_sweep(&cfg)?;
            let path = write_table(&cfg, "guidance", format, guidance_csv(&rows), &rows)?;
            println!("wrote {} rows -> {}", rows.len(), path.display());
        }
        Command::SdeditEval {
            config,
            seed,
            out,
            format,
        } => {
            let cfg = load_config(&config, seed, out)?;
            let rows = run_sdedit_eval(&cfg)?;
            let path = write_table(&cfg, "sdedit", format, sdedit_csv(&rows), &rows)?;
            println!("wrote {} rows -> {}", rows.len(), path.display());
        }
        Command::Report { config, out } => {
            let cfg = load_config(&config, None, out)?;
            let read = |stem: &str| -> Result<Option<String>> {
                let path = cfg.out_dir.join(format!("{stem}.csv"));
                if path.exists() {
                    Ok(Some(fs::read_to_string(&path)?))
                } else {
                    Ok(None)
                }
            };
            let ablation = read("ablation")?
                .map(|text| parse_ablation_csv(&text))
                .transpose()?;
            let guidance = read("guidance")?
                .map(|text| parse_guidance_csv(&text))
                .transpose()?;
            let sdedit = read("sdedit")?
                .map(|text| parse_sdedit_csv(&text))
                .transpose()?;
            let report = emit_report(
                ablation.as_deref(),
                guidance.as_deref(),
                sdedit.as_deref(),
            )?;
            let path = cfg.out_dir.join("report.json");
            fs::write(&path, report.to_json_string()?)?;
            for (name, points) in [
                ("series_ablation_psnr", &report.ablation_psnr),
                ("series_guidance_loglik", &report.guidance_loglik),
                ("series_guidance_psnr", &report.guidance_psnr),
                ("series_sdedit_mse", &report.sdedit_mse),
            ] {
                fs::write(
                    cfg.out_dir.join(format!("{name}.csv")),
                    Report::series_csv(points),
                )?;
            }
            for (flag, value) in &report.flags {
                println!("{flag}: {value}");
            }
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
