//! How the inversion's guidance scale trades editability against
//! reconstruction: higher scales push the terminal latent away from the
//! standard normal (lower log-likelihood) and accumulate more round-trip
//! error.
//!
//! ```bash
//! cargo run --release --example guidance_sweep
//! ```

use inversion_lab::harness::{run_guidance_sweep, ExperimentConfig};
use inversion_lab::Result;

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn main() -> Result<()> {
    let cfg = ExperimentConfig::default();
    let rows = run_guidance_sweep(&cfg)?;
    println!(
        "inversion and same-scale replay over {} seeds\n",
        cfg.seeds.len()
    );
    println!(
        "{:>4} {:>16} {:>16}",
        "w", "median loglik", "median psnr (dB)"
    );
    for &w in &cfg.sweeps.guidance_scales {
        let loglik = median(rows.iter().filter(|r| r.w == w).map(|r| r.loglik).collect());
        let psnr = median(rows.iter().filter(|r| r.w == w).map(|r| r.psnr).collect());
        println!("{w:>4} {loglik:>16.3} {psnr:>16.2}");
    }
    println!("\nscale 1 keeps the terminal latent near the standard normal (editable) and");
    println!("reconstructs best, which is why the pivot trajectory is built at scale 1.");
    Ok(())
}
