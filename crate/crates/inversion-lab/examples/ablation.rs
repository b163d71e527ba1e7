//! Compact ablation over every inversion variant at matched gradient
//! budgets, reporting the seed-median reconstruction quality per arm.
//!
//! ```bash
//! cargo run --release --example ablation
//! ```

use inversion_lab::harness::{run_ablation, ExperimentConfig, SweepBlock, ABLATION_ARMS};
use inversion_lab::Result;

fn median(mut values: Vec<f64>) -> Option<f64> {
    values.retain(|v| v.is_finite());
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

fn main() -> Result<()> {
    let cfg = ExperimentConfig {
        sweeps: SweepBlock {
            iteration_counts: vec![1, 5, 10],
            guidance_scales: vec![1.0],
            sdedit_t0: vec![0.5],
        },
        ..ExperimentConfig::default()
    };
    println!(
        "running {} arms x {:?} iterations x {} seeds (budgets matched at T x N updates)\n",
        ABLATION_ARMS.len(),
        cfg.sweeps.iteration_counts,
        cfg.seeds.len()
    );
    let rows = run_ablation(&cfg)?;

    print!("{:<18}", "variant");
    for n in &cfg.sweeps.iteration_counts {
        print!("{:>12}", format!("N={n}"));
    }
    println!("   (median psnr, dB)");
    for arm in ABLATION_ARMS {
        print!("{arm:<18}");
        for &n in &cfg.sweeps.iteration_counts {
            let med = median(
                rows.iter()
                    .filter(|r| r.variant == arm && r.n == n && r.status == "ok")
                    .map(|r| r.psnr)
                    .collect(),
            );
            match med {
                Some(v) => print!("{v:>12.2}"),
                None => print!("{:>12}", "-"),
            }
        }
        println!();
    }

    let diverged = rows.iter().filter(|r| r.status != "ok").count();
    println!("\nrows: {}, diverged: {diverged}", rows.len());
    println!("stochastic arms are scored by replaying from a fresh standard normal draw;");
    println!("pivot-anchored arms replay from the inversion's terminal latent.");
    Ok(())
}
