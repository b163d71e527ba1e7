//! Fits the per-timestep affine noise predictor by closed-form least squares
//! and compares its held-out noise-prediction loss against the analytic
//! minimum-MSE predictor, which no model of any form can beat in
//! expectation.
//!
//! ```bash
//! cargo run --release --example train_denoiser
//! ```

use inversion_lab::denoiser::{
    train_affine, AnalyticDenoiser, Denoiser, MixtureModel, PromptTable,
};
use inversion_lab::schedule::{forward_noise, NoiseSchedule};
use inversion_lab::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> Result<()> {
    let sched = NoiseSchedule::linear(1000, 1e-4, 0.02, 50)?;
    let mix = MixtureModel::default_toy();
    let table = PromptTable::with_classes(3, 4.0)?;
    let analytic = AnalyticDenoiser::new(mix.clone(), sched.clone());

    println!("fitting affine blocks on 2000 draws per timestep...");
    let affine = train_affine(&mix, &table, &sched, 2000, 7)?;

    let tokens: Vec<String> = table.tokens().map(str::to_owned).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(99);
    let held_out = 20_000usize;

    println!("\nheld-out noise-prediction loss ({held_out} draws per timestep):");
    println!(
        "{:>10} {:>12} {:>12} {:>12} {:>12}",
        "timestep", "train", "affine", "analytic", "gap"
    );
    for &t in sched.ddim_steps().iter().step_by(7) {
        let mut loss_affine = 0.0;
        let mut loss_analytic = 0.0;
        for _ in 0..held_out {
            let token = &tokens[rng.random_range(0..tokens.len())];
            let c = table.embed(token)?;
            let x0 = mix.sample(&c, &mut rng)?;
            let noise: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            let z = forward_noise(&x0, t, &noise, &sched)?;
            let ea = analytic.predict_noise(&z, t, &c)?;
            let ef = affine.predict_noise(&z, t, &c)?;
            loss_analytic += noise.iter().zip(&ea).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            loss_affine += noise.iter().zip(&ef).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        let la = loss_analytic / held_out as f64;
        let lf = loss_affine / held_out as f64;
        println!(
            "{t:>10} {:>12.5} {lf:>12.5} {la:>12.5} {:>12.3e}",
            affine.train_loss(t).unwrap(),
            lf - la
        );
    }

    let json = affine.to_json_string()?;
    std::fs::write("affine_denoiser.json", &json)?;
    println!("\nserialized the fitted model to affine_denoiser.json ({} bytes)", json.len());
    println!("the analytic predictor is the exact posterior-mean denoiser, so the gap");
    println!("column stays non-negative: no trainable model can undercut it in expectation.");
    Ok(())
}
