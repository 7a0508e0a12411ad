//! Compare DUC and Gaussian-KL rank agreement across independent replications.
//!
//! Usage: `cargo run --release --example replicate -- [replications] [trials]`

use duc_core::erm::{validate_duc, ValidationOptions};
use duc_core::seeding::derive_seed;
use duc_core::shift_sim::TaskConfig;

fn main() -> duc_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let reps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let trials = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100);
    let mut wins = 0;
    for r in 0..reps {
        let mut cfg = TaskConfig::standard();
        cfg.master_seed = derive_seed(cfg.master_seed, r);
        let opts = ValidationOptions { trials, seed: cfg.master_seed, ..Default::default() };
        let s = validate_duc(&cfg, &opts)?.summary;
        let (d, k) = (s.spearman.unwrap_or(0.0).abs(), s.kl_spearman.unwrap_or(0.0).abs());
        if d > k {
            wins += 1;
        }
        println!(
            "rep {r:2}: duc {d:.3}  kl {k:.3}  pearson {:.3}  mad {:.3}",
            s.pearson.unwrap_or(0.0),
            s.mean_abs_deviation
        );
    }
    println!("duc ahead in {wins}/{reps}");
    Ok(())
}
