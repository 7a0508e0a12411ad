//! Run the validation harness on the standard synthetic task.
//!
//! Usage: `cargo run --release --example validate -- [trials] [seed]`

use duc_core::erm::{validate_duc, ValidationOptions};
use duc_core::shift_sim::TaskConfig;

fn main() -> duc_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let trials = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut cfg = TaskConfig::standard();
    if let Some(m) = std::env::var("REGIONS").ok().and_then(|s| s.parse().ok()) {
        cfg.regions = m;
    }
    if let Some(f) = std::env::var("VSCALE").ok().and_then(|s| s.parse::<f64>().ok()) {
        for (id, law) in cfg.weight_laws.iter_mut() {
            if id.starts_with("cand") {
                law.variance *= f;
            }
        }
    }
    let opts = ValidationOptions { trials, seed, ..Default::default() };
    let start = std::time::Instant::now();
    let report = validate_duc(&cfg, &opts)?;
    println!("candidate  duc     pop     fraction  kl");
    for (r, d) in report.rows.iter().zip(&report.details) {
        println!(
            "{}  {:.4}  {:.4}  {:.4}    {:.4}",
            r.candidate_id, r.duc, d.duc_population, r.empirical_fraction, d.kl_gaussian
        );
    }
    println!("{:?}", report.summary);
    eprintln!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
