//! Sweeps the horizon on the reference scenario and fits the log-log slope
//! of the seed-averaged regret.

use ocmdp::harness::sweep_scenario;
use ocmdp::scenario::{generate, ScenarioConfig};

fn main() -> ocmdp::Result<()> {
    let scn = generate(&ScenarioConfig::reference())?;
    let result = sweep_scenario(&scn, &[1_000, 4_000, 16_000], 5)?;
    println!("{:>7} {:>12} {:>12} {:>10}", "T", "regret", "regret/T", "max ||Q||");
    for p in &result.points {
        println!(
            "{:>7} {:>12.3} {:>12.2e} {:>10.3}",
            p.horizon,
            p.mean_imaginary_regret,
            p.mean_imaginary_regret / p.horizon as f64,
            p.max_max_queue_norm
        );
    }
    println!("log-log slope {:.3}", result.slope);
    Ok(())
}
