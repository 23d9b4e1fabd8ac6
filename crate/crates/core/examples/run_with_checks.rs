//! Runs the controller on the reference scenario with every per-slot
//! inequality checked, then reports regret and constraint violation.

use ocmdp::harness::{compute_baseline, compute_regret, run_scenario, RunOptions};
use ocmdp::scenario::{generate, ScenarioConfig};

fn main() -> ocmdp::Result<()> {
    let horizon = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10_000);
    let scn = generate(&ScenarioConfig::reference())?;
    let mut opts = RunOptions::new(horizon, 0);
    opts.check = true;
    opts.keep_rows = false;
    let record = run_scenario(&scn, &opts)?;
    let inequalities = record.inequalities.as_ref().expect("checks enabled");
    println!(
        "checked {} slots with {} comparison points each: {} violations",
        inequalities.slots_checked,
        inequalities.samples_per_slot,
        inequalities.violations.len()
    );
    let baseline = compute_baseline(&scn, horizon)?;
    let regret = compute_regret(&record, &baseline)?;
    println!("imaginary regret {:.3}, realized regret {:.3}", regret.imaginary, regret.realized);
    println!("G_T = {:.3?}, max ||Q|| = {:.3}", regret.constraint_totals, record.max_queue_norm);
    if let Some(c) = baseline.constants {
        println!("regret bound {:.1}, queue bound {:.1}", c.regret_bound(), c.queue_bound());
    }
    Ok(())
}
