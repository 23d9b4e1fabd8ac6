//! Writes the reference scenario to a temporary directory and runs the
//! verification suite on it.

use ocmdp::harness::{save_scenario, verify_suite};
use ocmdp::scenario::{generate, ScenarioConfig};

fn main() -> ocmdp::Result<()> {
    let dir = tempfile::tempdir()?;
    save_scenario(&generate(&ScenarioConfig::reference())?, dir.path())?;
    let report = verify_suite(dir.path());
    for c in &report.checks {
        println!("{} {}/{}: {}", if c.passed { "PASS" } else { "FAIL" }, c.module, c.name, c.detail);
    }
    println!("all passed: {}", report.passed());
    Ok(())
}
