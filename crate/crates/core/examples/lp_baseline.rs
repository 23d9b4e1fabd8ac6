//! Stationary benchmark, its relaxation and the bound constants for the
//! reference scenario.

use ocmdp::baseline::{best_stationary, perturbation_gap_check, relaxed_stationary, theory_constants};
use ocmdp::scenario::{generate, ScenarioConfig};

fn main() -> ocmdp::Result<()> {
    let scn = generate(&ScenarioConfig::reference())?;
    let mean_f = scn.functions.mean_penalty(1);
    let mean_g = scn.functions.mean_constraint();

    let sol = best_stationary(&scn.models, &mean_f, &mean_g)?;
    println!("benchmark value {:.6} after {} pivots, duals {:.4?}", sol.value, sol.pivots, sol.duals);
    let free = best_stationary(&scn.models, &mean_f, &[])?;
    println!("unconstrained value {:.6}", free.value);

    let eta = scn.certificate.eta;
    for horizon in [1_000usize, 10_000, 100_000] {
        let slack = 1.0 / (horizon as f64).sqrt();
        let relaxed = relaxed_stationary(&scn.models, &mean_f, &mean_g, slack)?;
        let gap = perturbation_gap_check(&scn.models, &mean_f, &mean_g, scn.psi(), eta, slack)?;
        println!(
            "T = {horizon:>6}: relaxed {:.6}, gap {:.2e} (bound {:.2e})",
            relaxed.value, gap.gap, gap.multiplier_bound
        );
    }

    let c = theory_constants(scn.num_constraints(), &scn.pairs(), scn.psi(), eta, 10_000)?;
    println!(
        "eta {eta:.4}: C = {:.2}, queue bound {:.1}, regret bound {:.1}, violation bound {:.1}",
        c.queue_constant,
        c.queue_bound(),
        c.regret_bound(),
        c.violation_bound()
    );
    Ok(())
}
