//! Stationary distributions, policy/occupancy conversion and the mixing
//! diagnostics of a generated MDP.

use ocmdp::mdp::{
    check_unichain, mixing_contraction_check, policy_to_theta, policy_transition_matrix,
    stationary_distribution, theta_to_policy, PolicyTable,
};
use ocmdp::scenario::{datacenter_server, generate_unichain_mdp, MdpSize};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ocmdp::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = generate_unichain_mdp(MdpSize { states: 4, actions: 2 }, 0.2, &mut rng)?;
    let policy = PolicyTable::random(4, 2, &mut rng);

    let p = policy_transition_matrix(&model, &policy)?;
    let d = stationary_distribution(&p)?;
    println!("stationary distribution: {:.4?}", d.as_slice());

    let theta = policy_to_theta(&model, &policy)?;
    println!("occupancy: {:.4?}", theta.as_slice());
    println!("balance residual: {:.1e}", theta.balance_residual(&model));
    let back = theta_to_policy(&model, &theta);
    println!("recovered pi(.|s0): ({:.4}, {:.4})", back.prob(0, 0), back.prob(0, 1));

    for (name, m) in [("generated", model), ("data-center server", datacenter_server(0.01)?)] {
        let est = check_unichain(&m, 8)?;
        let worst = mixing_contraction_check(&m, &est, 1000, 7);
        println!(
            "{name}: r = {}, delta = {:.4}, tau = {:.3}, worst ratio {:.4} <= {:.4}",
            est.r,
            est.delta,
            est.tau,
            worst,
            est.contraction_factor()
        );
    }
    Ok(())
}
