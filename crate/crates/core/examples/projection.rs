//! Projects random points onto the state-action polytope of a small MDP and
//! compares the result with the exhaustive active-set solution.

use ocmdp::oracle::active_set_projection;
use ocmdp::projection::{build_polyhedron, project_simplex, project_theta};
use ocmdp::scenario::{generate_unichain_mdp, MdpSize};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ocmdp::Result<()> {
    println!("simplex projection of (2, 0): {:?}", project_simplex(&[2.0, 0.0])?);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = generate_unichain_mdp(MdpSize { states: 3, actions: 2 }, 0.2, &mut rng)?;
    let spec = build_polyhedron(&model);
    for _ in 0..5 {
        let y: Vec<f64> = (0..spec.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let report = project_theta(&spec, &y, 1e-9)?;
        let exact = active_set_projection(&spec, &y);
        let err = report
            .point
            .as_slice()
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!(
            "iterations {:>4}  active {:>2}  kkt {:.1e}  balance {:.1e}  distance to oracle {:.1e}",
            report.iterations,
            report.active_set_size,
            report.kkt_residual,
            report.point.balance_residual(&model),
            err
        );
    }
    Ok(())
}
