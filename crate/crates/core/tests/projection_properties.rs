use ocmdp::controller::VertexSampler;
use ocmdp::mdp::{policy_to_theta, MdpModel, PolicyTable};
use ocmdp::oracle::active_set_projection;
use ocmdp::projection::{build_polyhedron, project_simplex, project_theta};
use ocmdp::scenario::{generate_unichain_mdp, MdpSize};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

fn model(seed: u64, states: usize, actions: usize) -> MdpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_unichain_mdp(MdpSize { states, actions }, 0.2, &mut rng).unwrap()
}

fn point(seed: u64, n: usize, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn sizes() -> impl Strategy<Value = (usize, usize)> {
    (1usize..5, 1usize..4).prop_filter("at most 12 pairs", |(s, a)| s * a <= 12)
}

#[test]
fn simplex_projection_examples() {
    assert_eq!(project_simplex(&[0.3, 0.7]).unwrap(), vec![0.3, 0.7]);
    let x = project_simplex(&[2.0, 0.0]).unwrap();
    assert!((x[0] - 1.0).abs() < 1e-15 && x[1].abs() < 1e-15);
    let u = project_simplex(&[-4.0; 5]).unwrap();
    assert!(u.iter().all(|v| (v - 0.2).abs() < 1e-15));
}

#[test]
fn single_state_polytope_is_the_simplex() {
    let m = MdpModel::from_rows(vec![vec![vec![1.0]], vec![vec![1.0]]]).unwrap();
    let spec = build_polyhedron(&m);
    let r = project_theta(&spec, &[0.8, 0.8], TOL).unwrap();
    assert!(dist(r.point.as_slice(), &[0.5, 0.5]) < 1e-12);
}

#[test]
fn feasible_points_are_fixed() {
    let m = model(5, 3, 2);
    let spec = build_polyhedron(&m);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let th = policy_to_theta(&m, &PolicyTable::random(3, 2, &mut rng)).unwrap();
    let r = project_theta(&spec, th.as_slice(), TOL).unwrap();
    assert!(r.iterations <= 1, "{} iterations", r.iterations);
    assert!(dist(r.point.as_slice(), th.as_slice()) <= 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn simplex_projection_is_a_distribution(y in prop::collection::vec(-5.0f64..5.0, 1..12)) {
        let x = project_simplex(&y).unwrap();
        prop_assert!((x.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(x.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn projection_matches_the_active_set_oracle(seed in any::<u64>(), (s, a) in sizes()) {
        let m = model(seed, s, a);
        let spec = build_polyhedron(&m);
        let y = point(seed ^ 7, s * a, 2.0);
        let got = project_theta(&spec, &y, TOL).unwrap();
        let want = active_set_projection(&spec, &y);
        prop_assert!(dist(got.point.as_slice(), &want) <= 1e-6);
        prop_assert!(got.kkt_residual <= TOL);
    }

    #[test]
    fn projection_is_idempotent(seed in any::<u64>(), (s, a) in sizes()) {
        let spec = build_polyhedron(&model(seed, s, a));
        let y = point(seed ^ 11, s * a, 3.0);
        let once = project_theta(&spec, &y, TOL).unwrap().point;
        let twice = project_theta(&spec, once.as_slice(), TOL).unwrap().point;
        prop_assert!(dist(once.as_slice(), twice.as_slice()) <= 2.0 * TOL);
    }

    #[test]
    fn projection_is_non_expansive(seed in any::<u64>(), (s, a) in sizes()) {
        let spec = build_polyhedron(&model(seed, s, a));
        let y1 = point(seed ^ 13, s * a, 2.0);
        let y2 = point(seed ^ 17, s * a, 2.0);
        let p1 = project_theta(&spec, &y1, TOL).unwrap().point;
        let p2 = project_theta(&spec, &y2, TOL).unwrap().point;
        prop_assert!(dist(p1.as_slice(), p2.as_slice()) <= dist(&y1, &y2) + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projection_satisfies_the_strong_convexity_inequality(seed in any::<u64>(), (s, a) in sizes()) {
        let m = model(seed, s, a);
        let spec = build_polyhedron(&m);
        let y = point(seed ^ 19, s * a, 2.0);
        let x = project_theta(&spec, &y, TOL).unwrap().point;
        let sampler = VertexSampler::new(std::slice::from_ref(&m)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 23);
        let hx = sq(x.as_slice(), &y);
        for _ in 0..100 {
            let z = sampler.sample(0, &mut rng);
            let slack = sq(z.as_slice(), &y) - sq(z.as_slice(), x.as_slice()) - hx;
            prop_assert!(slack >= -1e-9, "slack {slack}");
        }
    }
}
