use ocmdp::controller::{
    init_controller, queue_update, weights, ControllerParams, InequalityChecker, VertexSampler,
    VirtualQueues,
};
use ocmdp::mdp::{policy_to_theta, sample_next_state, MdpModel, OccupancyVector, PolicyTable};
use ocmdp::scenario::{generate, generate_unichain_mdp, FunctionSample, MdpSize, ScenarioConfig};
use ocmdp::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn models(seed: u64, k: usize) -> Vec<MdpModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| generate_unichain_mdp(MdpSize { states: 3, actions: 2 }, 0.2, &mut rng).unwrap())
        .collect()
}

fn random_sample(k: usize, m: usize, pairs: usize, psi: f64, rng: &mut ChaCha8Rng) -> FunctionSample {
    let table = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..k).map(|_| (0..pairs).map(|_| rng.random_range(-psi..psi)).collect()).collect()
    };
    FunctionSample {
        f: table(rng),
        g: (0..m).map(|_| table(rng)).collect(),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[test]
fn each_mdp_starts_inside_its_own_polytope() {
    let ms = models(1, 3);
    let state = init_controller(ms.clone(), 2, ControllerParams::auto(100).unwrap()).unwrap();
    assert_eq!(state.theta().len(), 3);
    for (th, m) in state.theta().iter().zip(&ms) {
        assert!(th.feasibility_residual(m) <= 1e-9);
        let uniform = policy_to_theta(m, &PolicyTable::uniform(3, 2)).unwrap();
        assert!(sq(th.as_slice(), uniform.as_slice()) <= 1e-20);
    }
    assert_eq!(state.queues().values(), &[0.0, 0.0]);
}

#[test]
fn no_constraints_means_no_queues() {
    let mut state = init_controller(models(2, 2), 0, ControllerParams::auto(50).unwrap()).unwrap();
    assert!(state.queues().is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        let s = random_sample(2, 0, 6, 1.0, &mut rng);
        let (rec, _) = state.run_slot(s, &[0, 0], &mut rng).unwrap();
        assert_eq!(rec.q_norm, 0.0);
        assert!(rec.g_real.is_empty());
    }
}

#[test]
fn weights_example_and_recomputation() {
    assert_eq!(weights(2.0, &[1.0, 0.0], &[3.0], &[&[0.0, 1.0]]), vec![2.0, 3.0]);
    assert_eq!(weights(1.5, &[1.0, -2.0], &[0.0, 0.0], &[&[5.0, 5.0], &[1.0, 1.0]]), vec![1.5, -3.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let n = rng.random_range(1..10);
        let m = rng.random_range(0..4);
        let v: f64 = rng.random_range(0.0..10.0);
        let f: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..5.0)).collect();
        let g: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = g.iter().map(Vec::as_slice).collect();
        let w = weights(v, &f, &q, &refs);
        for j in 0..n {
            let expected = v * f[j] + (0..m).map(|i| q[i] * g[i][j]).sum::<f64>();
            assert!((w[j] - expected).abs() <= 1e-12);
        }
    }
}

#[test]
fn queue_update_examples() {
    let ms = models(3, 1);
    let th = vec![policy_to_theta(&ms[0], &PolicyTable::uniform(3, 2)).unwrap()];
    let q = VirtualQueues::from_values(vec![2.0]).unwrap();
    let down = queue_update(&q, &[vec![vec![-3.0; 6]]], &th).unwrap();
    assert_eq!(down.values(), &[0.0]);
    let up = queue_update(&q, &[vec![vec![0.5; 6]]], &th).unwrap();
    assert!((up.values()[0] - 2.5).abs() <= 1e-12);
    assert!(VirtualQueues::from_values(vec![-1.0]).is_err());
}

#[test]
fn step_minimises_the_slot_objective_against_random_points() {
    let ms = models(5, 2);
    let params = ControllerParams::new(10.0, 40.0, 100).unwrap();
    let mut state = init_controller(ms.clone(), 2, params).unwrap();
    let sampler = VertexSampler::new(&ms).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let s = random_sample(2, 2, 6, 1.0, &mut rng);
        state.run_slot(s, &[0, 1], &mut rng).unwrap();
        for k in 0..2 {
            let w = state.compute_weights(k).unwrap();
            let prev = state.theta()[k].as_slice().to_vec();
            let next = state.controller_step(k).unwrap();
            let objective = |x: &[f64]| dot(&w, x) + 40.0 * sq(x, &prev);
            let best = objective(next.as_slice());
            for _ in 0..100 {
                let z = sampler.sample(k, &mut rng);
                assert!(best <= objective(z.as_slice()) + 1e-9);
            }
        }
    }
}

#[test]
fn one_slot_run_keeps_queues_at_zero() {
    let mut state = init_controller(models(7, 2), 1, ControllerParams::auto(1).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = random_sample(2, 1, 6, 1.0, &mut rng);
    let (rec, trace) = state.run_slot(s, &[0, 0], &mut rng).unwrap();
    assert_eq!(rec.t, 0);
    assert!(trace.is_none());
    assert_eq!(state.queues().values(), &[0.0]);
}

#[test]
fn constant_penalties_accumulate_exactly() {
    let k = 3;
    let t_max = 200;
    let mut state = init_controller(models(8, k), 1, ControllerParams::auto(t_max).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut total = 0.0;
    for _ in 0..t_max {
        let mut s = random_sample(k, 1, 6, 1.0, &mut rng);
        s.f = vec![vec![0.25; 6]; k];
        let (rec, _) = state.run_slot(s, &vec![0; k], &mut rng).unwrap();
        total += rec.f_dot_theta.iter().sum::<f64>();
    }
    assert!((total - 0.25 * k as f64 * t_max as f64).abs() <= 1e-9);
}

#[test]
fn sequencing_errors_are_reported() {
    let mut state = init_controller(models(9, 1), 0, ControllerParams::auto(10).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let s = random_sample(1, 0, 6, 1.0, &mut rng);
    assert!(matches!(state.reveal(s.clone()), Err(Error::Sequencing(_))));
    state.decide(&[0], &mut rng).unwrap();
    assert!(matches!(state.decide(&[0], &mut rng), Err(Error::Sequencing(_))));
    state.reveal(s).unwrap();
}

#[test]
fn non_unichain_models_are_rejected() {
    let cycle = MdpModel::from_rows(vec![vec![vec![0.0, 1.0], vec![1.0, 0.0]]]).unwrap();
    assert!(init_controller(vec![cycle], 0, ControllerParams::auto(10).unwrap()).is_err());
    assert!(ControllerParams::new(0.0, 1.0, 10).is_err());
    assert!(ControllerParams::new(1.0, -1.0, 10).is_err());
}

#[test]
fn every_slot_inequality_holds_on_a_thousand_slot_run() {
    let scn = generate(&ScenarioConfig::reference()).unwrap();
    let horizon = 1000;
    let mut state =
        init_controller(scn.models.clone(), scn.num_constraints(), ControllerParams::auto(horizon).unwrap()).unwrap();
    state.set_tracing(true);
    let mut checker = InequalityChecker::new(&state, scn.psi(), 1e-8, 20).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut check_rng = ChaCha8Rng::seed_from_u64(11);
    let mut states = vec![0usize; scn.models.len()];
    for t in 0..horizon {
        let (rec, trace) = state.run_slot(scn.functions.sample(t), &states, &mut rng).unwrap();
        if let Some(trace) = trace {
            checker.check(&trace, &mut check_rng);
        }
        for (k, m) in scn.models.iter().enumerate() {
            states[k] = sample_next_state(m, rec.states[k], rec.actions[k], &mut rng).unwrap();
        }
    }
    assert_eq!(checker.slots_checked, horizon - 1);
    assert!(checker.passed(), "{:?}", checker.violations.first());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn queues_stay_nonnegative_with_bounded_increments(seed in any::<u64>(), k in 1usize..4, m in 1usize..4, psi in 0.2f64..2.0) {
        let ms = models(seed, k);
        let mut state = init_controller(ms, m, ControllerParams::auto(200).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 5);
        let kpsi = k as f64 * psi;
        let mut prev = state.queues().clone();
        for _ in 0..200 {
            let s = random_sample(k, m, 6, psi, &mut rng);
            state.run_slot(s, &vec![0; k], &mut rng).unwrap();
            let q = state.queues();
            for (a, b) in q.values().iter().zip(prev.values()) {
                prop_assert!(*a >= 0.0);
                prop_assert!((a - b).abs() <= kpsi + 1e-12);
            }
            prop_assert!(q.norm() - prev.norm() <= (m as f64).sqrt() * kpsi + 1e-12);
            prev = q.clone();
        }
    }

    #[test]
    fn identical_seeds_give_identical_trajectories(seed in any::<u64>()) {
        let run = || {
            let mut state = init_controller(models(seed, 2), 1, ControllerParams::auto(50).unwrap()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| {
                    let s = random_sample(2, 1, 6, 1.0, &mut rng);
                    state.run_slot(s, &[1, 2], &mut rng).unwrap().0
                })
                .collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn iterates_stay_feasible(seed in any::<u64>()) {
        let ms = models(seed, 2);
        let mut state = init_controller(ms.clone(), 2, ControllerParams::new(5.0, 3.0, 100).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 6);
        for _ in 0..60 {
            let s = random_sample(2, 2, 6, 1.0, &mut rng);
            state.run_slot(s, &[0, 0], &mut rng).unwrap();
            for (th, m) in state.theta().iter().zip(&ms) {
                let th: &OccupancyVector = th;
                prop_assert!(th.feasibility_residual(m) <= 1e-8);
                prop_assert!(th.as_slice().iter().all(|v| *v >= -1e-12));
            }
        }
    }
}
