use std::fs;
use std::path::Path;

use ocmdp::harness::{
    compute_baseline, compute_regret, load_scenario, loglog_slope, run_scenario, save_scenario,
    sweep_horizons, verify_suite, write_run_outputs, RunOptions,
};
use ocmdp::scenario::{generate, FunctionModel, PenaltyProcess, Scenario, ScenarioConfig};
use serde_json::Value;

fn reference() -> Scenario {
    generate(&ScenarioConfig::reference()).unwrap()
}

fn saved_reference(dir: &Path) -> Scenario {
    let scn = reference();
    save_scenario(&scn, dir).unwrap();
    scn
}

fn edit_json(path: &Path, edit: impl FnOnce(&mut Value)) {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    edit(&mut v);
    fs::write(path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

fn failed_checks(dir: &Path) -> Vec<String> {
    verify_suite(dir)
        .checks
        .into_iter()
        .filter(|c| !c.passed)
        .map(|c| c.name)
        .collect()
}

#[test]
fn saved_scenarios_load_with_the_same_hash() {
    let dir = tempfile::tempdir().unwrap();
    let scn = saved_reference(dir.path());
    let back = load_scenario(dir.path()).unwrap();
    assert_eq!(back.content_hash(), scn.content_hash());
    assert_eq!(back.functions.sample(42), scn.functions.sample(42));
}

#[test]
fn tampered_function_path_fails_the_hash_check() {
    let dir = tempfile::tempdir().unwrap();
    saved_reference(dir.path());
    edit_json(&dir.path().join("functions.json"), |v| v["seed"] = Value::from(999));
    let err = load_scenario(dir.path()).unwrap_err();
    assert!(err.to_string().contains("hash"), "{err}");
}

#[test]
fn single_slot_run_has_one_row() {
    let scn = reference();
    let record = run_scenario(&scn, &RunOptions::new(1, 3)).unwrap();
    assert_eq!(record.rows.len(), 1);
    let row = &record.rows[0];
    assert_eq!(record.totals.penalty_realized, row.f_real.iter().sum::<f64>());
    assert_eq!(record.totals.slots, 1);
    assert_eq!(record.totals_from_one.slots, 0);
    assert_eq!(record.final_queues, vec![0.0; scn.num_constraints()]);
}

#[test]
fn identical_seeds_write_identical_bytes() {
    let scn = reference();
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (dir, seed) in dirs.iter().zip([5, 5, 6]) {
        let record = run_scenario(&scn, &RunOptions::new(300, seed)).unwrap();
        write_run_outputs(&record, dir.path()).unwrap();
    }
    let read = |i: usize| fs::read(dirs[i].path().join("run.csv")).unwrap();
    assert_eq!(read(0), read(1));
    assert_ne!(read(0), read(2));
    let json = |i: usize| fs::read(dirs[i].path().join("run.json")).unwrap();
    assert_eq!(json(0), json(1));
}

#[test]
fn cumulative_columns_are_prefix_sums() {
    let scn = reference();
    let record = run_scenario(&scn, &RunOptions::new(400, 8)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run_outputs(&record, dir.path()).unwrap();
    let mut reader = csv::Reader::from_path(dir.path().join("run.csv")).unwrap();
    let header = reader.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let pairs = [
        ("f_real", "cum_f_real"),
        ("f_dot_theta", "cum_f_dot_theta"),
        ("g_real_1", "cum_g_real_1"),
        ("g_real_2", "cum_g_real_2"),
        ("g_dot_theta_1", "cum_g_dot_theta_1"),
        ("g_dot_theta_2", "cum_g_dot_theta_2"),
    ];
    let mut sums = [0.0; 6];
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        for (j, (x, cum)) in pairs.iter().enumerate() {
            sums[j] += rec[col(x)].parse::<f64>().unwrap();
            let reported: f64 = rec[col(cum)].parse().unwrap();
            assert!((sums[j] - reported).abs() <= 1e-9 * sums[j].abs().max(1.0));
        }
        rows += 1;
    }
    assert_eq!(rows, 400 * scn.models.len());
    assert!((sums[0] - record.totals.penalty_realized).abs() <= 1e-9 * sums[0].abs().max(1.0));
    assert!((sums[2] - record.totals.constraint_realized[0]).abs() <= 1e-9 * sums[2].abs().max(1.0));
}

#[test]
fn constant_penalties_have_zero_imaginary_regret() {
    let mut scn = reference();
    let k = scn.models.len();
    let flat = PenaltyProcess::Iid {
        mean: vec![vec![0.3; 6]; k],
        std: 0.0,
    };
    scn.functions = FunctionModel::new(scn.psi(), scn.config.seed, flat, scn.functions.constraint.clone());
    let record = run_scenario(&scn, &RunOptions::new(500, 1)).unwrap();
    let baseline = compute_baseline(&scn, 500).unwrap();
    assert!((baseline.value - 0.3 * k as f64).abs() <= 1e-12);
    let regret = compute_regret(&record, &baseline).unwrap();
    assert!(regret.imaginary.abs() <= 1e-9, "{}", regret.imaginary);
    assert!(regret.imaginary_from_one.abs() <= 1e-9);
}

#[test]
fn benchmark_point_reproduces_its_value() {
    let scn = reference();
    let b = compute_baseline(&scn, 1000).unwrap();
    let mean_f = scn.functions.mean_penalty(1000);
    let held: f64 = mean_f
        .iter()
        .zip(&b.theta)
        .map(|(f, th)| f.iter().zip(th.as_slice()).map(|(x, y)| x * y).sum::<f64>())
        .sum();
    // A controller frozen at the benchmark earns T * value in the imaginary series.
    assert!((1000.0 * held - 1000.0 * b.value).abs() <= 1e-8);
    let mean_g = scn.functions.mean_constraint();
    for gi in &mean_g {
        let lhs: f64 = gi
            .iter()
            .zip(&b.theta)
            .map(|(g, th)| g.iter().zip(th.as_slice()).map(|(x, y)| x * y).sum::<f64>())
            .sum();
        assert!(lhs <= 1e-9);
    }
}

#[test]
fn regret_refuses_mismatched_inputs() {
    let scn = reference();
    let record = run_scenario(&scn, &RunOptions::new(50, 1)).unwrap();
    let mut other_cfg = ScenarioConfig::reference();
    other_cfg.seed = 2;
    let other = generate(&other_cfg).unwrap();
    assert!(compute_regret(&record, &compute_baseline(&other, 50).unwrap()).is_err());

    let mut cfg = ScenarioConfig::reference();
    cfg.penalty_process = ocmdp::scenario::PenaltyKind::SinusoidalAdversarial;
    cfg.constraint_process.require_active = false;
    cfg.constraint_process.min_margin = 0.0;
    let varying = generate(&cfg).unwrap();
    let record = run_scenario(&varying, &RunOptions::new(50, 1)).unwrap();
    assert!(compute_regret(&record, &compute_baseline(&varying, 60).unwrap()).is_err());
    assert!(compute_regret(&record, &compute_baseline(&varying, 50).unwrap()).is_ok());
}

#[test]
fn slope_examples() {
    let t = [100.0, 400.0, 1600.0];
    assert!((loglog_slope(&t, &[10.0, 20.0, 40.0]).unwrap() - 0.5).abs() <= 1e-12);
    assert_eq!(loglog_slope(&t, &[7.0, 7.0, 7.0]).unwrap(), 0.0);
    assert!(loglog_slope(&t[..1], &[1.0]).is_err());
}

#[test]
fn sweep_reports_every_run() {
    let dir = tempfile::tempdir().unwrap();
    saved_reference(dir.path());
    let result = sweep_horizons(dir.path(), &[100, 400], 3).unwrap();
    assert_eq!(result.points.len(), 2);
    assert_eq!(result.runs.len(), 6);
    assert!(result.slope.is_finite());
    assert!(result.points.iter().all(|p| p.seeds == 3 && p.constants.is_some()));
    assert!(sweep_horizons(dir.path(), &[400, 100], 3).is_err());
}

#[test]
fn verify_passes_on_the_reference_scenario() {
    let dir = tempfile::tempdir().unwrap();
    saved_reference(dir.path());
    let report = verify_suite(dir.path());
    assert!(report.passed(), "{:?}", failed_checks(dir.path()));
}

#[test]
fn verify_names_a_broken_kernel_row() {
    let dir = tempfile::tempdir().unwrap();
    saved_reference(dir.path());
    edit_json(&dir.path().join("models.json"), |v| {
        let entry = &mut v[0]["kernel"][0][0][0];
        *entry = Value::from(entry.as_f64().unwrap() + 0.1);
    });
    assert_eq!(failed_checks(dir.path()), vec!["model-validation".to_string()]);
}

#[test]
fn verify_names_a_non_positive_margin() {
    let dir = tempfile::tempdir().unwrap();
    saved_reference(dir.path());
    edit_json(&dir.path().join("certificate.json"), |v| v["eta"] = Value::from(-0.1));
    assert_eq!(failed_checks(dir.path()), vec!["slater-certificate".to_string()]);
    assert!(load_scenario(dir.path()).is_err());
}
