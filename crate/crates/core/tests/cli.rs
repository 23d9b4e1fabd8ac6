use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ocmdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ocmdp")).args(args).output().unwrap()
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn gen(dir: &Path) -> String {
    let scn = dir.join("scn");
    let out = ocmdp(&["gen", "--config", config("reference.json").to_str().unwrap(), "--out", scn.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    scn.to_str().unwrap().to_string()
}

#[test]
fn gen_run_baseline_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = gen(tmp.path());
    for file in ["scenario.json", "models.json", "functions.json", "certificate.json", "metadata.json"] {
        assert!(Path::new(&scn).join(file).exists(), "{file}");
    }

    let out = ocmdp(&["run", "--scenario", &scn, "--T", "200", "--seed", "4", "--check"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let regret: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(regret["horizon"], 200);
    let run_dir = Path::new(&scn).join("runs").join("T200-seed4");
    assert!(run_dir.join("run.csv").exists() && run_dir.join("run.json").exists());

    let out = ocmdp(&["baseline", "--scenario", &scn, "--T", "200"]);
    assert!(out.status.success());
    let baseline: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(baseline["value"].is_number());
    assert!(baseline["eta"].as_f64().unwrap() > 0.0);

    let sweep = tmp.path().join("sweep.json");
    let out = ocmdp(&["sweep", "--scenario", &scn, "--T", "100,200", "--seeds", "2", "--out", sweep.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let result: serde_json::Value = serde_json::from_str(&fs::read_to_string(sweep).unwrap()).unwrap();
    assert_eq!(result["runs"].as_array().unwrap().len(), 4);
}

#[test]
fn check_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = gen(tmp.path());
    let out = ocmdp(&["check", "--scenario", &scn]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().all(|l| l.starts_with("PASS ")));

    let cert = Path::new(&scn).join("certificate.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&cert).unwrap()).unwrap();
    v["eta"] = serde_json::Value::from(0.0);
    fs::write(&cert, v.to_string()).unwrap();
    let out = ocmdp(&["check", "--scenario", &scn]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL scenario-env/slater-certificate"));
}

#[test]
fn errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    let out = ocmdp(&["run", "--scenario", missing.to_str().unwrap(), "--T", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn datacenter_config_generates() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = tmp.path().join("dc");
    let out = ocmdp(&["gen", "--config", config("datacenter.json").to_str().unwrap(), "--out", scn.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = ocmdp(&["run", "--scenario", scn.to_str().unwrap(), "--T", "100"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
