use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn gwdev(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gwdev"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("experiment.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn analyze_law_reports_closed_forms() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "law = \"{1: .2, 2: .8}\"\n");
    let out = gwdev(tmp.path(), &["analyze-law", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = &json(&tmp.path().join("analyze-law.json"))["result"];
    assert!((r["m"].as_f64().unwrap() - 1.8).abs() < 1e-12);
    assert_eq!(r["q"].as_f64().unwrap(), 0.0);
    assert!((r["gamma"].as_f64().unwrap() - 0.2).abs() < 1e-12);
    assert!((r["alpha"].as_f64().unwrap() - 2.7381).abs() < 1e-4);
    assert_eq!(r["d"].as_u64(), Some(1));
    assert_eq!(r["mu"].as_u64(), Some(1));
}

#[test]
fn missing_law_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "seed = 4\n[exact_tail]\nn = 3\n");
    let out = gwdev(tmp.path(), &["exact-tail", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`law`"), "{err}");
}

#[test]
fn verify_ddev_writes_csv_compared_against_one_half() {
    let tmp = TempDir::new().unwrap();
    let out = gwdev(tmp.path(), &["verify", "ddev"]);
    // Exit 0 or 2 depending on the rules; errors are 1.
    let code = out.status.code().unwrap();
    assert!(code == 0 || code == 2, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("verify_ddev.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "normalized_value").unwrap();
    assert!(header.contains(&"error_bar"));
    let last: Vec<&str> = csv.lines().last().unwrap().split(',').collect();
    assert_eq!(last[0], "14");
    let v: f64 = last[col].parse().unwrap();
    assert!((v / 0.5 - 1.0).abs() <= 0.25, "normalized {v}");
    let summary = json(&tmp.path().join("verify-ddev.json"));
    assert_eq!(summary["passed"].as_bool(), Some(code == 0));
    assert!(tmp.path().join("verify_ddev.svg").exists());
    // The resolved configuration materializes the regime defaults.
    let resolved = fs::read_to_string(tmp.path().join("verify-ddev.config.toml")).unwrap();
    assert!(resolved.contains("name = \"ddev\"") && resolved.contains("n_range = [8, 14]"), "{resolved}");
}

#[test]
fn verify_bottcher_passes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "law = \"two_point 2 3 0.5 0.5\"\n");
    let out = gwdev(tmp.path(), &["verify", "bottcher", "--config", &cfg, "--no-plots"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("verify_bottcher.csv").exists());
    assert!(!tmp.path().join("verify_bottcher.svg").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let text = "law = \"{1: 0.5, 2: 0.5}\"\n[montecarlo]\nn = 3\nepsilons = [0.0, 0.5]\nreplications = 20000\n";
    for dir in [&a, &b] {
        let cfg = write_config(dir.path(), text);
        let out = gwdev(dir.path(), &["mc-tail", "--config", &cfg, "--seed", "9", "--threads", "1"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["mc_tail.csv", "mc_check.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let summary = json(&a.path().join("mc-tail.json"));
    assert_eq!(summary["seed"].as_u64(), Some(9));
}

#[test]
fn empty_epsilon_list_gives_header_only_csv() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "law = \"geometric p=0.3\"\n[exact_tail]\nn = 5\nepsilons = []\n");
    let out = gwdev(tmp.path(), &["exact-tail", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("exact_tail.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert_eq!(json(&tmp.path().join("exact-tail.json"))["experiments"].as_u64(), Some(0));
}

#[test]
fn resolved_config_reloads_to_the_same_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "law = \"1: 0.2, 2: 0.8\"\n[exact_tail]\nn = 6\nepsilons = [0.1]\n");
    assert_eq!(gwdev(tmp.path(), &["exact-tail", "--config", &cfg]).status.code(), Some(0));
    let first = fs::read(tmp.path().join("exact_tail.csv")).unwrap();
    let resolved = tmp.path().join("exact-tail.config.toml");
    let again = TempDir::new().unwrap();
    let out = gwdev(again.path(), &["exact-tail", "--config", resolved.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(first, fs::read(again.path().join("exact_tail.csv")).unwrap());
}

#[test]
fn regime_precondition_failure_exits_with_one() {
    let tmp = TempDir::new().unwrap();
    // ldev_b needs a regularly varying increment law.
    let cfg = write_config(tmp.path(), "law = \"{1: .2, 2: .8}\"\n");
    let out = gwdev(tmp.path(), &["verify", "ldev-b", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("precondition"));
}
