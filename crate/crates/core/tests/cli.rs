use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn seqcurve(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqcurve")).current_dir(dir).env_remove("SEQCURVE_THREADS").args(args).output().unwrap()
}

#[test]
fn validate_table1_is_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let a = seqcurve(dir.path(), &["--out", "a", "--threads", "1", "validate-table1", "--reps", "10000", "--seed", "7"]);
    let b = seqcurve(dir.path(), &["--out", "b", "--threads", "3", "validate-table1", "--reps", "10000", "--seed", "7"]);
    assert!(a.status.success() && b.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    for f in ["table1.csv", "table1.md"] {
        let x = fs::read(dir.path().join("a").join(f)).unwrap();
        let y = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    let csv = fs::read_to_string(dir.path().join("a/table1.csv")).unwrap();
    assert!(csv.starts_with("# subcommand: validate-table1\n"));
    assert!(csv.contains("# seed: 7\n"));
}

#[test]
fn design_reports_702_cases() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.toml"), "schema = 1\nlooks = 4\n").unwrap();
    let out = seqcurve(dir.path(), &["--config", "spec.toml", "--out", "o", "design"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/design.json")).unwrap()).unwrap();
    let n = json["design"]["fixed_sample_size"].as_u64().unwrap();
    assert!(n.abs_diff(702) <= 5, "{n}");
    assert_eq!(json["manifest"]["subcommand"], "design");
    let maxes: Vec<u64> =
        json["max_sample_sizes"].as_array().unwrap().iter().map(|m| m["max"].as_u64().unwrap()).collect();
    assert_eq!(maxes.len(), 4);
    assert!(dir.path().join("o/manifest.json").exists());
}

#[test]
fn malformed_csv_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("m.csv"), "value,arm\n1.0,case\n").unwrap();
    fs::write(dir.path().join("bad.csv"), "value,label\n1.0,case\n0.5,control\nnope,case\n").unwrap();
    for (data, line) in [("m.csv", "line 1"), ("bad.csv", "line 4")] {
        let cfg = format!("schema = 1\ndata = \"{data}\"\nkind = \"roc\"\ngrid = [0.5]\n");
        fs::write(dir.path().join("c.toml"), cfg).unwrap();
        let out = seqcurve(dir.path(), &["--config", "c.toml", "curve"]);
        assert_eq!(out.status.code(), Some(2));
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(line), "{err}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(seqcurve(dir.path(), &["frobnicate"]).status.code(), Some(2));
    fs::write(dir.path().join("noschema.toml"), "looks = 2\n").unwrap();
    assert_eq!(seqcurve(dir.path(), &["--config", "noschema.toml", "design"]).status.code(), Some(2));
    fs::write(dir.path().join("typo.toml"), "schema = 1\nlokos = 2\n").unwrap();
    assert_eq!(seqcurve(dir.path(), &["--config", "typo.toml", "design"]).status.code(), Some(2));
    // a barely-better alternative needs more cases than the solver allows
    fs::write(dir.path().join("tiny.toml"), "schema = 1\nnpv_alt = 0.9000001\n").unwrap();
    assert_eq!(seqcurve(dir.path(), &["--config", "tiny.toml", "--out", "o", "design"]).status.code(), Some(1));
}

#[test]
fn covariance_and_limits_carry_provenance() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.csv"), "index,kind,r_D,r_Dbar\n0.4,roc,0.4,0.7\n0.6,ppv_pct,1,1\n").unwrap();
    fs::write(dir.path().join("cov.toml"), "schema = 1\nprobes = \"p.csv\"\nn_case = 200\nn_control = 200\n").unwrap();
    let out = seqcurve(dir.path(), &["--config", "cov.toml", "--out", "o", "covariance"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cov = fs::read_to_string(dir.path().join("o/covariance.csv")).unwrap();
    assert!(cov.contains("# source: closed form") && cov.contains("# scale: process"));
    let first = cov.lines().find(|l| l.starts_with("roc:0.4:")).unwrap();
    let v: f64 = first.split(',').nth(1).unwrap().parse().unwrap();
    assert!((v - 0.104).abs() < 1e-3, "{v}");

    fs::write(dir.path().join("lim.toml"), "schema = 1\nprobes = \"p.csv\"\ndraws = 2000\n").unwrap();
    let out = seqcurve(dir.path(), &["--config", "lim.toml", "--out", "l", "--seed", "5", "simulate-limits"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lim = fs::read_to_string(dir.path().join("l/limits_summary.csv")).unwrap();
    assert!(lim.contains("# seed: 5") && lim.contains("monte_carlo_se"));
}
