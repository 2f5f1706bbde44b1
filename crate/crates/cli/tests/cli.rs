use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SESSION: &str = r#"
dyads = 3

[sim]
coupling_gain = 0.8
seed = 1
"#;

const FAST: &str = r#"
[surrogate]
n_perm = 40
seed = 5
"#;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dyad-ggc")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, session: &str, trials: usize) -> Output {
    let cfg = dir.join("session.toml");
    fs::write(&cfg, session).unwrap();
    let out = dir.join("data");
    bin(&["simulate", "--config", path(&cfg), "--trials", &trials.to_string(), "--out", path(&out)])
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    v.sort();
    v
}

#[test]
fn simulate_zero_trials_writes_manifest_only() {
    let tmp = tempfile::tempdir().unwrap();
    let o = simulate(tmp.path(), SESSION, 0);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let data = tmp.path().join("data");
    assert!(csv_files(&data).is_empty());
    let manifest = fs::read_to_string(data.join("manifest.toml")).unwrap();
    assert!(manifest.contains("expected_beats") && !manifest.contains("[[trial]]"));
}

#[test]
fn simulate_twenty_seeds_gives_distinct_files() {
    let tmp = tempfile::tempdir().unwrap();
    let o = simulate(tmp.path(), "[sim]\nseed = 1\n", 20);
    assert!(o.status.success());
    let data = tmp.path().join("data");
    let files = csv_files(&data);
    assert_eq!(files.len(), 20);
    let contents: BTreeSet<Vec<u8>> = files.iter().map(|f| fs::read(data.join(f)).unwrap()).collect();
    assert_eq!(contents.len(), 20);
    let manifest = fs::read_to_string(data.join("manifest.toml")).unwrap();
    let seeds: BTreeSet<&str> = manifest.lines().filter(|l| l.starts_with("seed = ")).collect();
    assert_eq!(seeds.len(), 20);
}

#[test]
fn simulate_rejects_bad_config() {
    let tmp = tempfile::tempdir().unwrap();
    let o = simulate(tmp.path(), "[sim]\ncoupling_band = [7.0, 2.0]\n", 2);
    assert_eq!(o.status.code(), Some(2));
    let o = simulate(tmp.path(), "[sim]\nunknown_key = 1\n", 2);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_then_report_and_surrogate() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(simulate(tmp.path(), SESSION, 3).status.success());
    let cfg = tmp.path().join("pipeline.toml");
    fs::write(&cfg, FAST).unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("report");
    let o = bin(&["analyze", "--input", path(&data), "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with('d')).count(), 3);
    for f in ["summary.csv", "threshold.csv", "provenance.json", "spectra/d01.csv", "plots/d03.svg"] {
        assert!(out.join(f).is_file(), "{f}");
    }

    let again = tmp.path().join("again");
    let o = bin(&["analyze", "--input", path(&data), "--config", path(&cfg), "--out", path(&again)]);
    assert!(o.status.success());
    for f in ["summary.csv", "bands.csv", "threshold.csv", "stats.csv", "spectra/d02.csv"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }

    fs::remove_dir_all(out.join("plots")).unwrap();
    let o = bin(&["report", "--dir", path(&out)]);
    assert!(o.status.success());
    assert_eq!(
        fs::read(out.join("plots/d01.svg")).unwrap(),
        fs::read(again.join("plots/d01.svg")).unwrap()
    );

    let thr = tmp.path().join("thr/q99.csv");
    let o = bin(&[
        "surrogate", "--input", path(&data), "--n-perm", "40", "--seed", "5", "--out", path(&thr), "--config", path(&cfg),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(&thr).unwrap(), fs::read(out.join("threshold.csv")).unwrap());
}

#[test]
fn analyze_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(simulate(tmp.path(), SESSION, 2).status.success());
    let data = tmp.path().join("data");
    let cfg = tmp.path().join("pipeline.toml");

    fs::write(&cfg, "[filter]\nfc = -1.0\n").unwrap();
    let o = bin(&["analyze", "--input", path(&data), "--config", path(&cfg), "--out", path(&tmp.path().join("r0"))]);
    assert_eq!(o.status.code(), Some(2));

    let missing = tmp.path().join("nowhere");
    let o = bin(&["analyze", "--input", path(&missing), "--out", path(&tmp.path().join("r1"))]);
    assert_eq!(o.status.code(), Some(2));

    fs::write(&cfg, FAST).unwrap();
    let bad = data.join("d03_t02.csv");
    let text = fs::read_to_string(&bad).unwrap().replacen("\n0.01,", "\n0.01,NaN_", 1);
    fs::write(&bad, text).unwrap();
    let out = tmp.path().join("r2");
    let o = bin(&["analyze", "--input", path(&data), "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let failures = fs::read_to_string(out.join("failures.csv")).unwrap();
    assert!(failures.contains("d03"));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains("d01") && summary.contains("d02") && !summary.contains("d03,"));
}

#[test]
fn verify_fixture_missing_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin(&["verify-fixture", "absent", "--fixtures", path(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_fixture_passes_on_repo_fixture() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let o = bin(&["verify-fixture", "zero_coupling", "--fixtures", path(&root)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("pass"));
}
