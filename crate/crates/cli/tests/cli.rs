use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fairfaucet::report::parse_allocations;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fairfaucet"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn fairfaucet")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn scripted_amf_allocations_match_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["run", path(&fixture("scripted_amf.txt")), "--out", path(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let got = fs::read_to_string(dir.path().join("allocations.csv")).unwrap();
    let want = fs::read_to_string(fixture("scripted_amf_allocations.csv")).unwrap();
    assert_eq!(got, want);
    assert_eq!(parse_allocations(&got).unwrap().len(), 17);
    for f in ["gas_log.csv", "summary.csv", "scenario.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn resolved_scenario_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let second = dir.path().join("b");
    let cfg = dir.path().join("c.txt");
    fs::write(&cfg, "algorithm = wsmf\nn = 20\nshuffle = true\n").unwrap();
    assert!(run(&["run", path(&cfg), "--out", path(&first), "--seed", "9"]).status.success());
    let resolved = first.join("scenario.txt");
    assert!(fs::read_to_string(&resolved).unwrap().contains("seed = 9"));
    assert!(run(&["run", path(&resolved), "--out", path(&second)]).status.success());
    for f in ["gas_log.csv", "allocations.csv"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn malformed_config_exits_two_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.txt");
    let out_dir = dir.path().join("out");
    for text in ["algorithm = amf\nn = ten\n", "algorithm = qmf\nround_span = 4\n", "just words\n"] {
        fs::write(&cfg, text).unwrap();
        let out = run(&["run", path(&cfg), "--out", path(&out_dir)]);
        assert_eq!(out.status.code(), Some(2), "{text}");
        assert!(!out_dir.exists());
    }
    let out = run(&["run", path(&dir.path().join("missing.txt")), "--out", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_sweep_point_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    let out_dir = dir.path().join("out");
    fs::write(&cfg, "algorithm = smf\nepoch_span = 100\n").unwrap();
    // n = 60 overflows the 100-block epoch
    let out = run(&["run", path(&cfg), "--out", path(&out_dir), "--sweep", "n=10,60"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
}

#[test]
fn smf_sweep_update_cost_grows_with_n() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("smf.txt");
    fs::write(&cfg, "algorithm = smf\n").unwrap();
    let out = run(&["run", path(&cfg), "--out", path(dir.path()), "--sweep", "n=10,50,100,250"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for n in [10, 50, 100, 250] {
        assert!(dir.path().join(format!("n-{n}")).join("gas_log.csv").exists());
    }
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let maxima: Vec<f64> = summary
        .lines()
        .filter(|l| l.contains(",update_state_max,"))
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(maxima.len(), 4);
    assert!(maxima.windows(2).all(|w| w[0] < w[1]), "{maxima:?}");
}

#[test]
fn summarize_reads_a_gas_log() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["run", path(&fixture("scripted_amf.txt")), "--out", path(dir.path())]).status.success());
    let out = run(&["summarize", path(&dir.path().join("gas_log.csv")), "--algorithm", "amf", "--size", "3"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text, fs::read_to_string(dir.path().join("summary.csv")).unwrap());

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "not,a,gas,log\n").unwrap();
    let out = run(&["summarize", path(&bad), "--algorithm", "amf", "--size", "3"]);
    assert_eq!(out.status.code(), Some(2));
}
