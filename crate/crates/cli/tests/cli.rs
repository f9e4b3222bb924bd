use std::path::Path;
use std::process::{Command, Output};

fn pkm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pkm")).args(args).env_remove("PKM_SEED").output().expect("run pkm")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "exit {:?}\nstderr: {}", out.status, String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn bench_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("bench.csv");
    stdout(&pkm(&[
        "bench-scaling",
        "--m",
        "24",
        "--k-list",
        "1,2,3,4,6",
        "--c",
        "4",
        "--trials",
        "2",
        "--steps",
        "2",
        "--reads",
        "--out",
        path(&bench),
    ]));
    let text = std::fs::read_to_string(&bench).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("m,k,kind,mean_seconds,std_seconds,trials"));
    assert_eq!(lines.count(), 10);

    let fit: serde_json::Value =
        serde_json::from_str(&stdout(&pkm(&["fit-scaling", "--input", path(&bench)]))).unwrap();
    for key in ["a", "b", "c", "r_squared", "k_opt"] {
        assert!(fit[key].is_number(), "{fit}");
    }
    let k_opt = fit["k_opt"].as_f64().unwrap();
    assert!((1.0..=24.0).contains(&k_opt));
}

#[test]
fn bench_rejects_indivisible_k() {
    let out = pkm(&["bench-scaling", "--m", "10", "--k-list", "1,3", "--steps", "1", "--trials", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not divide"));
}

#[test]
fn capacity_csv_is_seed_stable() {
    let args = ["capacity", "--m", "8", "--c", "6", "--k-list", "1,2", "--T", "1,4", "--trials", "3", "--seed", "5"];
    let a = stdout(&pkm(&args));
    assert!(a.starts_with("T,k,mse,cosine\n"));
    assert_eq!(a.lines().count(), 5);
    assert_eq!(a, stdout(&pkm(&args)));
}

#[test]
fn seed_falls_back_to_env() {
    let args = ["capacity", "--m", "4", "--c", "4", "--k", "2", "--T", "3", "--trials", "2"];
    let run = |seed: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_pkm")).args(args).env("PKM_SEED", seed).output().unwrap();
        stdout(&out)
    };
    let explicit = stdout(&pkm(&[&args[..], &["--seed", "9"]].concat()));
    assert_eq!(run("9"), explicit);
    assert_ne!(run("10"), explicit);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pkm.toml");
    std::fs::write(&cfg, "m = 6\nc = 6\nk = 3\nT = [2]\ntrials = 2\nformat = \"json\"\n").unwrap();
    let rows: serde_json::Value =
        serde_json::from_str(&stdout(&pkm(&["capacity", "--config", path(&cfg), "--k", "2"]))).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["k"], 2);
    assert_eq!(rows[0]["T"], 2);
}

#[test]
fn binding_table() {
    let out = stdout(&pkm(&["binding", "--k", "1", "--T", "5", "--trials", "2"]));
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("T,k,masked_cosine,visible_cosine"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..2], &["5", "1"]);
    assert!(row[2].parse::<f64>().unwrap() > 0.5);
    let err = pkm(&["binding", "--c", "10", "--channels", "3", "--trials", "1"]);
    assert!(!err.status.success());
}

#[test]
fn oracle_check_passes() {
    let report: serde_json::Value = serde_json::from_str(&stdout(&pkm(&["oracle-check", "--trials", "3"]))).unwrap();
    assert_eq!(report["instances"], 36);
    assert_eq!(report["pass"], true);
    assert!(report["max_deviation"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn demo_logs_every_machine_and_saves() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("demo.pkm");
    let out = stdout(&pkm(&[
        "demo",
        "--k",
        "3",
        "--T",
        "4",
        "--policy",
        "softmax",
        "--tau",
        "0.5",
        "--snapshot",
        path(&snap),
    ]));
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("t,machine,gamma,delta_norm"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 12);
    for step in rows.chunks(3) {
        let sum: f64 = step.iter().map(|r| r[2]).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
    let summary: serde_json::Value =
        serde_json::from_str(&stdout(&pkm(&["snapshot", "load", "--input", path(&snap)]))).unwrap();
    assert_eq!(summary["machines"], 3);
}

#[test]
fn snapshot_formats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("mem.bin");
    let json = dir.path().join("mem.json");
    let back = dir.path().join("back.bin");
    stdout(&pkm(&[
        "snapshot",
        "save",
        "--k",
        "2",
        "--m",
        "4",
        "--c",
        "3",
        "--T",
        "3",
        "--seed",
        "4",
        "--out",
        path(&bin),
    ]));
    assert_eq!(&std::fs::read(&bin).unwrap()[..8], b"PKMSNAP\0");
    let first = stdout(&pkm(&["snapshot", "load", "--input", path(&bin), "--convert", path(&json)]));
    assert!(std::fs::read_to_string(&json).unwrap().contains("\"magic\": \"PKMSNAP\""));
    let second = stdout(&pkm(&["snapshot", "load", "--input", path(&json), "--convert", path(&back)]));
    assert_eq!(first, second);
    assert_eq!(std::fs::read(&bin).unwrap(), std::fs::read(&back).unwrap());

    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, b"not a snapshot").unwrap();
    assert!(!pkm(&["snapshot", "load", "--input", path(&bad)]).status.success());
}

#[test]
fn unknown_policy_fails() {
    let out = pkm(&["capacity", "--policy", "greedy", "--trials", "1", "--T", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown policy"));
}
