use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fermion-clt");

fn shipped(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"))
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"
name = "small"
mu = 1.0
hbar = [0.1]

[potential]
kind = "harmonic"

[grid]
x_min = -2.5
x_max = 2.5
points = [500]

[functions.x]
kind = "polynomial"
coefficients = [0.0, 1.0]

[sampler]
seed = 11
n_samples = 300
hbar = 0.1
points = 500
function = "x"
"#;

#[test]
fn increasing_hbar_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, SMALL.replace("hbar = [0.1]", "hbar = [0.05, 0.1]").replace("points = [500]", "points = [500, 500]"))
        .unwrap();
    let out = run(&["variance", "--config", path_str(&cfg), "--out", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_key_and_unknown_subcommand_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("typo.toml");
    fs::write(&cfg, SMALL.replace("mu = 1.0", "mu = 1.0\nmuu = 2.0")).unwrap();
    assert_eq!(run(&["sample", "--config", path_str(&cfg)]).status.code(), Some(1));
    let ok = dir.path().join("ok.toml");
    fs::write(&ok, SMALL).unwrap();
    assert!(!run(&["nonsense", "--config", path_str(&ok)]).status.success());
}

#[test]
fn harmonic_variance_routes_agree_with_one_quarter() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["variance", "--config", path_str(&shipped("harmonic")), "--out", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let mut reader = csv::Reader::from_path(dir.path().join("variance/routes.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let row = reader
        .records()
        .map(|r| r.unwrap())
        .find(|r| &r[0] == "x")
        .expect("row for x");
    for route in ["fourier", "devinatz", "gff"] {
        let i = headers.iter().position(|h| h == route).unwrap();
        let v: f64 = row[i].parse().unwrap();
        assert!((v - 0.25).abs() < 1e-4, "{route}: {v}");
    }
}

#[test]
fn summary_and_metadata_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["variance", "--config", path_str(&shipped("harmonic")), "--out", path_str(dir.path())]);
    assert!(out.status.success());
    let text = fs::read_to_string(dir.path().join("variance/summary.json")).unwrap();
    let summary: serde_json::Value = serde_json::from_str(&text).unwrap();
    let items = summary.as_array().expect("array of criteria");
    assert!(!items.is_empty());
    for c in items {
        assert!(c["criterion_id"].is_string());
        assert!(c["measured"].is_number());
        assert!(c["threshold"].is_number());
        assert!(c["pass"].is_boolean());
    }
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("variance/metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["subcommand"], "variance");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS ")).count(), items.len());
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let read = |sub: &str, seed: &str| {
        let out = dir.path().join(format!("{sub}-{seed}"));
        let status = run(&["sample", "--config", path_str(&cfg), "--out", path_str(&out), "--seed", seed]).status;
        assert!(matches!(status.code(), Some(0) | Some(3)));
        fs::read(out.join("sample/linear_statistics.csv")).unwrap()
    };
    let a = read("a", "5");
    let b = read("b", "5");
    let c = read("c", "6");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn szego_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let files: Vec<Vec<u8>> = ["one", "two"]
        .iter()
        .map(|tag| {
            let out = dir.path().join(tag);
            let status = run(&["szego", "--config", path_str(&shipped("harmonic")), "--out", path_str(&out)]).status;
            assert_eq!(status.code(), Some(0));
            fs::read(out.join("szego/szego.csv")).unwrap()
        })
        .collect();
    assert_eq!(files[0], files[1]);
}
