use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mgspde"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn checksums(dir: &Path) -> Vec<(String, String)> {
    manifest(dir)["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| (o["file"].as_str().unwrap().to_string(), o["sha256"].as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn list_covers_every_check_once() {
    let o = run(&["list"]);
    assert!(o.status.success());
    let out = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<(String, usize)> = out
        .lines()
        .skip(1)
        .map(|l| {
            let mut it = l.split_whitespace();
            (it.next().unwrap().to_string(), it.next().unwrap().parse().unwrap())
        })
        .collect();
    assert!(rows.len() >= 8);
    let names: BTreeSet<_> = rows.iter().map(|r| r.0.clone()).collect();
    assert_eq!(names.len(), rows.len());
    let mut checks: Vec<usize> = rows.iter().map(|r| r.1).collect();
    checks.sort();
    assert_eq!(checks, (1..=13).collect::<Vec<_>>());
    for n in ["narrow_rectangle_ldp", "radial_mdp", "semigroup_lq", "controlled_error_rate", "mdp_error_envelope", "embedding_dichotomy"] {
        assert!(names.contains(n), "{n}");
    }
    for n in &names {
        let v = run(&["validate", n]);
        assert!(v.status.success(), "{n}: {}", text(&v));
    }
}

#[test]
fn ldp_scenario_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_str().unwrap();
    let o = run(&["run", "narrow_rectangle_ldp", "--out", root, "--workers", "1"]);
    assert!(o.status.success(), "{}", text(&o));
    let dir = tmp.path().join("narrow_rectangle_ldp");
    let csv = std::fs::read_to_string(dir.join("ldp_audit.csv")).unwrap();
    assert!(csv.starts_with("epsilon,p_hat,se,neg_eps_ln_p,J_ref"));
    assert_eq!(csv.lines().count(), 5);
    let first = checksums(&dir);
    assert!(first.iter().any(|(f, _)| f == "ldp_audit.csv"));
    let m = manifest(&dir);
    assert_eq!(m["seed"], 21);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);

    let o = run(&["run", "narrow_rectangle_ldp", "--out", root, "--workers", "3"]);
    assert!(o.status.success());
    assert_eq!(checksums(&dir), first);
    // workers is part of the effective config, so only outputs must match
    assert_ne!(manifest(&dir)["config_hash"], m["config_hash"]);
    let o = run(&["run", "narrow_rectangle_ldp", "--out", root, "--workers", "1"]);
    assert!(o.status.success());
    assert_eq!(manifest(&dir)["config_hash"], m["config_hash"]);

    let o = run(&["run", "narrow_rectangle_ldp", "--out", root, "--seed", "99"]);
    assert!(o.status.success());
    assert_ne!(manifest(&dir)["config_hash"], m["config_hash"]);
    assert_ne!(std::fs::read_to_string(dir.join("ldp_audit.csv")).unwrap(), csv);
}

#[test]
fn mdp_and_error_scenarios_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_str().unwrap();
    for (name, file, header) in [
        ("radial_mdp", "mdp_audit.csv", "epsilon,lambda,p_hat,se,neg_lam2_ln_p,J_ref"),
        ("controlled_error_rate", "error_audit.csv", "epsilon,mse,se,envelope"),
    ] {
        let o = run(&["run", name, "--out", root]);
        assert!(o.status.success(), "{name}: {}", text(&o));
        assert!(text(&o).contains("[PASS]"));
        let csv = std::fs::read_to_string(tmp.path().join(name).join(file)).unwrap();
        assert_eq!(csv.lines().next().unwrap(), header);
    }
}

#[test]
fn check_scenario_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["run", "radial_coefficients", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("radial_coefficients/summary.json")).unwrap()).unwrap();
    assert_eq!(s["pass"], true);
    assert_eq!(s["criterion"], 1);
}

const BROKEN: &str = r#"
scenario = "broken"
criterion = 5

[geometry]
kind = "narrow"
shape = "rectangle"
cells = 8

[noise]
kind = "spectral"
modes = 2

[reaction]
name = "zero"

[solver]
dt = 0.05
horizon = 1.0

[audit]
kind = "ldp"
epsilon = [0.1, 0.05]
samples = 200
initial = { name = "zero" }
observable = { name = "bump" }

[rate]
tilt = "lq"
"#;

#[test]
fn malformed_configs_are_rejected_by_field() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("broken.toml");
    std::fs::write(&p, BROKEN).unwrap();
    for cmd in ["validate", "run"] {
        let o = run(&[cmd, p.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()][..if cmd == "run" { 4 } else { 2 }]);
        assert!(!o.status.success());
        assert!(text(&o).contains("rate.target"), "{}", text(&o));
    }
    assert!(!tmp.path().join("broken").exists());

    std::fs::write(&p, BROKEN.replace("tilt = \"lq\"", "target = 1.0\ntilt = \"lq\"\nextra = 3")).unwrap();
    let o = run(&["validate", p.to_str().unwrap()]);
    assert!(!o.status.success());
    let t = text(&o);
    assert!(t.contains("extra") && t.contains("line"), "{t}");

    std::fs::write(&p, BROKEN.replace("tilt = \"lq\"", "target = 1.0").replace("name = \"zero\"\n\n[solver]", "name = \"cubic\"\n\n[solver]")).unwrap();
    let o = run(&["run", p.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("spde: invalid configuration: unknown reaction 'cubic'"), "{}", text(&o));

    let o = run(&["run", "no_such_scenario"]);
    assert!(!o.status.success());
}
