use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skewlab"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn report(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn twin_finds_the_mobius_pair() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["twin"], &configs().join("mobius-twin.toml"), dir.path());
    assert_eq!(o.status.code(), Some(0));
    let r = report(dir.path());
    assert_eq!(r["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(r["config"]["system"]["family"], "mobius-rotation");
    let fps = r["result"]["twin"]["fixed_points"].as_array().unwrap();
    let l3 = 3f64.ln();
    let has = |x: f64, lm: f64| {
        fps.iter().any(|f| {
            (f["angle"].as_f64().unwrap() - x).abs() < 1e-9 && (f["log_multiplier"].as_f64().unwrap() - lm).abs() < 1e-9
        })
    };
    assert!(has(0.0, -l3) && has(0.5, l3), "{fps:?}");
    let csv = std::fs::read_to_string(dir.path().join("fixed_points.csv")).unwrap();
    assert!(csv.starts_with("angle,log_multiplier,exponent\n"));
}

#[test]
fn rotations_fail_the_covering_axiom() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify-axioms"], &configs().join("rotations.toml"), dir.path());
    assert_eq!(o.status.code(), Some(1));
    let r = report(dir.path());
    assert_eq!(r["status"], "fail");
    let checks = r["checks"].as_array().unwrap();
    assert!(checks.iter().any(|c| c["name"] == "cec+" && c["pass"] == false));
}

#[test]
fn horseshoe_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = configs().join("blender-horseshoe.toml");
    for out in [&a, &b] {
        let o = run(&["horseshoe", "--seed", "7"], &cfg, out);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 5);
    for n in &names {
        assert_eq!(std::fs::read(a.join(n)).unwrap(), std::fs::read(b.join(n)).unwrap(), "{n:?} differs");
    }
    assert_eq!(report(&a)["config"]["run"]["seed"], 7);

    // the saved horseshoe re-verifies without rebuilding
    let again = dir.path().join("again.toml");
    let text = format!(
        "[system]\nfamily = \"synthetic-blender\"\n[params]\nhorseshoe_file = {:?}\n",
        a.join("horseshoe.json").to_str().unwrap()
    );
    std::fs::write(&again, text).unwrap();
    let out = dir.path().join("c");
    assert_eq!(run(&["covering"], &again, &out).status.code(), Some(0));
    assert_eq!(run(&["entropy-bounds"], &again, &out).status.code(), Some(0));
    assert_eq!(report(&out)["result"]["holds"], true);
}

#[test]
fn invalid_fields_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[system]\nfamily = \"synthetic-blender\"\n[params]\neps_e = -1.0\n").unwrap();
    let o = run(&["skeleton"], &cfg, &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("params.eps_e"));

    std::fs::write(&cfg, "[system]\nfamily = \"mobius-rotation\"\nangles = [0.1]\n").unwrap();
    let o = run(&["twin"], &cfg, &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("system.angles"));

    let o = run(&["twin", "--grid", "0"], &configs().join("mobius-twin.toml"), &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run.grid"));
}

#[test]
fn refused_preconditions_exit_as_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("coarse.toml");
    std::fs::write(&cfg, "[system]\nfamily = \"synthetic-blender\"\n[params]\ndelta0 = 0.02\n").unwrap();
    let o = run(&["horseshoe"], &cfg, &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
    let r = report(&dir.path().join("o"));
    assert!(r["error"].as_str().unwrap().contains("delta0 < min(K1, K4)"));
}
