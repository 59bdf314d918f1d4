use std::path::{Path, PathBuf};
use std::process::Command;

fn afcl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_afcl"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn list_names_twelve_experiments() {
    let out = afcl().arg("list").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 12);
    assert!(text.contains("rts-pbt: positive backward transfer"));
    assert!(text.lines().any(|l| l.starts_with("kf-rls: ")));
}

#[test]
fn every_shipped_config_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut names: Vec<_> = std::fs::read_dir(configs())
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    names.sort();
    assert_eq!(names.len(), 12);
    for cfg in names {
        let out_dir = tmp.path().join(cfg.file_stem().unwrap());
        let out = afcl()
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}: {}",
            cfg.display(),
            String::from_utf8_lossy(&out.stdout)
        );
        let s = summary(&out_dir);
        assert_eq!(s["pass"], true);
        let checks = s["checks"].as_array().unwrap();
        assert!(!checks.is_empty());
        for c in checks {
            for key in ["name", "value", "bound", "tol", "pass"] {
                assert!(c.get(key).is_some(), "missing {key}");
            }
        }
        let csvs = std::fs::read_dir(&out_dir)
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
            .count();
        assert!(csvs > 0, "{} wrote no CSV", cfg.display());
    }
}

#[test]
fn seed_override_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("apa-equivalence.json");
    let mut bodies = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        let st = afcl()
            .args(["run", "--config"])
            .arg(&cfg)
            .args(["--seed", "7", "--out"])
            .arg(&dir)
            .status()
            .unwrap();
        assert!(st.success());
        bodies.push(std::fs::read(dir.join("apa_equivalence.csv")).unwrap());
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn apa_example_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("apa.json");
    std::fs::write(
        &cfg,
        r#"{"version":1,"experiment":"apa-equivalence","seed":1,"trials":1,"stream":{"d":8,"t":6}}"#,
    )
    .unwrap();
    let st = afcl()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .status()
        .unwrap();
    assert!(st.success());
    let s = summary(&tmp.path().join("o"));
    assert!(s["checks"][0]["value"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn config_errors_name_the_key_and_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"version":1,"experiment":"lms-iid","learner":{"gamma":3.0}}"#).unwrap();
    let out = afcl().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learner.gamma"));

    std::fs::write(&cfg, r#"{"version":1,"experiment":"lms-iid","stream":{"dim":3}}"#).unwrap();
    let out = afcl().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("dim"));
}

#[test]
fn property_failure_exits_nonzero() {
    // two tasks cannot reach θ* yet
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("slow.json");
    std::fs::write(
        &cfg,
        r#"{"version":1,"experiment":"opt-stepsize","learner":{"c":0.5},"stream":{"t":2}}"#,
    )
    .unwrap();
    let out = afcl()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("first violated check"));
    assert_eq!(summary(&tmp.path().join("o"))["pass"], false);
}
