use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sceno_core::pac::{CertificateFile, PacCertificate};
use sceno_core::Mlp;

fn sceno(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sceno"))
        .args(args)
        .env_remove("SCENO_SEED")
        .output()
        .expect("run sceno")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_BRAKING: &str = r#"{
  "name": "small-braking",
  "tau": 1.0,
  "parameters": [
    {"name": "npc_speed", "lo": 5.0, "hi": 15.0, "unit": "m/s"},
    {"name": "init_gap", "lo": 5.0, "hi": 40.0, "unit": "m"},
    {"name": "trigger_gap", "lo": 5.0, "hi": 40.0, "unit": "m"}
  ],
  "blackbox": {"kind": "builtin", "scenario": "braking"},
  "learn": {
    "n_init": 200, "n_inc": 20, "n_ex": 4, "max_iters": 2,
    "epsilon": 0.01, "eta": 0.001, "hidden": [8, 8],
    "train": {"epochs": 30, "lr": 0.003}
  }
}"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn learn_is_byte_reproducible_and_prints_k() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "braking.json", SMALL_BRAKING);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = sceno(&["learn", "--config", p(&cfg), "--seed", "7", "--out", p(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("K = 1582"), "{}", stdout(&o));
    }
    for f in ["model.json", "certificate.json", "dataset.json", "history.json", "scenario.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let manifest = std::fs::read_to_string(a.join("manifest-learn.json")).unwrap();
    assert!(manifest.contains("\"seed\": 7"));
    assert!(manifest.contains("\"exit_code\": 0"));
}

#[test]
fn rerun_reuses_logged_evaluations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "braking.json", SMALL_BRAKING);
    let out = dir.path().join("run");
    let args = ["learn", "--config", p(&cfg), "--seed", "3", "--out", p(&out)];
    let first = sceno(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    let model = std::fs::read(out.join("model.json")).unwrap();
    let logged = std::fs::read_to_string(out.join("evaluations.jsonl")).unwrap().lines().count();
    let second = sceno(&args);
    assert!(second.status.success());
    assert!(
        stdout(&second).contains(&format!("reused from evaluations.jsonl: {logged}")),
        "{}",
        stdout(&second)
    );
    assert_eq!(std::fs::read(out.join("model.json")).unwrap(), model);
    let after = std::fs::read_to_string(out.join("evaluations.jsonl")).unwrap().lines().count();
    assert_eq!(after, logged);
}

#[test]
fn interrupted_learning_keeps_completed_evaluations() {
    let dir = tempfile::tempdir().unwrap();
    let mock = env!("CARGO_BIN_EXE_sceno-mock-sim");
    let text = format!(
        r#"{{"name": "flaky", "tau": 0.0,
            "parameters": [{{"name": "a", "lo": 0, "hi": 1, "unit": "-"}}],
            "blackbox": {{"kind": "subprocess", "command": ["{mock}", "fail"], "timeout": 10}},
            "learn": {{"n_init": 50, "max_iters": 1, "epsilon": 0.5, "eta": 0.5, "hidden": [4]}}}}"#
    );
    let cfg = write_config(dir.path(), "flaky.json", &text);
    let out = dir.path().join("run");
    let o = sceno(&["learn", "--config", p(&cfg), "--seed", "1", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("collision model diverged"), "{err}");
    assert!(err.contains("theta"), "{err}");
    let kept = std::fs::read_to_string(out.join("evaluations.jsonl")).unwrap();
    let n = kept.lines().count();
    assert!(n > 0 && n < 50, "{n} evaluations kept");
    assert!(kept.lines().all(|l| l.contains("\"rho\"")));
}

#[test]
fn missing_field_exits_1_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_BRAKING.replace("\"tau\": 1.0,", "");
    let cfg = write_config(dir.path(), "bad.json", &text);
    let o = sceno(&["learn", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("tau"), "{}", stderr(&o));
}

fn toy_artifacts(dir: &Path, value: f64) -> (PathBuf, PathBuf) {
    let f = Mlp::constant(&[2, 4, 1], value).unwrap();
    let cert = PacCertificate {
        lambda_star: 0.5,
        epsilon: 0.05,
        eta: 0.01,
        k: 225,
        seed: 0,
        sample_digest: "unused".into(),
    };
    let model = dir.join("model.json");
    let cert_path = dir.join("certificate.json");
    f.save(&model).unwrap();
    std::fs::write(&cert_path, CertificateFile::new(cert, "toy", &f).unwrap().to_json_pretty().unwrap()).unwrap();
    (model, cert_path)
}

#[test]
fn verify_exit_codes_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let (model, cert) = toy_artifacts(dir.path(), 3.0);
    let safe = sceno(&["verify", "--model", p(&model), "--cert", p(&cert), "--tau", "2.0"]);
    assert_eq!(safe.status.code(), Some(0), "{}", stdout(&safe));
    assert!(stdout(&safe).starts_with("SAFE"));

    let unsafe_run = sceno(&["verify", "--model", p(&model), "--cert", p(&cert), "--tau", "2.9"]);
    assert_eq!(unsafe_run.status.code(), Some(2));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("verify-report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "UNSAFE");
    assert!(report["counterexample"].is_array());
    assert_eq!(report["counterexample_value"], 3.0);
    assert_eq!(report["counterexample_value_minus_lambda"], 2.5);
}

#[test]
fn verify_unknown_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let f = Mlp::new(&[3, 16, 16, 1], 4).unwrap();
    let model = dir.path().join("model.json");
    f.save(&model).unwrap();
    let cert = PacCertificate {
        lambda_star: 0.0,
        epsilon: 0.05,
        eta: 0.01,
        k: 225,
        seed: 0,
        sample_digest: String::new(),
    };
    let cert_path = dir.path().join("certificate.json");
    std::fs::write(&cert_path, CertificateFile::new(cert, "rand", &f).unwrap().to_json_pretty().unwrap()).unwrap();
    // The exact minimum as threshold can neither be certified nor beaten.
    let r = sceno_core::bab_min(&f, &sceno_core::ParamBox::unit(3), &sceno_core::BabConfig::default());
    let tau = format!("{}", r.lower);
    let o = sceno(&["verify", "--model", p(&model), "--cert", p(&cert_path), "--tau", &tau, "--budget", "1"]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
}

#[test]
fn stale_certificate_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let (model, cert) = toy_artifacts(dir.path(), 3.0);
    Mlp::constant(&[2, 4, 1], 3.5).unwrap().save(&model).unwrap();
    let o = sceno(&["verify", "--model", p(&model), "--cert", p(&cert), "--tau", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("certificate belongs to model"), "{}", stderr(&o));
}

#[test]
fn explore_render_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let f = Mlp::new(&[3, 8, 1], 2).unwrap();
    let model = dir.path().join("model.json");
    f.save(&model).unwrap();
    let o = sceno(&["explore", "--model", p(&model), "--dims", "0,2", "--grid", "6", "--tau", "0.0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read(dir.path().join("heatmap.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&csv).lines().count(), 1 + 36);

    let replay = sceno(&["replay", p(&dir.path().join("manifest-explore.json"))]);
    assert!(replay.status.success());
    assert_eq!(std::fs::read(dir.path().join("heatmap.csv")).unwrap(), csv);

    let svg = dir.path().join("map.svg");
    let o = sceno(&["render", "--heatmap", p(&dir.path().join("heatmap.csv")), "--out", p(&svg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&svg).unwrap();
    assert!(text.starts_with("<svg") && text.matches("<rect").count() >= 36);
}

#[test]
fn explore_resolves_names_through_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario.json", SMALL_BRAKING);
    let f = Mlp::new(&[3, 8, 1], 2).unwrap();
    let model = dir.path().join("model.json");
    f.save(&model).unwrap();
    let o = sceno(&["explore", "--model", p(&model), "--dims", "init_gap,trigger_gap", "--grid", "2", "--tau", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = std::fs::read_to_string(dir.path().join("manifest-explore.json")).unwrap();
    assert!(manifest.contains(p(&cfg)));
    let m: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(m["dims"], serde_json::json!([1, 2]));

    let o = sceno(&["explore", "--model", p(&model), "--dims", "fog,trigger_gap", "--grid", "2", "--tau", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_builtin_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    // npc 10 m/s braking at 4, gap 20, ego 15, trigger 20: the ego brakes at
    // once; with 0.5 s delay and 6 m/s^2 the minimum gap is analytic.
    let o = sceno(&["simulate", "--scenario", "braking", "--theta", "10,4,20,15,20", "--out", p(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rec: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("simulation.json")).unwrap()).unwrap();
    let rho = rec["rho"].as_f64().unwrap();
    // Ego covers 15*0.5 + 15^2/12 = 26.25 m, NPC covers 10^2/8 = 12.5 m
    // (both stopped before contact), so the final gap is 20 + 12.5 - 26.25.
    assert!((rho - 6.25).abs() < 5e-3, "{rho}");
}

#[test]
fn simulate_rejects_unknown_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let o = sceno(&["simulate", "--scenario", "highway", "--theta", "1,2", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("highway"));
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (model, cert) = toy_artifacts(dir.path(), 3.0);
    let o = Command::new(env!("CARGO_BIN_EXE_sceno"))
        .args(["verify", "--model", p(&model), "--cert", p(&cert)])
        .env("SCENO_TAU", "1.0")
        .env("SCENO_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest = std::fs::read_to_string(dir.path().join("manifest-verify.json")).unwrap();
    assert!(manifest.contains("\"seed\": 99"));
}
