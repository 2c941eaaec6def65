use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 3

[geometry]
kind = "channel"
dim = 2
length = 2.2
height = 0.41
obstacles = [{ kind = "ellipse", center = [0.5, 0.2], semi_axes = [0.05, 0.05] }]

[flow]
nu = 1e-3
vbar = 1.0
k = 0.02
t_end = 0.12

[levels]
coarse = 1
predict = 1

[network]
n_hidden = 8
depth = 2

[training]
t_train = [0.04, 0.12]
t_val = [0.0, 0.04]

[training.optimizer]
max_epochs = 3
batch_size = 64

[output]
window = [0.0, 0.12]
vtk_every = 3
"#;

fn dnnmg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dnnmg")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = dnnmg(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("c.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let cfg = s(&cfg);

    let info = ok(&["mesh-info", "--config", cfg]);
    assert!(info.contains("Reynolds number 100"), "{info}");

    let reference = d.join("ref");
    ok(&["solve", "--config", cfg, "--level", "2", "--out", s(&reference)]);
    for f in ["manifest.json", "functionals.csv", "trajectory.dmgt", "summary.json", "state_00003.vtk"] {
        assert!(reference.join(f).exists(), "{f} missing");
    }
    let manifest = std::fs::read_to_string(reference.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"partial\": false"));

    let work = d.join("work");
    ok(&["export-data", "--config", cfg, "--reference", s(&reference), "--out", s(&work)]);
    assert!(work.join("data/train.stats.json").exists());
    ok(&["train", "--config", cfg, "--out", s(&work)]);
    let model = work.join("model.dnmg");
    assert!(model.exists());

    let hybrid = d.join("hybrid");
    let summary = ok(&["dnnmg", "--config", cfg, "--model", s(&model), "--out", s(&hybrid)]);
    assert!(summary.contains("\"network_evaluations\": 6"), "{summary}");
    assert!(hybrid.join("trajectory.dmgt").exists());

    let same = ok(&["compare", s(&reference), s(&reference)]);
    assert!(same.contains("E_v = 0.000000e0"), "{same}");
    let errs = d.join("errs");
    let diff = ok(&["compare", s(&hybrid), s(&reference), "--out", s(&errs)]);
    assert!(!diff.contains("E_v = 0.000000e0"), "{diff}");
    assert!(errs.join("errors.csv").exists());

    let before = std::fs::read_to_string(reference.join("functionals.csv")).unwrap();
    let again = d.join("again");
    ok(&["functionals", s(&reference), "--out", s(&again)]);
    let after = std::fs::read_to_string(again.join("functionals.csv")).unwrap();
    assert_eq!(before.lines().count(), after.lines().count());

    // a model for a different patch depth is rejected
    let wide = d.join("wide.toml");
    std::fs::write(&wide, CONFIG.replace("predict = 1", "predict = 2")).unwrap();
    let out = dnnmg(&["train", "--config", s(&wide), "--data", s(&work.join("data")), "--out", s(&d.join("w"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("width"));
}

#[test]
fn invalid_configuration_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CONFIG.replace("k = 0.02", "k = -0.02")).unwrap();
    let out = dnnmg(&["solve", "--config", s(&cfg)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("flow.k"));
    let out = dnnmg(&["dnnmg", "--config", s(&cfg)]);
    assert!(!out.status.success());
}

#[test]
fn hybrid_run_without_model_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = dnnmg(&["dnnmg", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("model"));
}
