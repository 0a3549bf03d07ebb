use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "
[prior]
training_shapes = 40
num_points = 256

[scene]
height = 64
width = 64
focal = 60.0
num_frames = 5

[optimizer]
max_outer_rounds = 2
inner_steps = 3

[evaluation]
trials = 2
view_counts = [2, 5]
";

fn shapeba(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapeba"))
        .arg("--config")
        .arg(dir.join("tiny.toml"))
        .arg("--out-dir")
        .arg(dir.join("out"))
        .args(["--log-level", "warn"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

#[test]
fn invalid_config_exits_with_one() {
    let dir = workspace();
    std::fs::write(dir.path().join("tiny.toml"), "upscale = -1.0\n").unwrap();
    assert_eq!(shapeba(dir.path(), &["synth"]).status.code(), Some(1));
    std::fs::write(dir.path().join("tiny.toml"), "no_such_key = 3\n").unwrap();
    assert_eq!(shapeba(dir.path(), &["synth"]).status.code(), Some(1));
}

#[test]
fn missing_config_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(shapeba(dir.path(), &["synth"]).status.code(), Some(2));
}

#[test]
fn run_refuses_to_overwrite_and_validates() {
    let dir = workspace();
    let out = dir.path().join("out");
    assert!(shapeba(dir.path(), &["synth"]).status.success());
    assert!(out.join("scenes/scene_0001/gt.json").exists());

    let first = shapeba(dir.path(), &["run", "--scene", "0"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let result = out.join("runs/prior_l0.01_v5/trial_0000/result.json");
    let bytes = std::fs::read(&result).unwrap();

    assert_eq!(shapeba(dir.path(), &["run", "--scene", "0"]).status.code(), Some(2));
    assert!(shapeba(dir.path(), &["--force", "run", "--scene", "0"]).status.success());
    assert_eq!(std::fs::read(&result).unwrap(), bytes);

    assert!(out.join("results/trials.csv").exists());
    assert!(shapeba(dir.path(), &["validate"]).status.success());
    assert!(shapeba(dir.path(), &["eval"]).status.success());

    std::fs::remove_file(out.join("scenes/scene_0001/frame_02.raw")).unwrap();
    let broken = shapeba(dir.path(), &["validate"]);
    assert_eq!(broken.status.code(), Some(1));
}

#[test]
fn validate_on_an_empty_directory_fails() {
    let dir = workspace();
    assert_eq!(shapeba(dir.path(), &["validate"]).status.code(), Some(1));
}
