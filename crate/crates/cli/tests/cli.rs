//! Drives the installed binary the way an operator would: one process
//! per subcommand, artifacts handed between stages through the run
//! directory only.

use std::path::Path;
use std::process::{Command, Output};

fn roadcloud(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roadcloud"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_ok(output: &Output) {
    assert!(
        output.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

const SCENE: &str = "\
frames = 12
background_frames = 3
noise_sigma = 0.01

[[vehicles]]
class = \"Passenger Vehicle\"
start = [10.0, -6.0]
velocity = [-0.6, 0.0]

[[vehicles]]
class = \"Bobtail\"
start = [-14.0, 8.0]
velocity = [0.0, -0.7]
points_per_frame = 500
";

#[test]
fn staged_subcommands_compose_into_a_perfect_report() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("scene.toml"), SCENE).unwrap();

    assert_ok(&roadcloud(
        &["synth", "--out", "scene", "--scene", "scene.toml", "--seed", "3"],
        tmp.path(),
    ));
    for stage in [
        vec!["learn-bg", "--input", "scene", "--run", "run"],
        vec!["extract", "--input", "scene", "--run", "run"],
        vec!["track", "--input", "scene", "--run", "run"],
        vec!["reconstruct", "--run", "run"],
        vec!["render", "--run", "run"],
        vec![
            "classify",
            "--run",
            "run",
            "--backend",
            "mock-truth",
            "--shots",
            "2",
        ],
    ] {
        assert_ok(&roadcloud(&stage, tmp.path()));
    }
    let eval = roadcloud(&["evaluate", "--run", "run"], tmp.path());
    assert_ok(&eval);
    let stdout = String::from_utf8(eval.stdout).unwrap();
    assert!(stdout.contains("macro F1: 1.0000"), "{stdout}");
    assert!(stdout.contains("Avg"), "{stdout}");

    // Every artifact the manifest promises is on disk.
    let manifest = std::fs::read_to_string(tmp.path().join("run/manifest.tsv")).unwrap();
    for line in manifest.lines().filter(|l| !l.starts_with('#')) {
        let path = line.split('\t').next().unwrap();
        assert!(
            tmp.path().join("run").join(path).is_file(),
            "{path} listed but missing"
        );
    }
}

#[test]
fn run_subcommand_goes_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("scene.toml"), SCENE).unwrap();
    assert_ok(&roadcloud(
        &["synth", "--out", "scene", "--scene", "scene.toml", "--seed", "4"],
        tmp.path(),
    ));
    let run = roadcloud(
        &[
            "run",
            "--input",
            "scene",
            "--run",
            "run",
            "--backend",
            "mock-truth",
            "--shots",
            "2",
        ],
        tmp.path(),
    );
    assert_ok(&run);
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.contains("macro F1: 1.0000"), "{stdout}");
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("scene.toml"), SCENE).unwrap();
    // The config pins a seed and a backend; the command line overrides
    // the seed and the shot count.
    std::fs::write(
        tmp.path().join("config.toml"),
        "seed = 3\n[classify]\nbackend = \"mock-truth\"\nshots = 1\n",
    )
    .unwrap();
    assert_ok(&roadcloud(
        &["synth", "--out", "scene", "--scene", "scene.toml"],
        tmp.path(),
    ));
    assert_ok(&roadcloud(
        &[
            "run",
            "--config",
            "config.toml",
            "--input",
            "scene",
            "--run",
            "run",
            "--seed",
            "9",
            "--shots",
            "2",
        ],
        tmp.path(),
    ));
    let report = std::fs::read_to_string(tmp.path().join("run/report.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(value["metadata"]["seed"], 9);
    assert_eq!(value["metadata"]["shots"], 2);
}

#[test]
fn unknown_vehicle_class_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("scene.toml"),
        "[[vehicles]]\nclass = \"spaceship\"\nstart = [5.0, 0.0]\nvelocity = [0.0, 0.0]\n",
    )
    .unwrap();
    let out = roadcloud(
        &["synth", "--out", "scene", "--scene", "scene.toml"],
        tmp.path(),
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("unknown vehicle class"), "{stderr}");
}

#[test]
fn failures_exit_nonzero_with_the_stage_named() {
    let tmp = tempfile::tempdir().unwrap();
    let out = roadcloud(&["evaluate", "--run", "missing"], tmp.path());
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error: evaluate:"), "{stderr}");
}
