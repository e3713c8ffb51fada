use std::fs;
use std::path::Path;

use conecraft::harness::{parse_config, run, RunOptions, RunOutcome, RunStatus, MANIFEST_NAME};
use conecraft::{ConfigErrorKind, Error};

fn run_at(dir: &Path, text: &str, threads: usize) -> RunOutcome {
    let config = parse_config(text).unwrap();
    let options = RunOptions {
        out_dir: Some(dir.to_path_buf()),
        base_dir: dir.to_path_buf(),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| run(&config, &options))
        .unwrap()
}

const LEVELING: &str = "\
[experiment]
kind = leveling
seed = 21

[cone]
preset = orthant
k = 2

[model]
drift = constant
drift_vector = [-0.7071067811865476, -0.7071067811865476]
epsilon = [0.4, 0.2]

[leveling]
x = [0.4, 0.1]
y = [0.1, 0.4]
replicas = 600
dt = 0.01
";

const KILLED: &str = "\
[experiment]
kind = killed_floor
seed = 5

[cone]
preset = orthant
k = 2

[model]
drift = zero
epsilon = [0.5]

[killed_floor]
gamma = 0.5
t = 0.25
replicas = 5000
dt = 0.01
";

#[test]
fn outputs_do_not_depend_on_thread_count() {
    for text in [LEVELING, KILLED] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let one = run_at(a.path(), text, 1);
        let three = run_at(b.path(), text, 3);
        assert!(!one.manifest.files.is_empty());
        assert_eq!(one.manifest.files, three.manifest.files);
    }
}

#[test]
fn manifest_lists_every_output_with_its_digest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_at(dir.path(), LEVELING, 1);
    let written: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join(MANIFEST_NAME)).unwrap()).unwrap();
    let names: Vec<&str> = written["files"].as_array().unwrap().iter().map(|f| f["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["gap.csv", "gap.json"]);
    for f in &out.manifest.files {
        assert_eq!(fs::metadata(dir.path().join(&f.name)).unwrap().len(), f.bytes);
        assert_eq!(f.sha256.len(), 64);
    }
    assert_eq!(written["exit_code"], out.manifest.exit_code);
}

#[test]
fn killed_floor_on_half_width_ball_is_positive() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_at(dir.path(), KILLED, 1);
    assert_eq!(out.manifest.status, RunStatus::Pass);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("floor.json")).unwrap()).unwrap();
    assert!(report["kappa_min"].as_f64().unwrap() > 0.0);
}

#[test]
fn flow_reports_its_terminal_point() {
    let text = "\
[experiment]
kind = flow
seed = 1
[cone]
preset = orthant
k = 2
[model]
drift = constant
drift_vector = [-1, -0.5]
[flow]
x0 = [1, 1]
horizon = 3
dt = 0.01
";
    let dir = tempfile::tempdir().unwrap();
    let out = run_at(dir.path(), text, 1);
    assert_eq!(out.manifest.status, RunStatus::Complete);
    let flow: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("flow.json")).unwrap()).unwrap();
    let z: Vec<f64> = flow["terminal"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    // Both faces are hit before t = 2; the flow then rests at the vertex.
    assert!(z.iter().all(|v| v.abs() < 1e-12), "{z:?}");
}

#[test]
fn invalid_cone_is_rejected_before_running() {
    let text = "\
[experiment]
kind = leveling
seed = 1
[cone]
preset = general
n = 2
normals = [[1, 0], [-1, 0]]
directions = [[1, 0], [-1, 0]]
[model]
drift = zero
[leveling]
x = [0.4, 0.1]
y = [0.1, 0.4]
";
    match parse_config(text) {
        Err(Error::Config(errors)) => {
            assert!(errors.iter().any(|e| e.kind == ConfigErrorKind::Validate), "{errors:?}");
        }
        other => panic!("expected validation errors, got {other:?}"),
    }
}
