use std::fs;
use std::process::{Command, Output};

fn evogame(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evogame")).args(args).env_remove("EVOGAME_OUT_DIR").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn list_builtins_names_every_example() {
    let o = evogame(&["list-builtins"]);
    assert!(o.status.success());
    let names: Vec<String> = stdout(&o).lines().map(str::to_owned).collect();
    assert_eq!(names, ["example1", "example2", "example3", "example4_rd", "example4_pcd"]);
}

#[test]
fn shown_builtin_can_be_run_from_a_file() {
    let o = evogame(&["list-builtins", "--show"]);
    let text = stdout(&o);
    let start = text.find("# example1\n").unwrap() + "# example1\n".len();
    let end = text.find("# example2").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ex1.toml");
    fs::write(&path, &text[start..end]).unwrap();
    let out = dir.path().join("out");
    let o = evogame(&["run", path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--t-end", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("trajectory_pcd_0.csv").exists());
}

#[test]
fn run_writes_outputs_and_honours_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ex3");
    let o = evogame(&[
        "run", "example3", "--out", out.to_str().unwrap(), "--method", "rk4", "--t-end", "40", "--grid", "5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("4 trajectories"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["scenario"], "example3");
    let grid = fs::read_to_string(out.join("phase_grid_pcd.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 25);
    let last = fs::read_to_string(out.join("trajectory_pcd_0.csv")).unwrap();
    let t: f64 = last.lines().last().unwrap().split(',').next().unwrap().parse().unwrap();
    assert!((t - 40.0).abs() < 1e-9);
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_evogame"))
        .args(["run", "example1", "--t-end", "2"])
        .env("EVOGAME_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("summary.json").exists());
}

#[test]
fn analyze_prints_fixed_point_json() {
    let o = evogame(&["analyze", "example3"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let accepted = v[0]["catalog"]["accepted"].as_array().unwrap();
    assert_eq!(accepted.len(), 5);
    let interior = accepted.iter().find(|p| p["label"] == "interior").unwrap();
    assert_eq!(interior["class"], "linear_center");
}

#[test]
fn unknown_builtin_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = evogame(&["run", "example9", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error [config]"));
}

#[test]
fn malformed_scenario_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "name = \"bad\"\nprotocols = [\"replicator\"\n").unwrap();
    let o = evogame(&["analyze", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = evogame(&["run", "example1", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}
