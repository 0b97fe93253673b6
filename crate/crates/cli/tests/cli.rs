use std::fs;
use std::process::{Command, Output};

use tomor::output::{parse_vtk_fields, CSV_HEADER};

fn tomor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tomor")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn lists_and_prints_presets() {
    let o = tomor(&["presets"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().collect::<Vec<_>>(), ["paper-2d", "paper-3d"]);

    let o = tomor(&["presets", "paper-3d"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("[grid]"));

    let o = tomor(&["presets", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("paper-2d"));
}

#[test]
fn validate_prints_resolved_config() {
    let o = tomor(&["validate", "-", "--preset", "paper-2d", "--override", "grid.dims=[30,30]"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("dims = [30, 30]"), "{text}");
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[grid]\ndims = [8, 8]\ncolour = 3\n").unwrap();
    let o = tomor(&["validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));

    let o = tomor(&["run", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.toml"));
}

#[test]
fn run_writes_log_fields_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = tomor(&[
        "run",
        "-",
        "--preset",
        "paper-2d",
        "--override",
        "grid.dims=[16,16]",
        "--override",
        "optimizer.max_iterations=6",
        "--override",
        "output.checkpoint_interval=3",
        "--override",
        "solver.strategy=MOR_2_MGCG_1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("MOR_2_MGCG_1"));

    let csv = fs::read_to_string(out.join("history.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("1,"));

    let fields = parse_vtk_fields(&fs::read_to_string(out.join("final.vtk")).unwrap()).unwrap();
    let names: Vec<&str> = fields.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["density", "design", "temperature"]);
    assert!(fields.iter().all(|(_, v)| v.len() == 256));

    for it in [3, 6] {
        assert!(out.join(format!("checkpoint_{it:05}.vtk")).exists());
    }
    let cfg = fs::read_to_string(out.join("config.toml")).unwrap();
    let again = tomor(&["validate", out.join("config.toml").to_str().unwrap()]);
    assert!(again.status.success());
    assert_eq!(stdout(&again), cfg);
    assert!(fs::read_to_string(out.join("summary.txt")).unwrap().contains("iterations          6"));
}
