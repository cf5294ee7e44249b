use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn get(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_get"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn small_run(dir: &Path, out: &str) -> Output {
    get(
        &["run", "--benchmark", "cantilever2d", "--mesh", "40x20", "--iters", "8", "--out", out, "--export", "all"],
        dir,
    )
}

#[test]
fn run_writes_every_export() {
    let tmp = tempfile::tempdir().unwrap();
    let o = small_run(tmp.path(), "c2d");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let d = tmp.path().join("c2d");
    for f in ["design.json", "history.csv", "timings.csv", "density.vtk", "contours.csv", "stress.vtk", "summary.json"] {
        assert!(d.join(f).is_file(), "{f} missing");
    }
    let history = fs::read_to_string(d.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 8 + 1);

    let vtk = fs::read_to_string(d.join("density.vtk")).unwrap();
    assert!(vtk.contains("DATASET STRUCTURED_POINTS") && vtk.contains("CELL_DATA 800"));

    let contours = fs::read_to_string(d.join("contours.csv")).unwrap();
    assert!(contours.starts_with("contour,point,x,y,kappa\n"));
    assert!(contours.lines().count() > 10);

    let err = String::from_utf8_lossy(&o.stderr);
    for stage in ["TDF", "SEN", "FEA", "MMA"] {
        assert!(err.contains(stage), "timing summary lacks {stage}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["iterations"], 8);
    assert!(summary["binary"]["objective"].as_f64().unwrap() > 0.0);
    assert!(summary["nondiscreteness"].as_f64().unwrap() >= 0.0);
}

#[test]
fn identical_configs_give_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(small_run(tmp.path(), "a").status.success());
    assert!(small_run(tmp.path(), "b").status.success());
    for f in ["design.json", "history.csv", "density.vtk", "contours.csv"] {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = fs::read(tmp.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
}

#[test]
fn evaluate_reproduces_the_final_record() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(small_run(tmp.path(), "c2d").status.success());
    let design = tmp.path().join("c2d/design.json");
    let o = get(&["evaluate", design.to_str().unwrap()], tmp.path());
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout).to_string();
    let c: f64 = text.split("C = ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();

    let history = fs::read_to_string(tmp.path().join("c2d/history.csv")).unwrap();
    let last = history.lines().last().unwrap();
    let recorded: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!((c - recorded).abs() <= 1e-10 * recorded.abs(), "{c} vs {recorded}");

    // and on a finer mesh
    let o = get(&["evaluate", design.to_str().unwrap(), "--mesh", "80x40"], tmp.path());
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("mesh 80x40"));
}

#[test]
fn post_regenerates_the_exports() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(small_run(tmp.path(), "c2d").status.success());
    let o = get(&["post", "c2d/design.json", "--out", "again", "--export", "all"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["design.json", "density.vtk", "contours.csv", "stress.vtk"] {
        let a = fs::read(tmp.path().join("c2d").join(f)).unwrap();
        let b = fs::read(tmp.path().join("again").join(f)).unwrap();
        assert!(a == b, "{f} differs after re-export");
    }
    assert!(!tmp.path().join("again/history.csv").exists());
}

#[test]
fn config_file_with_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{
  "benchmark": "lbeam2d",
  "mesh": [40, 40],
  "optimizer": {"max_iters": 50},
  "export": {"design": true, "history": true, "timings": false, "density": false,
             "contours": false, "curvature": false, "stress": false, "binary": false, "summary": false}
}"#;
    fs::write(tmp.path().join("run.json"), cfg).unwrap();
    let o = get(&["run", "--config", "run.json", "--iters", "3", "--out", "lb"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let history = fs::read_to_string(tmp.path().join("lb/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
    assert!(!tmp.path().join("lb/density.vtk").exists());
}

#[test]
fn unknown_config_key_exits_2_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.json"), "{\n  \"benchmark\": \"cantilever2d\",\n  \"colour\": \"red\"\n}").unwrap();
    let o = get(&["run", "--config", "bad.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.json:3:") && err.contains("colour"), "{err}");
}

#[test]
fn bad_inputs_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(get(&["evaluate", "missing.json"], tmp.path()).status.code(), Some(2));
    fs::write(tmp.path().join("corrupt.json"), "{\"problem_hash\": [").unwrap();
    let o = get(&["evaluate", "corrupt.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("corrupt.json:1:"));
    assert_eq!(get(&["run", "--benchmark", "cantilever2d", "--mesh", "40"], tmp.path()).status.code(), Some(2));
    assert_eq!(get(&["run", "--benchmark", "cantilever2d", "--solver", "lu", "--iters", "1"], tmp.path()).status.code(), Some(2));
    assert_eq!(get(&["frobnicate"], tmp.path()).status.code(), Some(2));

    let o = Command::new(env!("CARGO_BIN_EXE_get"))
        .args(["run", "--benchmark", "cantilever2d", "--mesh", "20x10", "--iters", "1"])
        .env("GET_THREADS", "zero")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("file"), "").unwrap();
    let o = get(&["run", "--benchmark", "cantilever2d", "--mesh", "20x10", "--iters", "1", "--out", "file/sub"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_3_with_iteration() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"benchmark": "cantilever2d", "mesh": [40, 20], "solver": "pcg-jacobi",
                 "solver_options": {"tolerance": 1e-12, "max_iterations": 2}}"#;
    fs::write(tmp.path().join("starved.json"), cfg).unwrap();
    let o = get(&["run", "--config", "starved.json", "--iters", "5", "--out", "x"], tmp.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("iteration 1"));
}

#[test]
fn bench_writes_a_study_table() {
    let tmp = tempfile::tempdir().unwrap();
    let o = get(
        &["bench", "--benchmark", "cantilever2d", "--mesh", "40x20", "--iters", "3", "--study", "epsilon", "--out", "b"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = fs::read_to_string(tmp.path().join("b/bench_epsilon.csv")).unwrap();
    assert_eq!(t.lines().count(), 5);
    assert!(t.lines().nth(1).unwrap().starts_with("epsilon,0.2,3,"));

    let o = get(
        &["bench", "--benchmark", "cantilever2d", "--iters", "2", "--study", "mesh", "--study-mesh", "20x10",
          "--study-mesh", "40x20", "--out", "m"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = fs::read_to_string(tmp.path().join("m/bench_mesh.csv")).unwrap();
    assert_eq!(t.lines().count(), 3);
    assert!(t.lines().all(|l| !l.ends_with(",,") ));
}

#[test]
fn three_dimensional_runs_skip_contours() {
    let tmp = tempfile::tempdir().unwrap();
    let o = get(&["run", "--benchmark", "cantilever3d", "--mesh", "8x4x4", "--layout", "2x1x1x4", "--iters", "2", "--out", "c3"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let vtk = fs::read_to_string(tmp.path().join("c3/density.vtk")).unwrap();
    assert!(vtk.contains("DIMENSIONS 9 5 5"));
    assert!(!tmp.path().join("c3/contours.csv").exists());
}
