use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ca-enhance"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Three well separated blobs of 15 points each.
fn write_blobs(dir: &Path) -> String {
    let mut text = String::from("x,y,class\n");
    for (c, (cx, cy)) in [(0.0, 0.0), (8.0, 0.0), (0.0, 8.0)].iter().enumerate() {
        for i in 0..15 {
            let t = i as f64;
            text.push_str(&format!("{},{},c{c}\n", cx + (t * 0.7).sin(), cy + (t * 1.3).cos()));
        }
    }
    let path = dir.join("blobs.csv");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn step_by_step_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_blobs(dir.path());
    let d = dir.path();

    ok(&["pool", "--data", &data, "--size", "12", "--seed", "3", "--out", p(&d.join("pool"))]);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("pool/pool.json")).unwrap()).unwrap();
    assert_eq!(meta["pool_size"], 12);

    let stdout = ok(&[
        "enhance",
        "--ensemble",
        p(&d.join("pool/pool.csv")),
        "--sample",
        "6",
        "--alpha",
        "0.6",
        "--out",
        p(&d.join("enh")),
    ]);
    assert!(stdout.contains("converged=true"), "{stdout}");
    assert!(d.join("enh/diagnostics.csv").exists());

    ok(&[
        "cluster",
        "--matrix",
        p(&d.join("enh/enhanced.csv")),
        "--k",
        "3",
        "--out",
        p(&d.join("labels.txt")),
        "--dendrogram",
        p(&d.join("tree.csv")),
    ]);
    let truth: String = (0..45).map(|i| format!("{}\n", i / 15)).collect();
    std::fs::write(d.join("truth.txt"), truth).unwrap();
    let scores = ok(&["eval", "--labels", p(&d.join("labels.txt")), "--truth", p(&d.join("truth.txt"))]);
    let scores: serde_json::Value = serde_json::from_str(&scores).unwrap();
    assert!(scores["ari"].as_f64().unwrap() > 0.9, "{scores}");
    assert_eq!(std::fs::read_to_string(d.join("tree.csv")).unwrap().lines().count(), 1 + 44);
}

#[test]
fn experiment_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_blobs(dir.path());
    let config = dir.path().join("exp.toml");
    std::fs::write(
        &config,
        format!(
            "pool_size = 10\nensemble_size = 5\nrepetitions = 3\nseed = 11\n\
             [dataset]\npath = \"{data}\"\n[sweep]\nalpha = [0.6, 0.8]\n"
        ),
    )
    .unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let stdout = ok(&["experiment", "--config", p(&config), "--out", p(&a)]);
    assert_eq!(stdout.lines().count(), 2);
    ok(&["--workers", "1", "experiment", "--config", p(&config), "--out", p(&b)]);
    // the output directory is echoed in the report, so compare the rest
    let load = |dir: &Path| {
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
        v["config"]["output_dir"] = serde_json::Value::Null;
        v["config"]["workers"] = serde_json::Value::Null;
        v
    };
    assert_eq!(load(&a), load(&b));
    assert_eq!(
        std::fs::read(a.join("grid.csv")).unwrap(),
        std::fs::read(b.join("grid.csv")).unwrap()
    );
    let grid = std::fs::read_to_string(a.join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 2 * 3);
    let summary = std::fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn views_write_images() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_blobs(dir.path());
    let out = dir.path().join("views");
    ok(&["views", "--data", &data, "--seed", "1", "--out", p(&out)]);
    for name in ["input", "enhanced", "difference", "ideal"] {
        let pgm = std::fs::read(out.join(format!("{name}.pgm"))).unwrap();
        assert!(pgm.starts_with(b"P5\n45 45\n255\n"), "{name}");
        assert_eq!(pgm.len(), b"P5\n45 45\n255\n".len() + 45 * 45);
        assert!(out.join(format!("{name}.csv")).exists());
    }
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_blobs(dir.path());
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, format!("pool_size = 5\nensemble_size = 8\n[dataset]\npath = \"{data}\"\n")).unwrap();
    let out = run(&["experiment", "--config", p(&config), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(&config, "no_such_key = 1\n").unwrap();
    assert_eq!(run(&["experiment", "--config", p(&config)]).status.code(), Some(2));
    assert_eq!(run(&["experiment", "--out", p(dir.path())]).status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.csv");
    std::fs::write(&m, "1,0.9,0.1\n0.9,1,0.2\n0.1,0.2,1\n").unwrap();
    let out = run(&[
        "enhance",
        "--matrix",
        p(&m),
        "--gamma1",
        "1e308",
        "--gamma2",
        "1e308",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn other_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["eval", "--labels", p(&dir.path().join("missing")), "--truth", p(&dir.path().join("gone"))]);
    assert_eq!(out.status.code(), Some(1));
}
