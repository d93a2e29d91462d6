use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn palms(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_palms")).args(args).output().unwrap();
    assert!(out.status.success(), "palms {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

struct Suite {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Suite {
    fn new() -> Suite {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let spec = r#"{"worlds":[{"generator":"corridor_grid","extents":[30.0,20.0],"corridor_width":2.0,"door_gap":1.0,"seed":3}],
                      "starts_per_world":1,"paths_per_start":2,"path_length":40.0,"seed":5}"#;
        fs::write(root.join("spec.json"), spec).unwrap();
        palms(&["synth", "--spec", s(&root.join("spec.json")), "-o", s(&root.join("suite"))]);
        Suite { _dir: dir, root }
    }

    fn file(&self, name: &str) -> PathBuf {
        self.root.join("suite").join(name)
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_writes_a_loadable_manifest() {
    let suite = Suite::new();
    let m = json(&suite.file("manifest.json"));
    assert_eq!(m["format"], "palms-manifest/1");
    assert_eq!(m["scenarios"].as_array().unwrap().len(), 2);
    let odo = fs::read_to_string(suite.file("w0s0p0.odo.csv")).unwrap();
    assert!(odo.starts_with("# format: palms-odo/1\nt,dx,dy,dheading_deg\n"));
    assert_eq!(json(&suite.file("suite.json"))["path_length"], 40.0);
}

#[test]
fn heatmap_exports_images_and_parameters() {
    let suite = Suite::new();
    let out = suite.root.join("hm");
    palms(&[
        "heatmap",
        "--plan", s(&suite.file("corridor_grid-3.plan.json")),
        "--scan", s(&suite.file("w0s0p0.scan.json")),
        "-o", s(&out),
        "--alpha", "0.75",
    ]);
    for k in 0..4 {
        for name in [format!("heatmap_{k}.pgm"), format!("mask_{k}.pbm"), format!("kernel_{k}.pgm")] {
            assert!(out.join(&name).exists(), "{name}");
        }
    }
    let r = json(&out.join("report.json"));
    assert_eq!(r["params"]["kernel"]["alpha"], 0.75);
    assert_eq!(r["params"]["top_fraction"], 0.01);
    assert_eq!(r["heatmaps"]["mask_cell_counts"].as_array().unwrap().len(), 4);
}

#[test]
fn localize_writes_timeline_and_is_repeatable() {
    let suite = Suite::new();
    let run = |dir: &str| {
        let out = suite.root.join(dir);
        palms(&[
            "localize",
            "--plan", s(&suite.file("corridor_grid-3.plan.json")),
            "--scan", s(&suite.file("w0s0p0.scan.json")),
            "--odometry", s(&suite.file("w0s0p0.odo.csv")),
            "--truth", s(&suite.file("w0s0p0.truth.csv")),
            "--n-particles", "800",
            "--rng-seed", "9",
            "-o", s(&out),
        ]);
        out
    };
    let (a, b) = (run("a"), run("b"));
    let timeline = fs::read_to_string(a.join("timeline.csv")).unwrap();
    assert_eq!(timeline, fs::read_to_string(b.join("timeline.csv")).unwrap());
    let mut lines = timeline.lines();
    assert_eq!(lines.next().unwrap(), "step,t_seconds,phase,dominant_label,dominant_share,cluster_share,pred_x,pred_y,err_m");
    let odo_steps = fs::read_to_string(suite.file("w0s0p0.odo.csv")).unwrap().lines().count() - 2;
    assert_eq!(lines.count(), odo_steps + 1);
    let r = json(&a.join("localize.json"));
    assert_eq!(r["params"]["filter"]["n_particles"], 800);
    assert_eq!(r["seed"], 9);
    assert_eq!(r["steps"], odo_steps);
}

#[test]
fn bench_writes_records_and_summary() {
    let suite = Suite::new();
    let out = suite.root.join("bench");
    let table = palms(&[
        "bench",
        "--manifest", s(&suite.file("manifest.json")),
        "-o", s(&out),
        "--trials", "2",
        "--n-particles", "300",
        "--methods", "palms,uniform",
        "--master-seed", "4",
    ]);
    assert!(table.contains("palms") && table.contains("uniform"));
    let records = fs::read_to_string(out.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 2 * 2 * 2);
    let r = json(&out.join("report.json"));
    assert_eq!(r["master_seed"], 4);
    assert_eq!(r["params"]["filter"]["n_particles"], 300);
    assert_eq!(r["summaries"].as_array().unwrap().len(), 2);
    assert!(out.join("summary.csv").exists() && out.join("summary.txt").exists());
}

#[test]
fn bad_input_fails_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_palms"))
        .args(["heatmap", "--plan", "/nonexistent.json", "--scan", "/nonexistent.json", "-o", "/tmp/x"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}
