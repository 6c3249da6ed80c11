//! End-to-end tests of the `opinf` binary: the full synthetic pipeline,
//! artifact isolation between stages, error exit codes, and determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn opinf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_opinf"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn opinf");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const BASE_CONFIG: &str = "\
variables = q:signed
energy_threshold = 0.985
tau = 1.5
lambda1_min = 1e-6
lambda1_max = 1e2
lambda1_count = 4
lambda2_min = 1e-6
lambda2_max = 1e2
lambda2_count = 4
nm_max_iters = 60
dt = 0.01
tf = 3.99
signal = sine
signal_p_ref = 0.5
signal_amp = 0.1
signal_freq = 2.0
burgers_n = 32
burgers_viscosity = 0.01
burgers_length = 1.0
burgers_init_amp = 0.8
monitors = 5, 20
seed = 7
";

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Workspace { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// Generate the shared synthetic dataset once per workspace.
fn make_dataset(ws: &Workspace) {
    let synth_cfg = ws.path("synth.cfg");
    write(&synth_cfg, &format!("{BASE_CONFIG}k = 400\n"));
    run_ok(opinf()
        .args(["make-synthetic", "--config"])
        .arg(&synth_cfg)
        .arg("--out")
        .arg(ws.path("data")));
    assert!(ws.path("data/snapshots.oimx").exists());
    assert!(ws.path("data/inputs.oimx").exists());
    assert!(ws.path("data/derivatives.oimx").exists());
}

fn train_config(ws: &Workspace) -> PathBuf {
    let cfg = ws.path("train.cfg");
    write(&cfg, &format!("{BASE_CONFIG}k = 240\n"));
    cfg
}

#[test]
fn full_pipeline_runs_from_persisted_artifacts() {
    let ws = Workspace::new();
    make_dataset(&ws);
    let cfg = train_config(&ws);

    run_ok(opinf()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--snapshots")
        .arg(ws.path("data/snapshots.oimx"))
        .arg("--out")
        .arg(ws.path("model")));
    for artifact in [
        "basis.oimx",
        "singular_values.oimx",
        "scaling.oimx",
        "op_c.oimx",
        "op_a.oimx",
        "op_h.oimx",
        "op_b.oimx",
        "qhat0.oimx",
        "metadata.txt",
        "search_report.txt",
    ] {
        assert!(ws.path("model").join(artifact).exists(), "missing {artifact}");
    }
    let report = std::fs::read_to_string(ws.path("model/search_report.txt")).unwrap();
    assert!(report.contains("winner:"));
    assert!(report.contains("# config used"));
    let meta = std::fs::read_to_string(ws.path("model/metadata.txt")).unwrap();
    assert!(meta.contains("lambda1 ="));

    run_ok(opinf()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--operators")
        .arg(ws.path("model"))
        .arg("--out")
        .arg(ws.path("sim")));
    let status = std::fs::read_to_string(ws.path("sim/trajectory.status.txt")).unwrap();
    assert_eq!(status.trim(), "status = completed");

    run_ok(opinf()
        .args(["evaluate", "--config"])
        .arg(&cfg)
        .arg("--truth")
        .arg(ws.path("data/snapshots.oimx"))
        .arg("--trajectory")
        .arg(ws.path("sim/trajectory.oimx"))
        .arg("--basis")
        .arg(ws.path("model"))
        .arg("--out")
        .arg(ws.path("eval")));
    let prederr = std::fs::read_to_string(ws.path("eval/prederr_q.txt")).unwrap();
    let projerr = std::fs::read_to_string(ws.path("eval/projerr_q.txt")).unwrap();
    let parse_series = |text: &str| -> Vec<(f64, f64)> {
        text.lines()
            .map(|l| {
                let mut it = l.split_whitespace();
                (
                    it.next().unwrap().parse().unwrap(),
                    it.next().unwrap().parse().unwrap(),
                )
            })
            .collect()
    };
    let pred = parse_series(&prederr);
    let proj = parse_series(&projerr);
    assert_eq!(pred.len(), 400);
    assert_eq!(proj.len(), 400);
    assert!(pred.iter().all(|(_, v)| v.is_finite()));
    // The model starts from the projected initial state, so at t0 the
    // prediction error equals the projection error.
    assert!((pred[0].1 - proj[0].1).abs() <= 1e-10 + 1e-6 * proj[0].1.abs());
    assert!(ws.path("eval/monitor_5.txt").exists());
    assert!(ws.path("eval/monitor_20.txt").exists());

    // Stage isolation: preprocess + pod run from the same persisted files.
    run_ok(opinf()
        .args(["preprocess", "--config"])
        .arg(&cfg)
        .arg("--snapshots")
        .arg(ws.path("data/snapshots.oimx"))
        .arg("--out")
        .arg(ws.path("prep")));
    assert!(ws.path("prep/learning.oimx").exists());
    run_ok(opinf()
        .args(["pod", "--config"])
        .arg(&cfg)
        .arg("--snapshots")
        .arg(ws.path("prep/learning.oimx"))
        .arg("--out")
        .arg(ws.path("podout")));
    assert!(ws.path("podout/basis.oimx").exists());
}

#[test]
fn training_is_byte_deterministic_for_a_fixed_seed() {
    let ws = Workspace::new();
    make_dataset(&ws);
    let cfg = train_config(&ws);
    for out in ["model_a", "model_b"] {
        run_ok(opinf()
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--snapshots")
            .arg(ws.path("data/snapshots.oimx"))
            .arg("--out")
            .arg(ws.path(out)));
    }
    for artifact in ["op_c.oimx", "op_a.oimx", "op_h.oimx", "op_b.oimx", "basis.oimx", "metadata.txt"] {
        let a = std::fs::read(ws.path("model_a").join(artifact)).unwrap();
        let b = std::fs::read(ws.path("model_b").join(artifact)).unwrap();
        assert_eq!(a, b, "artifact {artifact} differs between identical runs");
    }
}

#[test]
fn missing_snapshot_file_exits_2_naming_the_path() {
    let ws = Workspace::new();
    let cfg = train_config(&ws);
    let out = opinf()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--snapshots")
        .arg(ws.path("nope.oimx"))
        .arg("--out")
        .arg(ws.path("model"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nope.oimx"), "stderr: {stderr}");
    assert_eq!(stderr.lines().count(), 1, "diagnostic must be a single line");
}

#[test]
fn over_parameterized_training_exits_3() {
    let ws = Workspace::new();
    make_dataset(&ws);
    // k = 20 training columns with fixed r = 5 gives d(5, 1) = 22 >= 20.
    let cfg = ws.path("overparam.cfg");
    write(&cfg, &format!("{BASE_CONFIG}k = 20\nr = 5\n"));
    let out = opinf()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--snapshots")
        .arg(ws.path("data/snapshots.oimx"))
        .arg("--out")
        .arg(ws.path("model"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("over-parameterized"), "stderr: {stderr}");
}

#[test]
fn rank_report_recovers_known_rank_from_text_import() {
    let ws = Workspace::new();
    // Rank-3 data, written through the text import path.
    let (n, k) = (12, 30);
    let mut values = String::from("12 30\n");
    for i in 0..n {
        for j in 0..k {
            let t = j as f64 * 0.2;
            let x = i as f64 * 0.5;
            let v = 5.0 * (x).sin() * (t).cos()
                + 2.0 * (2.0 * x).cos() * (0.5 * t).sin()
                + 0.5 * (3.0 * x).sin() * (1.5 * t).cos();
            values.push_str(&format!("{v} "));
        }
        values.push('\n');
    }
    let data = ws.path("rank3.txt");
    write(&data, &values);
    let cfg = ws.path("rank.cfg");
    write(&cfg, "variables = q:signed\nsignal = none\n");

    let out = run_ok(opinf()
        .args(["rank-report", "--config"])
        .arg(&cfg)
        .arg("--snapshots")
        .arg(&data)
        .args(["--thresholds", "0.985,0.990,0.995,0.999999"])
        .arg("--out")
        .arg(ws.path("report")));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let rows: Vec<Vec<String>> = stdout
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    let ranks: Vec<usize> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(ranks.windows(2).all(|w| w[0] <= w[1]), "ranks {ranks:?}");
    assert_eq!(*ranks.last().unwrap(), 3, "exact rank must cap the report");
    // d column matches 1 + r + r(r+1)/2 + m with m = 0.
    for row in &rows {
        let r: usize = row[1].parse().unwrap();
        let d: usize = row[2].parse().unwrap();
        assert_eq!(d, 1 + r + r * (r + 1) / 2);
    }
    assert!(ws.path("report/rank_report.txt").exists());
}

#[test]
fn simulate_rejects_mismatched_input_dimension() {
    let ws = Workspace::new();
    make_dataset(&ws);
    let cfg = train_config(&ws);
    run_ok(opinf()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--snapshots")
        .arg(ws.path("data/snapshots.oimx"))
        .arg("--out")
        .arg(ws.path("model")));
    // Config without any input signal: dimension mismatch against m = 1.
    let bad_cfg = ws.path("bad.cfg");
    write(&bad_cfg, &format!("{}", BASE_CONFIG.replace("signal = sine", "signal = none")));
    let out = opinf()
        .args(["simulate", "--config"])
        .arg(&bad_cfg)
        .arg("--operators")
        .arg(ws.path("model"))
        .arg("--out")
        .arg(ws.path("sim"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("input dimension"), "stderr: {stderr}");
}
