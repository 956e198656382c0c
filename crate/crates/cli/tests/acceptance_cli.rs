//! CLI acceptance: command outputs are deterministic byte-for-byte across
//! reruns and worker counts, and the documented exit codes hold.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

fn gazeloc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gazeloc"))
}

fn run_ok(dir: &Path, args: &[&str]) {
    let output = gazeloc().current_dir(dir).args(args).output().expect("spawn");
    assert!(
        output.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Every file under `root`, keyed by relative path.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("read_dir") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).expect("under root").to_path_buf();
                files.insert(rel, std::fs::read(&path).expect("read file"));
            }
        }
    }
    files
}

fn assert_identical(a: &Path, b: &Path, what: &str) {
    let left = snapshot(a);
    let right = snapshot(b);
    let left_names: Vec<_> = left.keys().collect();
    let right_names: Vec<_> = right.keys().collect();
    assert_eq!(left_names, right_names, "{what}: file sets differ");
    for (name, bytes) in &left {
        assert_eq!(
            bytes, &right[name],
            "{what}: {} differs",
            name.display()
        );
    }
}

/// Runs the whole pipeline into `out` with the given worker count.
fn run_pipeline(dir: &Path, out: &str, jobs: &str) {
    let sessions = format!("{out}/sessions");
    run_ok(
        dir,
        &[
            "--seed", "11", "--jobs", jobs, "--out-dir", out,
            "gen-synth", "--n", "8", "--image-size", "64",
            "--labels", "Pneumothorax,ECS",
        ],
    );
    run_ok(
        dir,
        &[
            "--seed", "11", "--jobs", jobs, "--out-dir", out,
            "extract", "--sessions", &sessions,
            "--pixels-per-degree", "4", "--grid", "16", "--pgm",
        ],
    );
    run_ok(
        dir,
        &[
            "--seed", "11", "--jobs", jobs, "--out-dir", out,
            "label-report", "--sessions", &sessions,
        ],
    );
    run_ok(
        dir,
        &[
            "--seed", "11", "--jobs", jobs, "--out-dir", out,
            "search-windows", "--sessions", &sessions, "--stage", "2",
            "--pixels-per-degree", "4",
        ],
    );
    run_ok(
        dir,
        &[
            "--seed", "11", "--jobs", jobs, "--out-dir", out,
            "eval-iou", "--heatmaps", &format!("{out}/extract"), "--sessions", &sessions,
        ],
    );
    run_ok(
        dir,
        &[
            "--seed", "11", "--jobs", jobs, "--out-dir", out,
            "train-toy", "--sessions", &sessions, "--arms", "all",
            "--seeds", "1,2", "--epochs", "8", "--lr", "0.3",
            "--grid", "16", "--pixels-per-degree", "4",
        ],
    );
    run_ok(
        dir,
        &[
            "--seed", "11", "--jobs", jobs, "--out-dir", out,
            "eval-auc", "--scores", &format!("{out}/scores-ellipse.csv"),
            "--sessions", &sessions,
        ],
    );
    run_ok(
        dir,
        &[
            "--seed", "11", "--jobs", jobs, "--out-dir", out,
            "grad-check", "--n", "6",
        ],
    );
}

/// Criterion: rerunning any command with the same seed yields
/// byte-identical outputs, and the worker count never changes output
/// bytes.
#[test]
fn a9_cli_outputs_are_deterministic() {
    let dir = TempDir::new().unwrap();
    run_pipeline(dir.path(), "run_a", "1");
    run_pipeline(dir.path(), "run_b", "1");
    assert_identical(
        &dir.path().join("run_a"),
        &dir.path().join("run_b"),
        "rerun with same seed",
    );

    run_pipeline(dir.path(), "run_c", "8");
    assert_identical(
        &dir.path().join("run_a"),
        &dir.path().join("run_c"),
        "jobs 1 vs jobs 8",
    );

    let n_files = snapshot(&dir.path().join("run_a")).len();
    println!(
        "ACCEPTANCE 9 CLI determinism: PASS ({n_files} output files byte-identical across reruns and --jobs 1 vs 8)"
    );
}

#[test]
fn extract_on_negated_only_report_writes_nothing() {
    let dir = TempDir::new().unwrap();
    let session = dir.path().join("sessions/session_0000");
    std::fs::create_dir_all(&session).unwrap();
    std::fs::write(
        session.join("meta.json"),
        r#"{"image_id":"session_0000","width":64,"height":64,"recording_start":0.0}"#,
    )
    .unwrap();
    std::fs::write(session.join("fixations.csv"), "x,y,t_start,t_end\n10,10,0.5,1.0\n").unwrap();
    std::fs::write(
        session.join("transcript.json"),
        r#"{"sentences":[[
            {"text":"no","t_start":2.0,"t_end":2.3},
            {"text":"pneumothorax","t_start":2.4,"t_end":3.0}
        ]]}"#,
    )
    .unwrap();

    let output = gazeloc()
        .current_dir(dir.path())
        .args([
            "--out-dir",
            "out",
            "extract",
            "--sessions",
            "sessions",
            "--pixels-per-degree",
            "4",
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    let extract_dir = dir.path().join("out/extract");
    let heatmaps = std::fs::read_dir(&extract_dir)
        .map(|entries| entries.count())
        .unwrap_or(0);
    assert_eq!(heatmaps, 0, "negated-only report must produce no heatmap files");
}

#[test]
fn missing_transcript_exits_2_and_names_the_path() {
    let dir = TempDir::new().unwrap();
    let session = dir.path().join("sessions/session_0000");
    std::fs::create_dir_all(&session).unwrap();
    std::fs::write(
        session.join("meta.json"),
        r#"{"image_id":"session_0000","width":64,"height":64,"recording_start":0.0}"#,
    )
    .unwrap();
    std::fs::write(session.join("fixations.csv"), "x,y,t_start,t_end\n").unwrap();

    let output = gazeloc()
        .current_dir(dir.path())
        .args(["extract", "--sessions", "sessions", "--pixels-per-degree", "4"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("transcript.json"),
        "stderr must name the missing file, got: {stderr}"
    );
}

#[test]
fn grad_check_negative_control_and_empty_run() {
    let dir = TempDir::new().unwrap();
    let output = gazeloc()
        .current_dir(dir.path())
        .args(["--seed", "4", "grad-check", "--n", "5", "--inject-bug"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1), "injected bug must fail the check");

    let output = gazeloc()
        .current_dir(dir.path())
        .args(["grad-check", "--n", "0"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&output.stdout).contains("0 gradient checks"));
}

#[test]
fn unknown_flags_are_rejected() {
    let dir = TempDir::new().unwrap();
    let output = gazeloc()
        .current_dir(dir.path())
        .args(["gen-synth", "--frobnicate"])
        .output()
        .unwrap();
    assert!(!output.status.success());
}

#[test]
fn pipeline_iou_report_is_well_formed() {
    let dir = TempDir::new().unwrap();
    run_ok(
        dir.path(),
        &[
            "--seed", "7", "--out-dir", "out",
            "gen-synth", "--n", "6", "--image-size", "64",
        ],
    );
    run_ok(
        dir.path(),
        &[
            "--out-dir", "out",
            "extract", "--sessions", "out/sessions", "--pixels-per-degree", "4",
        ],
    );
    run_ok(
        dir.path(),
        &[
            "--out-dir", "out",
            "eval-iou", "--heatmaps", "out/extract", "--sessions", "out/sessions",
        ],
    );
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/metrics.json")).unwrap())
            .unwrap();
    let per_label = metrics["per_label"].as_object().unwrap();
    assert!(!per_label.is_empty());
    for (label, entry) in per_label {
        let iou = entry["iou"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&iou), "{label}: IoU {iou} out of range");
        let threshold = entry["best_threshold"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&threshold));
    }
}
