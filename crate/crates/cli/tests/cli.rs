//! End-to-end tests of the `marginlab` binary: exit codes, artefact layout,
//! byte-level determinism, and the structure of the emitted SVG charts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use marginlab_cli::runner::aggregate_metrics;
use marginlab_core::data::Bucket;
use marginlab_core::metrics::{histogram, BucketRow, Report};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_marginlab"))
}

fn run_config_json(output_dir: &Path) -> String {
    format!(
        r#"{{
        "schema": 1,
        "output_dir": "{}",
        "seeds": [0, 1],
        "dataset": {{"kind": "two_moons", "n_train": 120, "n_eval": 80,
                     "tail_prob": 0.2, "noise": 0.1}},
        "architecture": {{"hidden": [8], "embedding_dim": 2}},
        "loss": {{"delta": "logit_adjusted", "lambda_pull": 0.01, "lambda_push": 0.01}},
        "training": {{"epochs": 20, "batch_size": 32, "base_lr": 0.1}}
    }}"#,
        output_dir.display()
    )
}

fn write_config(dir: &Path, contents: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, contents).unwrap();
    path
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// All files under `dir` as relative-path -> bytes, for whole-tree diffing.
fn snapshot_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        for entry in fs::read_dir(&current).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    files
}

/// Minimal structural XML check tuned to what the chart writer emits: the
/// declaration, balanced tags, paired attribute quotes, the five named
/// entities, and no raw `<`/`>`/`&` in text content.
fn assert_well_formed_xml(svg: &str) {
    let mut stack: Vec<&str> = Vec::new();
    let bytes = svg.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'<' => {
                let close = svg[i..].find('>').expect("unterminated tag") + i;
                let inner = &svg[i + 1..close];
                if let Some(decl) = inner.strip_prefix('?') {
                    assert!(decl.ends_with('?'), "malformed declaration <{inner}>");
                } else if let Some(name) = inner.strip_prefix('/') {
                    let open = stack
                        .pop()
                        .unwrap_or_else(|| panic!("</{name}> closes nothing"));
                    assert_eq!(open, name, "mismatched closing tag");
                } else {
                    let body = inner.trim_end_matches('/');
                    let name = body.split_whitespace().next().expect("empty tag");
                    assert_eq!(
                        body.matches('"').count() % 2,
                        0,
                        "unbalanced attribute quotes in <{body}>"
                    );
                    if !inner.ends_with('/') {
                        stack.push(name);
                    }
                }
                i = close + 1;
            }
            b'&' => {
                let semi = svg[i..].find(';').expect("unterminated entity") + i;
                let entity = &svg[i..=semi];
                assert!(
                    matches!(entity, "&amp;" | "&lt;" | "&gt;" | "&quot;" | "&apos;"),
                    "unknown entity {entity}"
                );
                i = semi + 1;
            }
            b'>' => panic!("raw '>' in text content at byte {i}"),
            _ => i += 1,
        }
    }
    assert!(stack.is_empty(), "unclosed tags: {stack:?}");
}

/// Compares `actual` against the checked-in copy, or records it when
/// MARGINLAB_RECORD_GOLDEN is set.
fn check_golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("MARGINLAB_RECORD_GOLDEN").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|_| {
        panic!(
            "golden file {} missing; rerun with MARGINLAB_RECORD_GOLDEN=1",
            path.display()
        )
    });
    assert_eq!(expected, actual, "{name} drifted from its golden copy");
}

#[test]
fn unknown_subcommand_exits_2() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_field_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &run_config_json(dir.path()).replace("\"noise\"", "\"nosie\""),
    );
    let out = bin().arg("run").arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("nosie"), "stderr should name the field: {err}");
    assert!(err.contains("dataset"), "stderr should give the path: {err}");
}

#[test]
fn unknown_delta_variant_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &run_config_json(dir.path()).replace("logit_adjusted", "frobnicated"),
    );
    let out = bin().arg("run").arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("delta"), "stderr: {}", stderr_of(&out));
}

#[test]
fn missing_config_file_exits_2() {
    let out = bin().arg("run").arg("/nonexistent/config.json").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_thread_env_exits_2() {
    let out = bin()
        .arg("verify")
        .arg("--trials")
        .arg("5")
        .env("MARGINLAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("MARGINLAB_THREADS"));
}

#[test]
fn verify_zero_trials_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("verify")
        .arg("--trials")
        .arg("0")
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_with_injected_fault_exits_1_and_keeps_artefacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("verify")
        .args(["--trials", "30", "--seed", "3"])
        .args(["--auc-specs", "2", "--auc-samples", "600000"])
        .args(["--gen-eval-size", "2000"])
        .arg("--inject-fault")
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = stdout_of(&out);
    assert!(text.contains("pull_bound") && text.contains("FAIL"), "stdout: {text}");
    assert!(stderr_of(&out).contains("checks failed"));
    assert!(dir.path().join("checks.csv").exists());
    assert!(dir.path().join("summary.json").exists());
}

#[test]
fn divergent_run_exits_3_and_names_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &run_config_json(dir.path())
            .replace("\"seeds\": [0, 1]", "\"seeds\": [5]")
            .replace("\"base_lr\": 0.1", "\"base_lr\": 1e30"),
    );
    let out = bin().arg("run").arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_of(&out);
    assert!(err.contains("seed 5"), "stderr should name the seed: {err}");
    assert!(err.contains("diverged"), "stderr: {err}");
}

#[test]
fn run_artefacts_are_byte_identical_across_invocations_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = write_config(dir.path(), &run_config_json(&out_dir));

    let first = bin().arg("run").arg(&config).output().unwrap();
    assert!(first.status.success(), "stderr: {}", stderr_of(&first));
    let baseline = snapshot_tree(&out_dir);
    assert!(baseline.contains_key("metrics.csv"));
    assert!(baseline.contains_key("seed0/report.json"));
    assert!(baseline.contains_key("seed1/margins.svg"));

    fs::remove_dir_all(&out_dir).unwrap();
    let second = bin().arg("run").arg(&config).output().unwrap();
    assert!(second.status.success());
    assert_eq!(baseline, snapshot_tree(&out_dir), "rerun changed artefacts");
    assert_eq!(first.stdout, second.stdout, "rerun changed stdout");

    fs::remove_dir_all(&out_dir).unwrap();
    let single = bin()
        .arg("run")
        .arg(&config)
        .env("MARGINLAB_THREADS", "1")
        .output()
        .unwrap();
    assert!(single.status.success());
    assert_eq!(
        baseline,
        snapshot_tree(&out_dir),
        "single-threaded run changed artefacts"
    );
}

#[test]
fn verify_artefacts_are_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "--trials",
        "30",
        "--seed",
        "3",
        "--auc-specs",
        "2",
        "--auc-samples",
        "600000",
        "--gen-eval-size",
        "2000",
    ];
    let run = |out_dir: &Path, threads: Option<&str>| {
        let mut cmd = bin();
        cmd.arg("verify").args(args).arg("--out").arg(out_dir);
        if let Some(t) = threads {
            cmd.env("MARGINLAB_THREADS", t);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "stderr: {}", stderr_of(&out));
        (snapshot_tree(out_dir), out.stdout)
    };
    let (tree_a, stdout_a) = run(&dir.path().join("a"), None);
    let (tree_b, stdout_b) = run(&dir.path().join("b"), None);
    let (tree_c, _) = run(&dir.path().join("c"), Some("1"));
    assert_eq!(tree_a, tree_b, "verify reruns differ");
    assert_eq!(stdout_a, stdout_b, "verify stdout differs");
    assert_eq!(tree_a, tree_c, "thread count changed verify artefacts");
}

#[test]
fn plot_rerenders_byte_identical_charts() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = write_config(dir.path(), &run_config_json(&out_dir));
    let out = bin().arg("run").arg(&config).output().unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let seed_dir = out_dir.join("seed0");
    let before = snapshot_tree(&seed_dir);
    for name in ["margins.svg", "margin_cdf.svg", "intra.svg", "buckets.svg", "embeddings.svg"] {
        fs::remove_file(seed_dir.join(name)).unwrap();
    }
    let replot = bin().arg("plot").arg(&seed_dir).output().unwrap();
    assert!(replot.status.success(), "stderr: {}", stderr_of(&replot));
    assert_eq!(before, snapshot_tree(&seed_dir), "plot is not idempotent");
}

#[test]
fn emitted_svgs_are_well_formed_xml() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = write_config(dir.path(), &run_config_json(&out_dir));
    let out = bin().arg("run").arg(&config).output().unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let mut checked = 0;
    for (rel, bytes) in snapshot_tree(&out_dir) {
        if rel.ends_with(".svg") {
            assert_well_formed_xml(std::str::from_utf8(&bytes).unwrap());
            checked += 1;
        }
    }
    assert_eq!(checked, 10, "expected five charts per seed");
}

#[test]
fn metrics_csv_matches_recomputation_from_seed_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = write_config(dir.path(), &run_config_json(&out_dir));
    let out = bin().arg("run").arg(&config).output().unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let reports: Vec<Report> = [0u64, 1]
        .iter()
        .map(|seed| {
            let text =
                fs::read_to_string(out_dir.join(format!("seed{seed}/report.json"))).unwrap();
            serde_json::from_str(&text).unwrap()
        })
        .collect();
    let expected = aggregate_metrics(&reports);

    let csv = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("metric,mean,std"));
    let rows: Vec<(String, f64, f64)> = lines
        .map(|line| {
            let mut cells = line.split(',');
            (
                cells.next().unwrap().to_string(),
                cells.next().unwrap().parse().unwrap(),
                cells.next().unwrap().parse().unwrap(),
            )
        })
        .collect();
    // report.json floats round-trip exactly, so the stored aggregate must
    // reproduce bit for bit from the per-seed reports.
    assert_eq!(rows, expected);
}

#[test]
fn sweep_writes_grid_artefacts() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let config = write_config(dir.path(), &run_config_json(&out_dir));
    let out = bin()
        .arg("sweep")
        .arg(&config)
        .args(["--lambda", "0,0.01"])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert!(out_dir.join("sweep.csv").exists());
    assert!(out_dir.join("sensitivity.svg").exists());
    assert!(out_dir.join("lambda_0/metrics.csv").exists());
    assert!(out_dir.join("lambda_0.01/metrics.csv").exists());
    assert_well_formed_xml(&fs::read_to_string(out_dir.join("sensitivity.svg")).unwrap());
}

fn one_class_report() -> Report {
    let margins = vec![vec![-0.5, 0.2, 0.3, 0.9]];
    let dmax = vec![vec![0.1, 0.2, 0.3, 0.4]];
    Report {
        num_classes: 1,
        eval_counts: vec![4],
        accuracy: 0.75,
        error: 0.25,
        balanced_accuracy: 0.75,
        balanced_error: 0.25,
        per_class_accuracy: vec![0.75],
        bucket_rows: vec![BucketRow { bucket: Bucket::Tail, classes: vec![1], accuracy: 0.75 }],
        ovr_auc: 1.0,
        class_trace_variance: vec![0.125],
        mean_trace_variance: 0.125,
        margin_variance: vec![0.3091666666666667],
        margin_histograms: vec![histogram(&margins[0])],
        dmax_histograms: vec![histogram(&dmax[0])],
        margins,
        dmax_normalised: dmax,
    }
}

#[test]
fn one_class_report_renders_a_single_panel_chart() {
    let report = one_class_report();
    let svg = marginlab_cli::plots::margin_histograms_svg(&report);
    assert_well_formed_xml(&svg);
    assert!(svg.contains("class 0"));
    assert!(!svg.contains("class 1"));
    for chart in [
        marginlab_cli::plots::intra_class_svg(&report),
        marginlab_cli::plots::margin_cdf_svg(&report),
        marginlab_cli::plots::buckets_svg(&report),
    ] {
        assert_well_formed_xml(&chart);
    }
}

#[test]
fn chart_output_matches_golden_copies() {
    check_golden(
        "sensitivity.svg",
        &marginlab_cli::plots::sensitivity_svg(
            &[0.0, 0.01, 0.1],
            &[0.91, 0.94, 0.9],
            &[2.5, 0.8, 0.3],
        ),
    );
    check_golden(
        "one_class_margins.svg",
        &marginlab_cli::plots::margin_histograms_svg(&one_class_report()),
    );
}
