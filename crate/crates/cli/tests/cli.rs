use std::path::Path;
use std::process::{Command, Output};

use asyncscope::report::parse_json;

fn asyncscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asyncscope"))
        .args(args)
        .env_remove("ASYNCSCOPE_CLOCK")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn list_shows_every_scenario() {
    let out = asyncscope(&["list"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 12);
    assert!(text.contains("sequential_execute"));
    assert!(text.contains("control"));
}

#[test]
fn demo_passes_for_defect_and_control() {
    for name in ["no_cancel", "cancellable_download"] {
        let out = asyncscope(&["demo", name]);
        assert_eq!(code(&out), 0, "{name}: {}", stdout(&out));
    }
}

#[test]
fn demo_reports_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("loose.cfg");
    std::fs::write(&cfg, "cv_threshold = 100\n").unwrap();
    let out = asyncscope(&["demo", "sequential_execute", "--config", path(&cfg)]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("queuing high-variance: MISSING"));
}

#[test]
fn usage_errors() {
    assert_eq!(code(&asyncscope(&["demo", "no_such_scenario"])), 3);
    assert_eq!(code(&asyncscope(&["frobnicate"])), 3);
    assert_eq!(code(&asyncscope(&["analyze"])), 3);
    assert_eq!(code(&asyncscope(&["analyze", "x.pdt", "--bins", "0"])), 3);
    assert_eq!(code(&asyncscope(&["--help"])), 0);
    assert_eq!(code(&asyncscope(&["--version"])), 0);

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "min_samples = 1\n").unwrap();
    assert_eq!(
        code(&asyncscope(&["demo", "no_cancel", "--config", path(&cfg)])),
        3
    );

    let out = Command::new(env!("CARGO_BIN_EXE_asyncscope"))
        .args(["demo", "no_cancel"])
        .env("ASYNCSCOPE_CLOCK", "sundial")
        .output()
        .unwrap();
    assert_eq!(code(&out), 3);
}

#[test]
fn recorded_trace_analyzes_to_the_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("seq.pdt");
    let demo = asyncscope(&[
        "demo",
        "sequential_execute",
        "--out",
        path(&trace),
        "--format",
        "json",
    ]);
    assert_eq!(code(&demo), 0);
    let analyzed = asyncscope(&["analyze", path(&trace), "--format", "json"]);
    assert_eq!(code(&analyzed), 0);
    assert_eq!(stdout(&demo), stdout(&analyzed));
    let report = parse_json(&stdout(&analyzed)).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].n, 24);
}

#[test]
fn multiple_traces_and_histograms() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.pdt");
    let b = dir.path().join("b.pdt");
    assert_eq!(
        code(&asyncscope(&["demo", "queue_overload", "--out", path(&a)])),
        0
    );
    assert_eq!(
        code(&asyncscope(&["demo", "spread_queue", "--out", path(&b)])),
        0
    );
    let hist = dir.path().join("hist");
    let report_path = dir.path().join("report.txt");
    let out = asyncscope(&[
        "analyze",
        path(&a),
        path(&b),
        "--histograms",
        path(&hist),
        "--bins",
        "4",
        "--out",
        path(&report_path),
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).is_empty());
    let text = std::fs::read_to_string(&report_path).unwrap();
    assert!(text.contains("[0] queue_overload"));
    assert!(text.contains("[1] spread_queue"));
    let text_pos = |r: &str| text.find(r).unwrap();
    assert!(text_pos("[0-0] LOOPER") < text_pos("[1-0] LOOPER"));

    let csv = std::fs::read_to_string(hist.join("0-0_queuing.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("bin_lower_ns,bin_upper_ns,count"));
    let total: u64 = lines
        .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 20);
    assert!(hist.join("1-0_latency.csv").exists());
}

#[test]
fn parse_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.pdt");
    std::fs::write(&bad, "PD1|SESSION|s|c|0\nPD1|EV|1|0|BOOM|_|_|1|_|1|_|_\n").unwrap();
    let out = asyncscope(&["analyze", path(&bad)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let missing = dir.path().join("missing.pdt");
    assert_eq!(code(&asyncscope(&["analyze", path(&missing)])), 2);
}
