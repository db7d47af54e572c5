mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bevtrack::io::{write_jsonl, ReportRecord, TrackRecord, TruthLogRecord, TruthObjectRecord};
use tempfile::TempDir;

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/static_clutter_report.jsonl");

fn bevtrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bevtrack")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = bevtrack(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate_preset(dir: &Path, name: &str, seed: Option<&str>) -> (PathBuf, PathBuf) {
    let mut args = vec!["simulate", "--preset", name, "--out", s(dir)];
    if let Some(seed) = seed {
        args.extend(["--seed", seed]);
    }
    ok(&args);
    (dir.join("detections.jsonl"), dir.join("truth.jsonl"))
}

#[test]
fn simulate_writes_detections_and_truth() {
    let tmp = TempDir::new().unwrap();
    let (det, truth) = simulate_preset(tmp.path(), "fig1-miss-burst", None);
    let det_lines = fs::read_to_string(&det).unwrap();
    let truth_lines = fs::read_to_string(&truth).unwrap();
    assert_eq!(det_lines.lines().count(), 10);
    let first: TruthLogRecord = serde_json::from_str(truth_lines.lines().next().unwrap()).unwrap();
    assert_eq!(first.objects.len(), 1);
    // Frames 2–4 carry no detection.
    for (i, line) in det_lines.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let n = v["detections"].as_array().unwrap().len();
        assert_eq!(n, if (2..=4).contains(&i) { 0 } else { 1 }, "frame {i}");
    }
}

#[test]
fn simulate_is_deterministic_and_seed_sensitive() {
    let tmp = TempDir::new().unwrap();
    let read = |d: &Path| {
        (
            fs::read(d.join("detections.jsonl")).unwrap(),
            fs::read(d.join("truth.jsonl")).unwrap(),
        )
    };
    simulate_preset(&tmp.path().join("a"), "ablation-suite", Some("5"));
    simulate_preset(&tmp.path().join("b"), "ablation-suite", Some("5"));
    simulate_preset(&tmp.path().join("c"), "ablation-suite", Some("6"));
    assert_eq!(read(&tmp.path().join("a")), read(&tmp.path().join("b")));
    assert_ne!(read(&tmp.path().join("a")).0, read(&tmp.path().join("c")).0);
}

#[test]
fn unknown_preset_lists_available_ones() {
    let tmp = TempDir::new().unwrap();
    let out = bevtrack(&["simulate", "--preset", "no-such-scene", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for name in ["fig1-miss-burst", "fig2-static-clutter", "fig3-fast-lowscore", "ablation-suite"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn malformed_scenario_config_names_the_field() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("scene.toml");
    fs::write(&cfg, "duration_s = 5.0\ntimestep_s = -0.1\n").unwrap();
    let out = bevtrack(&["simulate", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("timestep_s"));

    fs::write(&cfg, "duration_s = \"long\"\n").unwrap();
    let out = bevtrack(&["simulate", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("duration_s"));

    fs::write(&cfg, "[detector]\nsteady_sate = 0.9\n").unwrap();
    let out = bevtrack(&["simulate", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("steady_sate"));
}

#[test]
fn misspelled_tracker_option_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let (det, _) = simulate_preset(tmp.path(), "fig1-miss-burst", None);
    let cfg = tmp.path().join("tracker.toml");
    fs::write(&cfg, "[association]\nmax_hypotheses = 10\n").unwrap();
    let out = bevtrack(&["track", s(&det), "--config", s(&cfg), "--out", s(&tmp.path().join("r.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("max_hypotheses"));
}

#[test]
fn scenario_config_file_round_trips_through_simulate() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("scene.toml");
    fs::write(
        &cfg,
        r#"
name = "two-cars"
duration_s = 2.0
seed = 4

[[objects]]
x = 10.0
y = 0.0
yaw = 0.0
motion = { kind = "constant_velocity", speed_mps = 5.0 }

[[objects]]
x = -10.0
y = 5.0
yaw = 1.0
motion = { kind = "stationary" }
"#,
    )
    .unwrap();
    ok(&["simulate", "--config", s(&cfg), "--out", s(tmp.path())]);
    let truth = fs::read_to_string(tmp.path().join("truth.jsonl")).unwrap();
    assert_eq!(truth.lines().count(), 20);
    let rec: TruthLogRecord = serde_json::from_str(truth.lines().last().unwrap()).unwrap();
    assert_eq!(rec.objects.len(), 2);
}

#[test]
fn empty_log_gives_empty_report() {
    let tmp = TempDir::new().unwrap();
    let det = tmp.path().join("empty.jsonl");
    fs::write(&det, "").unwrap();
    let report = tmp.path().join("report.jsonl");
    ok(&["track", s(&det), "--out", s(&report)]);
    assert_eq!(fs::read_to_string(&report).unwrap(), "");
}

#[test]
fn out_of_order_log_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let (det, _) = simulate_preset(tmp.path(), "fig1-miss-burst", None);
    let text = fs::read_to_string(&det).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.swap(3, 4);
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, lines.join("\n")).unwrap();
    let out = bevtrack(&["track", s(&bad), "--out", s(&tmp.path().join("r.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 5"));

    fs::write(&bad, "{\"t\": 0.1}\n").unwrap();
    let out = bevtrack(&["track", s(&bad), "--out", s(&tmp.path().join("r.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn static_clutter_report_matches_golden() {
    let tmp = TempDir::new().unwrap();
    let (det, _) = simulate_preset(tmp.path(), "fig2-static-clutter", None);
    let report = tmp.path().join("report.jsonl");
    let out = ok(&["track", s(&det), "--out", s(&report)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("ms/frame"));
    let produced = fs::read_to_string(&report).unwrap();
    if std::env::var_os("BEVTRACK_UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(Path::new(GOLDEN).parent().unwrap()).unwrap();
        fs::write(GOLDEN, &produced).unwrap();
    }
    let golden = fs::read_to_string(GOLDEN).expect("golden file missing; rerun with BEVTRACK_UPDATE_GOLDEN=1");
    assert!(produced == golden, "report differs from {GOLDEN}");
}

#[test]
fn genuity_ablation_changes_the_report() {
    let tmp = TempDir::new().unwrap();
    let (det, _) = simulate_preset(tmp.path(), "fig2-static-clutter", None);
    let full = tmp.path().join("full.jsonl");
    let ablated = tmp.path().join("ablated.jsonl");
    ok(&["track", s(&det), "--out", s(&full)]);
    ok(&["track", s(&det), "--out", s(&ablated), "--ablate", "genuity"]);
    assert_ne!(fs::read(&full).unwrap(), fs::read(&ablated).unwrap());
}

fn truth_record(t: f64, objs: &[(u64, bevtrack::geometry::OrientedRect)]) -> TruthLogRecord {
    TruthLogRecord {
        t,
        objects: objs
            .iter()
            .map(|(id, r)| TruthObjectRecord {
                id: *id,
                x: r.cx,
                y: r.cy,
                yaw: r.yaw,
                length: r.length,
                width: r.width,
                speed: 0.0,
            })
            .collect(),
    }
}

fn report_record(t: f64, objs: &[(u64, bevtrack::geometry::OrientedRect)]) -> ReportRecord {
    ReportRecord {
        t,
        tracks: objs
            .iter()
            .map(|(id, r)| TrackRecord {
                id: *id,
                x: r.cx,
                y: r.cy,
                yaw: r.yaw,
                length: r.length,
                width: r.width,
                existence: 1.0,
                genuity: 1.0,
                speed: 0.0,
                yaw_rate: 0.0,
            })
            .collect(),
    }
}

fn write_fixture(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let fx = common::mot_fixture();
    let truth: Vec<_> = fx.iter().map(|(t, tr, _)| truth_record(*t, tr)).collect();
    let perfect: Vec<_> = fx.iter().map(|(t, tr, _)| report_record(*t, tr)).collect();
    let flawed: Vec<_> = fx.iter().map(|(t, _, est)| report_record(*t, est)).collect();
    let paths = (dir.join("truth.jsonl"), dir.join("perfect.jsonl"), dir.join("flawed.jsonl"));
    write_jsonl(fs::File::create(&paths.0).unwrap(), &truth).unwrap();
    write_jsonl(fs::File::create(&paths.1).unwrap(), &perfect).unwrap();
    write_jsonl(fs::File::create(&paths.2).unwrap(), &flawed).unwrap();
    paths
}

fn metrics(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

#[test]
fn eval_scores_perfect_and_flawed_reports() {
    let tmp = TempDir::new().unwrap();
    let (truth, perfect, flawed) = write_fixture(tmp.path());
    let a = tmp.path().join("a");
    ok(&["eval", s(&perfect), s(&truth), "--out", s(&a)]);
    assert_eq!(metrics(&a)["mot"]["mota"], 1.0);

    let b = tmp.path().join("b");
    ok(&["eval", s(&flawed), s(&truth), "--out", s(&b)]);
    let m = metrics(&b);
    assert_eq!(
        (m["mot"]["fn"].as_u64(), m["mot"]["fp"].as_u64(), m["mot"]["idsw"].as_u64()),
        (Some(2), Some(1), Some(1))
    );
    assert_eq!(m["mot"]["gt"], 20);
    assert_eq!(m["mot"]["mota"], 0.8);
}

#[test]
fn eval_writes_strict_recall_column() {
    let tmp = TempDir::new().unwrap();
    let (truth, _, flawed) = write_fixture(tmp.path());
    let out = tmp.path().join("e");
    ok(&["eval", s(&flawed), s(&truth), "--out", s(&out), "--iou", "0.7", "--pr", "--predict"]);
    let pr = fs::read_to_string(out.join("pr.txt")).unwrap();
    assert!(pr.lines().next().unwrap().split_whitespace().any(|c| c == "recall_at_0.7"));
    assert!(out.join("prediction_pr.txt").exists());
    assert_eq!(metrics(&out)["iou"], 0.7);
}

#[test]
fn eval_rejects_misaligned_logs() {
    let tmp = TempDir::new().unwrap();
    let (truth, perfect, _) = write_fixture(tmp.path());
    let text = fs::read_to_string(&perfect).unwrap();
    let shifted = tmp.path().join("shifted.jsonl");
    let mut recs: Vec<ReportRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    for r in &mut recs {
        r.t += 0.05;
    }
    write_jsonl(fs::File::create(&shifted).unwrap(), &recs).unwrap();
    let out = bevtrack(&["eval", s(&shifted), s(&truth), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));

    let short = tmp.path().join("short.jsonl");
    fs::write(&short, text.lines().take(5).collect::<Vec<_>>().join("\n")).unwrap();
    let out = bevtrack(&["eval", s(&short), s(&truth), "--out", s(&tmp.path().join("y"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_chain_is_bit_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        let (det, truth) = simulate_preset(&dir, "fig2-static-clutter", Some("17"));
        let report = dir.join("report.jsonl");
        ok(&["track", s(&det), "--out", s(&report)]);
        ok(&["eval", s(&report), s(&truth), "--out", s(&dir), "--pr", "--predict"]);
        [
            "detections.jsonl",
            "truth.jsonl",
            "report.jsonl",
            "metrics.json",
            "pr.txt",
            "prediction_pr.txt",
        ]
        .map(|f| fs::read(dir.join(f)).unwrap())
    };
    assert_eq!(run("one"), run("two"));
}

#[test]
fn ablate_compares_all_arms() {
    let tmp = TempDir::new().unwrap();
    let (det, truth) = simulate_preset(tmp.path(), "fig2-static-clutter", None);
    let out = ok(&["ablate", s(&det), s(&truth), "--out", s(tmp.path())]);
    let text = String::from_utf8_lossy(&out.stdout);
    for arm in ["full", "no-detectability", "no-genuity", "subselect"] {
        assert!(text.contains(arm), "{text}");
    }
    let arms: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("ablation.json")).unwrap()).unwrap();
    assert_eq!(arms.as_array().unwrap().len(), 4);
}
