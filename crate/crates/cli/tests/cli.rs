use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vidalign::grounding::{build_voxel_grid, GroundingModel, TextEncoder};
use vidalign::io::{write_checkpoint, Checkpoint};
use vidalign::synth::{generate, SynthConfig, SyntheticScene};
use vidalign::Vec3;

fn vidalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vidalign"))
        .args(args)
        .output()
        .unwrap()
}

fn small_scene(dir: &Path) -> (SyntheticScene, PathBuf) {
    let cfg = SynthConfig {
        seed: 21,
        videos: 3,
        points_per_strip: 60,
        object_cluster_points: 30,
        ..SynthConfig::default()
    };
    let scene = generate(&cfg).unwrap();
    let manifest = scene.write(dir).unwrap();
    (scene, manifest)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_succeeds_and_bad_flags_are_usage_errors() {
    assert_eq!(vidalign(&["--help"]).status.code(), Some(0));
    assert_eq!(
        vidalign(&["match", "--no-such-flag"]).status.code(),
        Some(1)
    );
    assert_eq!(vidalign(&[]).status.code(), Some(1));
}

#[test]
fn commands_need_manifest_and_output() {
    let tmp = tempfile::tempdir().unwrap();
    let o = vidalign(&["--output", p(tmp.path()), "match"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--manifest"));
    assert_eq!(vidalign(&["synth"]).status.code(), Some(1));
}

#[test]
fn synth_rejects_fraction_above_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("synth.toml");
    std::fs::write(&cfg, "outlier_fraction = 1.5\n").unwrap();
    let o = vidalign(&[
        "--config",
        p(&cfg),
        "--output",
        p(&tmp.path().join("out")),
        "synth",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("outlier_fraction"), "{}", stderr(&o));
}

#[test]
fn match_retention_tracks_planted_inlier_fraction() {
    let tmp = tempfile::tempdir().unwrap();
    let (scene, manifest) = small_scene(&tmp.path().join("data"));
    let out = tmp.path().join("out");
    // Two frame pairs per video pair are planted; retrieving exactly those keeps unrelated frames out of the counts.
    let cfg = tmp.path().join("pipeline.toml");
    std::fs::write(&cfg, "retrieval_pairs = 2\n").unwrap();
    let o = vidalign(&[
        "--manifest",
        p(&manifest),
        "--config",
        p(&cfg),
        "--output",
        p(&out),
        "match",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for (a, b) in [("v00", "v01"), ("v01", "v02")] {
        let planted: Vec<_> = scene
            .truth
            .frame_pairs
            .iter()
            .filter(|f| f.video_a == a && f.video_b == b)
            .collect();
        let common: usize = planted.iter().map(|f| f.common_points).sum();
        let corrupted: usize = planted.iter().map(|f| f.corrupted).sum();
        let expected = (common - corrupted) as f64 / common as f64;
        let line = text
            .lines()
            .find(|l| l.starts_with(&format!("{a}__{b}:")))
            .unwrap();
        let nums: Vec<f64> = line
            .split_whitespace()
            .filter_map(|w| w.trim_end_matches(',').parse().ok())
            .collect();
        let retention = nums[1] / nums[0];
        assert!(
            (retention - expected).abs() <= 0.02,
            "{line}: expected retention {expected:.3}"
        );
    }
    assert!(out.join("matches/v00__v01.raw.m2d").exists());
    assert!(out.join("matches/v00__v01.flt.m2d").exists());
}

#[test]
fn missing_flow_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, manifest) = small_scene(&tmp.path().join("data"));
    let text = std::fs::read_to_string(&manifest).unwrap();
    let stripped: String = text
        .lines()
        .filter(|l| !l.trim_start().starts_with("flow"))
        .map(|l| format!("{l}\n"))
        .collect();
    assert_ne!(stripped, text);
    std::fs::write(&manifest, stripped).unwrap();
    let o = vidalign(&[
        "--manifest",
        p(&manifest),
        "--output",
        p(&tmp.path().join("out")),
        "match",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("flow"), "{}", stderr(&o));
}

#[test]
fn align_reports_edges_and_rejects_unknown_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, manifest) = small_scene(&tmp.path().join("data"));
    let out = tmp.path().join("out");
    let o = vidalign(&[
        "--manifest",
        p(&manifest),
        "--output",
        p(&out),
        "--reference",
        "nope",
        "align",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope"));

    let o = vidalign(&[
        "--manifest",
        p(&manifest),
        "--output",
        p(&out),
        "--reference",
        "v01",
        "align",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("car0: reference v01, 3 registered, 0 unregistered"),
        "{}",
        stdout(&o)
    );
    let report: toml::Value =
        toml::from_str(&std::fs::read_to_string(out.join("registration.toml")).unwrap()).unwrap();
    let failed = report["failed_edges"].as_array().unwrap();
    assert!(failed
        .iter()
        .any(|f| f["from"].as_str() == Some("v00") && f["to"].as_str() == Some("v02")));
    assert!(out.join("graph.agr").exists());
}

#[test]
fn transfer_then_eval_scores_every_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, manifest) = small_scene(&tmp.path().join("data"));
    let out = tmp.path().join("out");
    let o = vidalign(&["--manifest", p(&manifest), "--output", p(&out), "transfer"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let preds = out.join("transfer");
    let n = std::fs::read_dir(&preds)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "kp3")
        })
        .count();
    assert_eq!(n, 6);
    let o = vidalign(&[
        "--manifest",
        p(&manifest),
        "--output",
        p(&out),
        "eval-pck",
        "--predictions",
        p(&preds),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("mean PCK over 6 pairs"),
        "{}",
        stdout(&o)
    );
    assert!(out.join("pck.pck").exists());
}

#[test]
fn direct_transfer_records_missing_edges() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, manifest) = small_scene(&tmp.path().join("data"));
    let out = tmp.path().join("out");
    let o = vidalign(&[
        "--manifest",
        p(&manifest),
        "--output",
        p(&out),
        "transfer",
        "--mode",
        "direct",
        "--source",
        "v00",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("1 transfers, 1 failed"),
        "{}",
        stdout(&o)
    );
    assert!(std::fs::read_to_string(out.join("transfer/failures.toml"))
        .unwrap()
        .contains("v02"));
}

#[test]
fn untrained_model_query_warns_about_uniform_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let points: Vec<Vec3> = (0..50)
        .map(|i| Vec3::new(i as f64 * 0.02, (i % 7) as f64 * 0.1, 0.0))
        .collect();
    let grid = build_voxel_grid(&points, 5, &points, 10).unwrap();
    let n_v = BTreeMap::from([("car0".to_string(), grid.n_v())]);
    let model = GroundingModel::untrained(TextEncoder::new(1 << 8, 8, 0, 0.1).unwrap(), &n_v);
    let path = tmp.path().join("model.gmod");
    write_checkpoint(
        &path,
        &Checkpoint::new(model, BTreeMap::from([("car0".to_string(), grid)])).unwrap(),
    )
    .unwrap();

    let o = vidalign(&[
        "ground",
        "query",
        "--model",
        p(&path),
        "--group",
        "car0",
        "--text",
        "battery",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("untrained"));
    let json: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(json["uniform"], serde_json::Value::Bool(true));

    let o = vidalign(&[
        "ground",
        "query",
        "--model",
        p(&path),
        "--group",
        "car9",
        "--text",
        "battery",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn log_stream_is_json_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, manifest) = small_scene(&tmp.path().join("data"));
    let log = tmp.path().join("logs/run.jsonl");
    let o = vidalign(&[
        "--manifest",
        p(&manifest),
        "--output",
        p(&tmp.path().join("out")),
        "--log",
        p(&log),
        "align",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&log).unwrap();
    assert!(text.lines().count() >= 2);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["level"].is_string() && v["target"].is_string() && v["message"].is_string());
    }
    assert!(text.contains("no edge v00 - v02"));
}
