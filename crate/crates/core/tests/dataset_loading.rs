use std::path::Path;

use vidalign::geometry::{CameraModel, Mat3, Observation, Reconstruction, Vec2, Vec3};
use vidalign::io::{
    load_dataset, write_file, write_reconstruction, IoError, LoadOptions, Manifest, VideoEntry,
};

fn small_rec(id: &str, points: usize) -> Reconstruction {
    let cam = CameraModel::pinhole(
        500.0,
        Vec2::new(320.0, 240.0),
        Mat3::identity(),
        Vec3::zeros(),
        640,
        480,
    )
    .unwrap();
    let pts = (0..points)
        .map(|i| (i as u64, Vec3::new(i as f64 * 0.01, 0.0, 2.0)))
        .collect();
    let obs = vec![Observation {
        frame_id: "f0".into(),
        keypoint_index: 0,
        pixel: Vec2::new(320.0, 240.0),
        point_id: 0,
    }];
    Reconstruction::new(id, pts, vec![("f0".into(), cam)], obs).unwrap()
}

fn write_manifest(dir: &Path, entries: Vec<VideoEntry>) -> std::path::PathBuf {
    let path = dir.join("manifest.toml");
    write_file(&path, Manifest::new(entries).render()).unwrap();
    path
}

fn entry(id: &str) -> VideoEntry {
    VideoEntry {
        reconstruction: Some(format!("{id}.rec").into()),
        ..VideoEntry::new(id)
    }
}

#[test]
fn minimal_manifest_loads() {
    let dir = tempfile::tempdir().unwrap();
    write_reconstruction(&dir.path().join("v0.rec"), &small_rec("v0", 60)).unwrap();
    let m = write_manifest(dir.path(), vec![entry("v0")]);
    let ds = load_dataset(&m, &LoadOptions::default()).unwrap();
    assert_eq!(ds.videos.len(), 1);
    assert_eq!(
        ds.videos["v0"].reconstruction.as_ref().unwrap(),
        &small_rec("v0", 60)
    );
    assert_eq!(ds.groups()["default"], vec!["v0".to_string()]);
}

#[test]
fn small_models_are_discarded() {
    let dir = tempfile::tempdir().unwrap();
    write_reconstruction(&dir.path().join("v0.rec"), &small_rec("v0", 60)).unwrap();
    write_reconstruction(&dir.path().join("v1.rec"), &small_rec("v1", 10)).unwrap();
    let m = write_manifest(dir.path(), vec![entry("v0"), entry("v1")]);
    let ds = load_dataset(&m, &LoadOptions::default()).unwrap();
    assert_eq!(ds.discarded, vec!["v1".to_string()]);
    assert!(!ds.videos.contains_key("v1"));
    let ds = load_dataset(
        &m,
        &LoadOptions {
            min_points: 5,
            ..LoadOptions::default()
        },
    )
    .unwrap();
    assert!(ds.discarded.is_empty());
}

#[test]
fn unsupported_manifest_version_lists_supported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.toml");
    write_file(&path, "format_version = 3\n").unwrap();
    let errs = load_dataset(&path, &LoadOptions::default()).unwrap_err();
    assert!(
        matches!(&errs.0[..], [IoError::UnsupportedVersion { supported, .. }] if supported == &vec![1])
    );
    assert!(errs.to_string().contains("supported versions: [1]"));
}

#[test]
fn problems_are_itemized() {
    let dir = tempfile::tempdir().unwrap();
    write_reconstruction(&dir.path().join("v0.rec"), &small_rec("other", 60)).unwrap();
    let mut bad = entry("v1");
    bad.annotations = Some("missing.kp2".into());
    let m = write_manifest(dir.path(), vec![entry("v0"), bad]);
    let errs = load_dataset(&m, &LoadOptions::default()).unwrap_err().0;
    assert_eq!(errs.len(), 3, "{errs:?}");
    assert!(errs
        .iter()
        .any(|e| matches!(e, IoError::MissingFile(p) if p.ends_with("v1.rec"))));
    assert!(errs
        .iter()
        .any(|e| matches!(e, IoError::MissingFile(p) if p.ends_with("missing.kp2"))));
    assert!(errs.iter().any(|e| matches!(e, IoError::InvariantViolation { message, .. } if message.contains("differs from video id"))));
}

#[test]
fn manifest_rejects_duplicates_and_unknown_keys() {
    assert!(Manifest::parse(
        "m",
        "format_version = 1\n[[videos]]\nid = \"a\"\n[[videos]]\nid = \"a\"\n"
    )
    .is_err());
    assert!(matches!(
        Manifest::parse("m", "format_version = 1\nbogus = 2\n"),
        Err(IoError::Parse { .. })
    ));
    let m = Manifest::new(vec![entry("a")]);
    assert_eq!(Manifest::parse("m", &m.render()).unwrap(), m);
}
