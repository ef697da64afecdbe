use std::collections::BTreeMap;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vidalign::alignment::{AlignmentGraph, EdgeEstimate};
use vidalign::geometry::{CameraModel, Keypoints3D, Observation, Reconstruction, Vec2, Vec3};
use vidalign::grounding::{
    Detection2D, GroundingModel, GroundingQuery, Head, SaliencyMap, TextEncoder, VoxelGrid,
};
use vidalign::io::*;
use vidalign::matching::{
    FlowField, GlobalDescriptor, LocalFeatureSet, Match, MatchSet, MatchStage,
};
use vidalign::sampling::{random_point, random_rotation, random_transform};
use vidalign::transfer::{KeypointAnnotation2D, PckCurve};

/// Awkward magnitudes that a lossy float format would mangle.
fn wild(rng: &mut ChaCha8Rng) -> f64 {
    let x: f64 = rng.random_range(-1.0..1.0);
    x * 10f64.powi(rng.random_range(-12..12)) + std::f64::consts::PI * 1e-17
}

fn camera(rng: &mut ChaCha8Rng) -> CameraModel {
    CameraModel::pinhole(
        rng.random_range(300.0..900.0),
        Vec2::new(320.1, 239.7),
        random_rotation(rng),
        random_point(rng, 3.0),
        640,
        480,
    )
    .unwrap()
}

fn reconstruction(rng: &mut ChaCha8Rng) -> Reconstruction {
    let n = rng.random_range(1..30);
    let points: Vec<(u64, Vec3)> = (0..n)
        .map(|i| (i as u64 * 7 + 3, Vec3::new(wild(rng), wild(rng), wild(rng))))
        .collect();
    let frames: Vec<(String, CameraModel)> = (0..rng.random_range(1..5))
        .map(|i| (format!("frame {i}"), camera(rng)))
        .collect();
    let observations = (0..rng.random_range(0..40))
        .map(|k| Observation {
            frame_id: frames[rng.random_range(0..frames.len())].0.clone(),
            keypoint_index: k,
            pixel: Vec2::new(wild(rng), wild(rng)),
            point_id: points[rng.random_range(0..points.len())].0,
        })
        .collect();
    Reconstruction::new("rec-1", points, frames, observations).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reconstruction_round_trip(seed in any::<u64>()) {
        let rec = reconstruction(&mut ChaCha8Rng::seed_from_u64(seed));
        let text = render_reconstruction(&rec).unwrap();
        let back = parse_reconstruction("x.rec", &text).unwrap();
        prop_assert_eq!(&back, &rec);
        prop_assert_eq!(render_reconstruction(&back).unwrap(), text);
    }

    #[test]
    fn features_and_descriptors_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sets: Vec<LocalFeatureSet> = (0..rng.random_range(0..4)).map(|i| {
            let (d, n) = (rng.random_range(1..9), rng.random_range(0..20));
            let desc = DMatrix::from_fn(d, n, |_, _| wild(&mut rng) + 2.0);
            LocalFeatureSet::new(format!("f{i}"), desc, (0..n).map(|_| Vec2::new(wild(&mut rng), wild(&mut rng))).collect()).unwrap()
        }).collect();
        let (side, blob) = render_features("a.bin", &sets).unwrap();
        prop_assert_eq!(&parse_features("a.lfd", &side, &blob).unwrap(), &sets);
        let globals: Vec<GlobalDescriptor> = (0..rng.random_range(0..4))
            .map(|i| GlobalDescriptor::new(format!("g{i}"), (0..5).map(|_| wild(&mut rng) + 1.0).collect()).unwrap())
            .collect();
        let text = render_global_descriptors(&globals).unwrap();
        prop_assert_eq!(&parse_global_descriptors("g.gdv", &text).unwrap(), &globals);
    }

    #[test]
    fn flow_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flows: Vec<FlowField> = (0..rng.random_range(0..3)).map(|i| {
            let (gw, gh) = (rng.random_range(1..9), rng.random_range(1..9));
            FlowField::from_fn(format!("s{i}"), format!("t{i}"), 640, 480, gw, gh, |p| (p.x > 100.0).then(|| p * 1.5)).unwrap()
        }).collect();
        let (side, blob) = render_flows("f.bin", &flows).unwrap();
        prop_assert_eq!(&parse_flows("f.flo2", &side, &blob).unwrap(), &flows);
    }

    #[test]
    fn matches_and_graph_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sets: Vec<MatchSet> = (0..rng.random_range(0..4)).map(|i| MatchSet {
            frame_a: format!("a{i}"),
            frame_b: format!("b{i}"),
            stage: if i % 2 == 0 { MatchStage::RawMutual } else { MatchStage::FlowFiltered },
            matches: (0..rng.random_range(0..10)).map(|k| Match {
                index_a: k, index_b: 9 - k, pixel_a: Vec2::new(wild(&mut rng), 1.0), pixel_b: Vec2::new(2.0, wild(&mut rng)),
            }).collect(),
        }).collect();
        let text = render_matches(&sets).unwrap();
        prop_assert_eq!(&parse_matches("m.m2d", &text).unwrap(), &sets);

        let nodes: Vec<String> = (0..5).map(|i| format!("v{i}")).collect();
        let edges: Vec<EdgeEstimate> = (0..4).map(|i| EdgeEstimate {
            from_id: nodes[i].clone(), to_id: nodes[i + 1].clone(), transform: random_transform(&mut rng),
            inlier_count: 20 + i, total_count: 40, inlier_rms: wild(&mut rng).abs(),
        }).collect();
        let graph = AlignmentGraph::new(nodes, edges).unwrap();
        let text = render_graph(&graph).unwrap();
        let back = parse_graph("g.agr", &text).unwrap();
        prop_assert_eq!(&back, &graph);
        prop_assert_eq!(render_graph(&back).unwrap(), text);
    }

    #[test]
    fn annotation_formats_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anns: Vec<KeypointAnnotation2D> = (0..rng.random_range(0..6)).map(|i| KeypointAnnotation2D {
            video_id: "v".into(), frame_id: format!("f{i}"), keypoint_name: "air filter".into(), pixel: Vec2::new(wild(&mut rng), wild(&mut rng)),
        }).collect();
        prop_assert_eq!(&parse_annotations("a.kp2", &render_annotations(&anns).unwrap()).unwrap(), &anns);
        let kps = Keypoints3D::new(vec!["b".into(), "a".into()], vec![random_point(&mut rng, 1e6), random_point(&mut rng, 1e-6)]).unwrap();
        prop_assert_eq!(parse_keypoints3d("k.kp3", &render_keypoints3d("v2", &kps).unwrap()).unwrap(), ("v2".to_string(), kps));
        let nar = vec![NarrationRecord { video_id: "v".into(), frames: vec!["f1".into(), "f2".into()], text: "now check the oil level".into() }];
        prop_assert_eq!(&parse_narration("n.nar", &render_narration(&nar).unwrap()).unwrap(), &nar);
        let dets: Vec<Detection2D> = (0..3).map(|i| Detection2D { frame_id: format!("f{i}"), pixel: Vec2::new(wild(&mut rng), 3.0), confidence: rng.random_range(0.0..=1.0) }).collect();
        prop_assert_eq!(&parse_detections("d.det", &render_detections(&dets).unwrap()).unwrap(), &dets);
        let maps = vec![SaliencyMap::new("f0", 8, 14, (0..112).map(|_| wild(&mut rng)).collect()).unwrap()];
        prop_assert_eq!(&parse_saliency("s.sal", &render_saliency(&maps).unwrap()).unwrap(), &maps);
        let queries = vec![
            GroundingQuery { model_id: "car".into(), text: "where is the dipstick".into(), gt_point: random_point(&mut rng, 2.0), class: Some("dipstick".into()) },
            GroundingQuery { model_id: "car".into(), text: "x".into(), gt_point: Vec3::zeros(), class: None },
        ];
        prop_assert_eq!(&parse_queries("q.gq", &render_queries(&queries).unwrap()).unwrap(), &queries);
    }

    #[test]
    fn pck_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..=1.0)).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let report = PckReport {
            curves: BTreeMap::from([("graph".to_string(), PckCurve::new(vec![0.5, 1.0, 2.0, 4.0, 8.0], v).unwrap())]),
            classes: vec![ClassRow { class: "oil cap".into(), threshold_cm: 30.0, queries: 12, chance: 0.25, method: wild(&mut rng).abs().min(1.0) }],
        };
        prop_assert_eq!(&parse_pck("p.pck", &render_pck(&report).unwrap()).unwrap(), &report);
    }

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = rng.random_range(1..6);
        let mut enc = TextEncoder::new(1 << 12, dim, seed, 0.3).unwrap();
        enc.materialize("open the hood now");
        let mut heads = BTreeMap::new();
        let mut grids = BTreeMap::new();
        for id in ["car a", "car b"] {
            let n_v = rng.random_range(1..5);
            let w = (0..n_v * dim).map(|_| wild(&mut rng)).collect();
            let b = (0..n_v).map(|_| wild(&mut rng)).collect();
            heads.insert(id.to_string(), Head::from_parts(n_v, dim, w, b).unwrap());
            grids.insert(id.to_string(), VoxelGrid::new(Vec3::new(-1.0, -2.0, -3.0), Vec3::new(1.0, 0.1, 1e-3), 3, (0..n_v).map(|i| i * 5).collect()).unwrap());
        }
        let ck = Checkpoint::new(GroundingModel::new(enc, heads).unwrap(), grids).unwrap();
        let bytes = encode_checkpoint(&ck);
        let back = decode_checkpoint("m.gmod", &bytes).unwrap();
        prop_assert_eq!(&back, &ck);
        prop_assert_eq!(encode_checkpoint(&back), bytes);
    }
}

#[test]
fn header_and_version_errors() {
    let err = parse_annotations("a.kp2", "# vidalign-kp2 7\n").unwrap_err();
    assert_eq!(
        err,
        IoError::UnsupportedVersion {
            file: "a.kp2".into(),
            format: "vidalign-kp2".into(),
            found: "7".into(),
            supported: vec![1]
        }
    );
    assert!(matches!(
        parse_annotations("a.kp2", "# vidalign-rec 1\n"),
        Err(IoError::Parse { line: 1, .. })
    ));
    let err = parse_annotations("a.kp2", "# vidalign-kp2 1\nA\tv\tf\tk\t1.0\n").unwrap_err();
    assert!(matches!(err, IoError::Parse { line: 2, .. }), "{err}");
    let err = parse_annotations("a.kp2", "# vidalign-kp2 1\n\nA\tv\tf\tk\t1.0\tnan\n").unwrap_err();
    assert!(matches!(err, IoError::Parse { line: 3, .. }), "{err}");
    let mut bytes = b"VIDAGMOD".to_vec();
    bytes.extend(9u32.to_le_bytes());
    assert!(matches!(
        decode_checkpoint("m.gmod", &bytes),
        Err(IoError::UnsupportedVersion { .. })
    ));
    assert!(matches!(
        decode_checkpoint("m.gmod", b"garbage!"),
        Err(IoError::Binary { .. })
    ));
}

#[test]
fn unknown_point_reference_names_the_record() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rec = reconstruction(&mut rng);
    let mut text = render_reconstruction(&rec).unwrap();
    let fid = &rec.frames()[0].0;
    text.push_str(&format!("O\t{fid}\t0\t1.0\t2.0\t999999\n"));
    let line = text.lines().count();
    let err = parse_reconstruction("m.rec", &text).unwrap_err();
    assert_eq!(
        err,
        IoError::InvariantViolation {
            file: "m.rec".into(),
            line: Some(line),
            message: "observation references unknown point_id 999999".into()
        }
    );
}

#[test]
fn unserializable_ids_are_rejected() {
    let anns = vec![KeypointAnnotation2D {
        video_id: "v".into(),
        frame_id: "a\tb".into(),
        keypoint_name: "k".into(),
        pixel: Vec2::zeros(),
    }];
    assert!(matches!(
        render_annotations(&anns),
        Err(IoError::Unserializable { .. })
    ));
}
