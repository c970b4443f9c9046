mod common;

use handfit::depth_synth::*;
use handfit::forest::*;
use handfit::hand_model::*;
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn frame(pose: &PoseParams) -> (DepthImage, JointPositions) {
    let geom = HandGeometry::default();
    let cam = CameraIntrinsics::default();
    (render_depth(&geom, pose, &cam).unwrap(), forward_kinematics(&geom, pose).unwrap())
}

fn rest_pose() -> PoseParams {
    let mut p = PoseParams::neutral(Vector3::new(0.0, 40.0, 500.0), &JointLimits::default());
    p.finger_angles[1][0] = 0.3;
    p.finger_angles[4][2] = 0.8;
    p
}

fn small_config() -> ForestConfig {
    ForestConfig {
        num_trees: 2,
        min_samples: 5,
        ..ForestConfig::default()
    }
}

fn single_image_forest() -> (Forest, DepthImage, JointPositions) {
    let (img, gt) = frame(&rest_pose());
    let cfg = SampleConfig {
        stride: 2,
        max_per_image: 0,
    };
    let set = TrainingSet::build(&[(img.clone(), gt)], &cfg, 3);
    let forest = train_forest(&set, &small_config(), 4).unwrap();
    (forest, img, gt)
}

#[test]
fn forest_memorizes_its_training_image() {
    let (forest, img, gt) = single_image_forest();
    let props = infer_proposals(&forest, &img, &InferenceConfig::default()).unwrap();
    for j in 0..NUM_JOINTS {
        let best = props
            .joint(j)
            .iter()
            .map(|p| (p.position - gt.0[j]).norm())
            .fold(f64::INFINITY, f64::min);
        assert!(best < 20.0, "joint {j}: closest proposal {best} mm away");
    }
}

#[test]
fn proposal_counts_and_confidences() {
    let (forest, img, _) = single_image_forest();
    for k in [1, 3] {
        let cfg = InferenceConfig {
            k,
            ..InferenceConfig::default()
        };
        let props = infer_proposals(&forest, &img, &cfg).unwrap();
        assert!(props.len() <= k * NUM_JOINTS);
        for j in props.present_joints() {
            let p = props.joint(j);
            assert!(p.len() <= k);
            let total: f64 = p.iter().map(|p| p.confidence).sum();
            assert!((total - 1.0).abs() < 1e-9);
            if k == 1 {
                assert_eq!(p[0].confidence, 1.0);
            }
        }
    }
}

#[test]
fn every_patch_reaches_one_leaf() {
    let (forest, img, _) = single_image_forest();
    let bg = forest.config.background_depth;
    for tree in &forest.trees {
        for (x, y) in foreground_mask(&img).into_iter().step_by(7) {
            let d = img.get(x, y) as f64;
            let (a, _) = tree.leaf_index(&img, x, y, d, bg);
            let (b, _) = tree.leaf_index(&img, x, y, d, bg);
            assert_eq!(a, b);
            assert!(matches!(tree.nodes[a], Node::Leaf(_)));
        }
    }
}

#[test]
fn save_load_gives_bit_identical_inference() {
    let (forest, img, _) = single_image_forest();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.hfor");
    save_forest(&forest, &path).unwrap();
    let loaded = load_forest(&path).unwrap();
    assert_eq!(loaded, forest);
    let cfg = InferenceConfig::default();
    let a = infer_proposals(&forest, &img, &cfg).unwrap();
    let b = infer_proposals(&loaded, &img, &cfg).unwrap();
    assert_eq!(a, b);
    let mut again = Vec::new();
    write_forest(&loaded, &mut again).unwrap();
    assert_eq!(again, std::fs::read(&path).unwrap());
}

#[test]
fn damaged_files_are_rejected() {
    let (forest, _, _) = single_image_forest();
    let mut bytes = Vec::new();
    write_forest(&forest, &mut bytes).unwrap();

    for cut in [3, 10, 60, bytes.len() / 2, bytes.len() - 1] {
        match read_forest(&bytes[..cut]) {
            Err(ForestError::Corrupt { offset, .. }) => assert!(offset <= cut),
            Err(ForestError::Magic(_)) => assert!(cut < 4),
            other => panic!("truncated at {cut}: {other:?}"),
        }
    }

    let mut wrong = bytes.clone();
    wrong[..4].copy_from_slice(b"NOPE");
    assert!(matches!(read_forest(wrong.as_slice()), Err(ForestError::Magic(_))));

    let mut version = bytes.clone();
    version[4..6].copy_from_slice(&7u16.to_le_bytes());
    assert!(matches!(
        read_forest(version.as_slice()),
        Err(ForestError::Version { found: 7, .. })
    ));

    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(read_forest(trailing.as_slice()), Err(ForestError::Corrupt { .. })));
}

#[test]
fn identical_appearance_gives_single_leaf() {
    let cam = CameraIntrinsics::default();
    let mut img = DepthImage::empty(cam);
    for y in 0..cam.height {
        for x in 0..cam.width {
            img.set(x, y, 500);
        }
    }
    let (_, gt) = frame(&rest_pose());
    let set = TrainingSet::build(
        &[(img, gt)],
        &SampleConfig {
            stride: 8,
            max_per_image: 0,
        },
        0,
    );
    // with every probe inside the flat image the features are all zero
    let cfg = ForestConfig {
        num_trees: 1,
        probe_range: 0.0,
        min_samples: 2,
        ..ForestConfig::default()
    };
    let forest = train_forest(&set, &cfg, 0).unwrap();
    assert_eq!(forest.trees[0].nodes.len(), 1);

    let too_few = ForestConfig {
        num_trees: 1,
        min_samples: set.samples.len() + 1,
        ..ForestConfig::default()
    };
    let forest = train_forest(&set, &too_few, 0).unwrap();
    assert_eq!(forest.trees[0].leaf_count(), 1);
}

#[test]
fn leaf_models() {
    let (img, gt) = frame(&rest_pose());
    let set = TrainingSet::build(
        &[(img, gt)],
        &SampleConfig {
            stride: 4,
            max_per_image: 0,
        },
        0,
    );
    let cfg = ForestConfig::default();

    let one = build_leaf(&set, &[0], &cfg);
    for j in 0..NUM_JOINTS {
        assert_eq!(one.joints[j].len(), 1);
        let expect = set.samples[0].offset(&gt, j);
        assert!((one.joints[j][0].offset() - expect).norm() < 1e-3);
        assert_eq!(one.joints[j][0].weight, 1.0);
    }

    let twice = build_leaf(&set, &[5, 5], &cfg);
    for j in 0..NUM_JOINTS {
        assert_eq!(twice.joints[j].len(), 1);
        assert_eq!(twice.joints[j][0].weight, 2.0);
    }

    // two far-apart groups of samples give two modes at the group means
    let fg: Vec<u32> = (0..set.samples.len() as u32).collect();
    let c = |i: u32| set.samples[i as usize].center();
    let a = fg[fg.len() / 3];
    let far = *fg.iter().max_by(|&&x, &&y| (c(x) - c(a)).norm().total_cmp(&(c(y) - c(a)).norm())).unwrap();
    assert!((c(far) - c(a)).norm() > 100.0);
    let near = |s: u32| -> Vec<u32> {
        let mut v: Vec<u32> = fg.iter().copied().filter(|&i| (c(i) - c(s)).norm() < 10.0).collect();
        v.truncate(4);
        v
    };
    let (ga, gb) = (near(a), near(far));
    assert!(ga.len() > 1 && gb.len() > 1);
    let idx: Vec<u32> = ga.iter().chain(&gb).copied().collect();
    let leaf = build_leaf(&set, &idx, &cfg);
    let mean = |g: &[u32], j: usize| -> Vector3<f64> {
        g.iter().map(|&i| set.samples[i as usize].offset(&gt, j)).sum::<Vector3<f64>>() / g.len() as f64
    };
    for j in 0..NUM_JOINTS {
        let modes = &leaf.joints[j];
        assert_eq!(modes.len(), 2, "joint {j}");
        for g in [&ga, &gb] {
            let m = mean(g, j);
            assert!(modes.iter().any(|md| (md.offset() - m).norm() < 1.0), "joint {j}");
        }
    }
}

#[test]
fn mean_shift_matches_kde_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = MeanShiftParams::new(15.0, 50);
    for _ in 0..5 {
        let (pts, w, centres) = common::two_blobs(&mut rng);
        let modes = mean_shift(&pts, &w, &params);
        assert!(modes.len() >= 2);
        for c in centres {
            let oracle = common::kde_grid_maximum(&pts, &w, params.bandwidth, &c, 15.0);
            let hit = modes
                .iter()
                .map(|m| (m.position - oracle).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(hit < params.bandwidth / 2.0, "mode {hit} mm from KDE maximum");
        }
        for m in &modes[..2] {
            let next = mean_shift_step(&m.position, &pts, &w, params.bandwidth).unwrap();
            assert!((next - m.position).norm() < 1e-3 * params.bandwidth);
        }
        let total: f64 = w.iter().sum();
        let supports: f64 = modes.iter().map(|m| m.support).sum();
        assert!((total - supports).abs() < 1e-9);
        assert!(modes[0].support >= modes[1].support);
    }
}
