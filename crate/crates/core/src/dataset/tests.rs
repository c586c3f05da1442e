use image::{Rgb, RgbImage};
use tempfile::TempDir;

use super::render::Camera;
use super::*;
use crate::kinematics::RobotModel;

fn solid(value: u8, size: u32) -> RgbImage {
    RgbImage::from_pixel(size, size, Rgb([value, value, value]))
}

#[test]
fn sync_identical_timestamps_pairs_everything() {
    let times = [0.0, 0.1, 0.2, 0.3];
    let (pairs, dropped) = synchronize_streams(&times, &times, 0.05).unwrap();
    assert_eq!(pairs, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    assert_eq!(dropped, 0);
}

#[test]
fn sync_picks_nearest_record_within_tolerance() {
    // Image at 1.00 s, joints at 0.98 s and 1.06 s, tolerance 50 ms.
    let (pairs, dropped) = synchronize_streams(&[1.00], &[0.98, 1.06], 0.05).unwrap();
    assert_eq!(pairs, vec![(0, 0)]);
    assert_eq!(dropped, 0);
}

#[test]
fn sync_drops_images_outside_tolerance() {
    let (pairs, dropped) = synchronize_streams(&[1.00], &[1.10], 0.05).unwrap();
    assert!(pairs.is_empty());
    assert_eq!(dropped, 1);
}

#[test]
fn sync_never_pairs_farther_than_tolerance() {
    let images: Vec<f64> = (0..50).map(|i| i as f64 * 0.033).collect();
    let joints: Vec<f64> = (0..40).map(|i| 0.011 + i as f64 * 0.041).collect();
    let tol = 0.02;
    let (pairs, _) = synchronize_streams(&images, &joints, tol).unwrap();
    for (i, j) in pairs {
        assert!((images[i] - joints[j]).abs() <= tol);
    }
}

#[test]
fn sync_rejects_unsorted_input() {
    assert!(synchronize_streams(&[1.0, 0.5], &[0.0], 0.05).is_err());
    assert!(synchronize_streams(&[0.0], &[1.0, 0.5], 0.05).is_err());
}

#[test]
fn sync_empty_streams_yield_empty_output() {
    let (pairs, dropped) = synchronize_streams(&[], &[], 0.05).unwrap();
    assert!(pairs.is_empty());
    assert_eq!(dropped, 0);
}

#[test]
fn overlay_of_identical_frames_is_identity() {
    let frames: Vec<RgbImage> = (0..11).map(|_| solid(93, 8)).collect();
    let out = overlay_past_frames(&frames, 0.5).unwrap();
    assert_eq!(out.as_raw(), frames[0].as_raw());
}

#[test]
fn overlay_white_over_black_gives_mid_gray() {
    let planes = vec![vec![0.0f32; 12], vec![1.0f32; 12]];
    let out = overlay_past_frames_f32(&planes, 0.5).unwrap();
    assert!(out.iter().all(|v| (v - 0.5).abs() < 1e-7));
}

#[test]
fn overlay_matches_hand_computed_iterated_blend() {
    // Constants 0.2, 0.6, 1.0 at opacity 0.5:
    // acc = 0.2 -> 0.5*0.2+0.5*0.6 = 0.4 -> 0.5*0.4+0.5*1.0 = 0.7
    let planes = vec![vec![0.2f32; 4], vec![0.6f32; 4], vec![1.0f32; 4]];
    let out = overlay_past_frames_f32(&planes, 0.5).unwrap();
    assert!(out.iter().all(|v| (v - 0.7).abs() < 1e-6));
}

#[test]
fn overlay_rejects_shape_mismatch() {
    let frames = vec![solid(0, 8), solid(0, 9)];
    assert!(overlay_past_frames(&frames, 0.5).is_err());
}

fn toy_samples(n: usize) -> Vec<PoseSample> {
    (0..n)
        .map(|i| PoseSample {
            id: format!("p{:02}_r0_{i:06}", i % 4),
            condition: solid((i % 255) as u8, 4),
            target_joints: crate::kinematics::JointConfiguration::new(
                vec![0.0, 0.0, 0.0],
                "synthetic-3dof",
            ),
            image_timestamp: i as f64,
            joint_timestamp: i as f64,
            participant: (i % 4) as u32,
            task: Some(["lift", "push", "pull", "scoot"][i % 4].to_string()),
            run: 0,
        })
        .collect()
}

#[test]
fn random_split_partitions_disjointly() {
    let samples = toy_samples(1000);
    let (train, test) = split(
        samples,
        &SplitStrategy::Random {
            train_fraction: 0.9,
            seed: 3,
        },
    )
    .unwrap();
    assert_eq!(train.len(), 900);
    assert_eq!(test.len(), 100);
    let train_ids: std::collections::HashSet<&str> =
        train.iter().map(|s| s.id.as_str()).collect();
    assert!(test.iter().all(|s| !train_ids.contains(s.id.as_str())));
}

#[test]
fn random_split_is_seed_deterministic() {
    let strategy = SplitStrategy::Random {
        train_fraction: 0.8,
        seed: 17,
    };
    let (a, _) = split(toy_samples(200), &strategy).unwrap();
    let (b, _) = split(toy_samples(200), &strategy).unwrap();
    let ids_a: Vec<&str> = a.iter().map(|s| s.id.as_str()).collect();
    let ids_b: Vec<&str> = b.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids_a, ids_b);
}

#[test]
fn by_participant_split_isolates_the_held_out_demonstrator() {
    let (train, test) = split(
        toy_samples(100),
        &SplitStrategy::ByParticipant { held_out: 2 },
    )
    .unwrap();
    assert!(test.iter().all(|s| s.participant == 2));
    assert!(train.iter().all(|s| s.participant != 2));
    assert_eq!(train.len() + test.len(), 100);
}

#[test]
fn by_task_split_selects_tasks() {
    let (train, test) = split(
        toy_samples(100),
        &SplitStrategy::ByTask {
            train_task: "lift".into(),
            eval_task: "scoot".into(),
        },
    )
    .unwrap();
    assert!(train.iter().all(|s| s.task.as_deref() == Some("lift")));
    assert!(test.iter().all(|s| s.task.as_deref() == Some("scoot")));
}

#[test]
fn split_rejects_unknown_participant_or_task() {
    assert!(split(
        toy_samples(10),
        &SplitStrategy::ByParticipant { held_out: 99 }
    )
    .is_err());
    assert!(split(
        toy_samples(10),
        &SplitStrategy::ByTask {
            train_task: "lift".into(),
            eval_task: "juggle".into(),
        }
    )
    .is_err());
}

#[test]
fn synthetic_generation_is_deterministic_and_loadable() {
    let spec = SyntheticSpec {
        count: 24,
        image_size: 32,
        participants: 2,
        runs_per_participant: 2,
        ..SyntheticSpec::default()
    };
    let dir_a = TempDir::new().unwrap();
    let dir_b = TempDir::new().unwrap();
    let manifest_a = generate_synthetic(dir_a.path(), &spec, 7).unwrap();
    let manifest_b = generate_synthetic(dir_b.path(), &spec, 7).unwrap();

    let (samples_a, stats) = load_all(&manifest_a).unwrap();
    let (samples_b, _) = load_all(&manifest_b).unwrap();
    assert_eq!(samples_a.len(), 24);
    assert_eq!(stats.skipped_corrupt, 0);
    assert_eq!(stats.dropped_unsynced, 0);
    for (a, b) in samples_a.iter().zip(&samples_b) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.condition.as_raw(), b.condition.as_raw());
        assert_eq!(a.target_joints, b.target_joints);
    }
}

#[test]
fn synthetic_round_trip_re_renders_bitwise() {
    let spec = SyntheticSpec {
        count: 10,
        image_size: 32,
        participants: 1,
        runs_per_participant: 1,
        ..SyntheticSpec::default()
    };
    let dir = TempDir::new().unwrap();
    let manifest = generate_synthetic(dir.path(), &spec, 99).unwrap();
    let (samples, _) = load_all(&manifest).unwrap();
    let robot = RobotModel::synthetic_3dof();
    for sample in &samples {
        let rerendered = synthetic::render_configuration(
            &robot,
            &sample.target_joints.values,
            spec.image_size,
            sample.participant,
        )
        .unwrap();
        assert_eq!(sample.condition.as_raw(), rerendered.as_raw(), "{}", sample.id);
    }
}

#[test]
fn synthetic_joints_stay_within_limits() {
    let spec = SyntheticSpec {
        count: 60,
        image_size: 16,
        participants: 1,
        runs_per_participant: 1,
        ..SyntheticSpec::default()
    };
    let dir = TempDir::new().unwrap();
    let manifest = generate_synthetic(dir.path(), &spec, 3).unwrap();
    let (samples, _) = load_all(&manifest).unwrap();
    let limits = RobotModel::synthetic_3dof().limits();
    for s in &samples {
        for (v, (lo, hi)) in s.target_joints.values.iter().zip(&limits) {
            assert!(*v >= *lo && *v <= *hi);
        }
    }
}

#[test]
fn rendered_zero_configuration_matches_projected_landmarks() {
    // Oracle: project the FK link positions through the camera and check the
    // rendered image is bright near each landmark.
    let robot = RobotModel::synthetic_3dof();
    let size = 64;
    let img = synthetic::render_configuration(&robot, &[0.0, 0.0, 0.0], size, 0).unwrap();
    let camera = Camera::synthetic_default(size);
    let points = robot.chains[0].link_positions(&[0.0, 0.0, 0.0]).unwrap();
    for p in &points {
        let (u, v, _) = camera.project(p).unwrap();
        let mut best = 0u32;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let x = (u.round() as i64 + dx).clamp(0, size as i64 - 1) as u32;
                let y = (v.round() as i64 + dy).clamp(0, size as i64 - 1) as u32;
                let px = img.get_pixel(x, y);
                best = best.max(px[0] as u32 + px[1] as u32 + px[2] as u32);
            }
        }
        // Background is ~0.08 * 255 * 3 = 61; any drawn landmark is far brighter.
        assert!(best > 150, "landmark at ({u:.1}, {v:.1}) not drawn (sum {best})");
    }
}

#[test]
fn loader_rejects_empty_directory() {
    let dir = TempDir::new().unwrap();
    let manifest = DatasetManifest {
        root: dir.path().to_path_buf(),
        layout_id: "synthetic-3dof".into(),
        joint_dim: 3,
        sample_count: 0,
        image_size: 32,
        participants: vec![0],
        tasks: vec![],
        runs_per_group: 1,
        sync_tolerance: DEFAULT_SYNC_TOLERANCE,
        motion_ranges: None,
    };
    assert!(matches!(
        load_dataset(&manifest),
        Err(Error::Manifest { .. })
    ));
}

#[test]
fn manifest_round_trips_through_toml() {
    let dir = TempDir::new().unwrap();
    let spec = SyntheticSpec {
        count: 8,
        image_size: 16,
        participants: 1,
        runs_per_participant: 1,
        ..SyntheticSpec::default()
    };
    let manifest = generate_synthetic(dir.path(), &spec, 1).unwrap();
    let loaded = DatasetManifest::load(dir.path()).unwrap();
    assert_eq!(loaded.layout_id, manifest.layout_id);
    assert_eq!(loaded.sample_count, 8);
    assert_eq!(loaded.motion_ranges, manifest.motion_ranges);
}

#[test]
fn condition_substitute_requires_full_coverage() {
    let dir = TempDir::new().unwrap();
    solid(10, 8).save(dir.path().join("a.png")).unwrap();
    let ids = vec!["a".to_string(), "b".to_string()];
    match load_condition_substitute(dir.path(), &ids) {
        Err(Error::Coverage { missing }) => assert_eq!(missing, vec!["b".to_string()]),
        other => panic!("expected coverage error, got {other:?}"),
    }

    let ok = load_condition_substitute(dir.path(), &ids[..1]).unwrap();
    assert!(ok.contains_key("a"));
}

#[test]
fn condition_substitute_swaps_payloads_only() {
    let dir = TempDir::new().unwrap();
    let mut samples = toy_samples(3);
    for s in &samples {
        solid(200, 4).save(dir.path().join(format!("{}.png", s.id))).unwrap();
    }
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let subs = load_condition_substitute(dir.path(), &ids).unwrap();
    let joints_before: Vec<_> = samples.iter().map(|s| s.target_joints.clone()).collect();
    apply_condition_substitute(&mut samples, &subs).unwrap();
    for (s, j) in samples.iter().zip(joints_before) {
        assert_eq!(s.condition.get_pixel(0, 0)[0], 200);
        assert_eq!(s.target_joints, j);
    }
}

#[test]
fn resize_area_averages_blocks() {
    let mut img = RgbImage::new(4, 4);
    for y in 0..4 {
        for x in 0..4 {
            let v = if x < 2 { 0 } else { 200 };
            img.put_pixel(x, y, Rgb([v, v, v]));
        }
    }
    let small = resize_area(&img, 2);
    assert_eq!(small.get_pixel(0, 0)[0], 0);
    assert_eq!(small.get_pixel(1, 0)[0], 200);
}
