//! Synthetic desk-scale stand-in for the recorded imitation dataset.
//!
//! A 3-DoF arm moves between randomly chosen waypoints at constant joint
//! velocity, echoing the recording protocol of a robot steered through
//! random positions at random speeds. Every frame is a deterministic
//! rendering of the arm at the recorded configuration from a fixed camera,
//! so the image-joint pairing is exact by construction.

use std::path::Path;

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::render::{render_arm, Camera};
use super::DatasetManifest;
use crate::error::{Error, Result};
use crate::kinematics::RobotModel;

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub count: usize,
    pub image_size: u32,
    pub participants: u32,
    pub runs_per_participant: u32,
    pub fps: f64,
    /// (min, max) frames per waypoint segment.
    pub waypoint_frames: (usize, usize),
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            count: 5000,
            image_size: 64,
            participants: 2,
            runs_per_participant: 3,
            fps: 30.0,
            waypoint_frames: (20, 60),
        }
    }
}

/// Per-participant color tints emulating demonstrator variation.
const TINTS: [[f32; 3]; 4] = [
    [1.00, 1.00, 1.00],
    [0.85, 1.00, 0.90],
    [1.00, 0.88, 0.82],
    [0.88, 0.90, 1.00],
];

pub fn participant_tint(participant: u32) -> [f32; 3] {
    TINTS[participant as usize % TINTS.len()]
}

fn run_rng(seed: u64, participant: u32, run: u32) -> ChaCha20Rng {
    let stream = (participant as u64) << 20 | run as u64;
    ChaCha20Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Generate a dataset in the standard directory layout under `root` and
/// return its manifest (also written to `root/manifest.toml`).
pub fn generate_synthetic(
    root: &Path,
    spec: &SyntheticSpec,
    seed: u64,
) -> Result<DatasetManifest> {
    if spec.count == 0 {
        return Err(Error::Argument("synthetic dataset needs count > 0".into()));
    }
    if spec.waypoint_frames.0 == 0 || spec.waypoint_frames.0 > spec.waypoint_frames.1 {
        return Err(Error::Argument("invalid waypoint frame range".into()));
    }
    let robot = RobotModel::synthetic_3dof();
    let chain = &robot.chains[0];
    let limits = chain.limits();
    let camera = Camera::synthetic_default(spec.image_size);

    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    let n_runs = (spec.participants * spec.runs_per_participant) as usize;
    let base = spec.count / n_runs;
    let remainder = spec.count % n_runs;

    let mut eef_min = [f64::INFINITY; 3];
    let mut eef_max = [f64::NEG_INFINITY; 3];
    let mut run_index = 0usize;
    for participant in 0..spec.participants {
        for run in 0..spec.runs_per_participant {
            let frames = base + usize::from(run_index < remainder);
            run_index += 1;
            let run_dir = root
                .join(format!("participant_{participant:02}"))
                .join(format!("run_{run}"));
            let frames_dir = run_dir.join("frames");
            std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;

            let mut rng = run_rng(seed, participant, run);
            let mut q: Vec<f64> = limits.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect();
            let mut velocity = vec![0.0; q.len()];
            let mut segment_left = 0usize;

            let mut frames_csv = String::from("t, frame\n");
            let mut joints_csv = String::from("t, j00, j01, j02\n");
            for frame in 0..frames {
                if segment_left == 0 {
                    let target: Vec<f64> =
                        limits.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect();
                    segment_left =
                        rng.gen_range(spec.waypoint_frames.0..=spec.waypoint_frames.1);
                    for ((v, t), cur) in velocity.iter_mut().zip(&target).zip(&q) {
                        *v = (t - cur) / segment_left as f64;
                    }
                } else {
                    for (cur, v) in q.iter_mut().zip(&velocity) {
                        *cur += v;
                    }
                    segment_left -= 1;
                }
                // Velocity targets stay inside limits, but clamp against
                // rounding drift so every recorded value is in range.
                for (cur, &(lo, hi)) in q.iter_mut().zip(&limits) {
                    *cur = cur.clamp(lo, hi);
                }

                let t = frame as f64 / spec.fps;
                let points = chain.link_positions(&q)?;
                track_ranges(&points[points.len() - 1], &mut eef_min, &mut eef_max);
                let img = render_arm(&points, &camera, participant_tint(participant));
                let path = frames_dir.join(format!("{frame:06}.png"));
                img.save(&path)?;

                frames_csv.push_str(&format!("{t}, {frame}\n"));
                joints_csv.push_str(&format!("{t}, {}, {}, {}\n", q[0], q[1], q[2]));
            }
            std::fs::write(run_dir.join("frames.csv"), frames_csv)
                .map_err(|e| Error::io(run_dir.join("frames.csv"), e))?;
            std::fs::write(run_dir.join("joints.csv"), joints_csv)
                .map_err(|e| Error::io(run_dir.join("joints.csv"), e))?;
        }
    }

    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        layout_id: robot.layout_id.clone(),
        joint_dim: robot.dof(),
        sample_count: spec.count,
        image_size: spec.image_size,
        participants: (0..spec.participants).collect(),
        tasks: Vec::new(),
        runs_per_group: spec.runs_per_participant,
        sync_tolerance: super::DEFAULT_SYNC_TOLERANCE,
        motion_ranges: Some([
            eef_max[0] - eef_min[0],
            eef_max[1] - eef_min[1],
            eef_max[2] - eef_min[2],
        ]),
    };
    manifest.save()?;
    Ok(manifest)
}

fn track_ranges(eef: &Point3<f64>, min: &mut [f64; 3], max: &mut [f64; 3]) {
    for i in 0..3 {
        min[i] = min[i].min(eef[i]);
        max[i] = max[i].max(eef[i]);
    }
}

/// Re-render the frame for a recorded configuration; used by round-trip
/// checks and by `infer` visualization.
pub fn render_configuration(
    robot: &RobotModel,
    q: &[f64],
    image_size: u32,
    participant: u32,
) -> Result<image::RgbImage> {
    let chain = &robot.chains[0];
    let points = chain.link_positions(q)?;
    let camera = Camera::synthetic_default(image_size);
    Ok(render_arm(&points, &camera, participant_tint(participant)))
}
