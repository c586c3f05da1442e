//! Paired (condition image, joint configuration) data.
//!
//! Directory layout, DIRI profile:
//!
//! ```text
//! root/
//!   manifest.toml
//!   participant_00/
//!     run_0/
//!       frames/000000.png ...
//!       frames.csv        # header: t, frame
//!       joints.csv        # header: t, j00..jNN  (radians)
//! ```
//!
//! The EMIL-style profile replaces `participant_XX` with `task_<name>`.
//! Image and joint streams carry their own timestamps and are paired by
//! nearest neighbor within a tolerance.

pub mod render;
pub mod synthetic;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::JointConfiguration;

pub use synthetic::{generate_synthetic, SyntheticSpec};

/// Default pairing tolerance between image and joint timestamps, seconds.
pub const DEFAULT_SYNC_TOLERANCE: f64 = 0.050;

/// One paired training example.
#[derive(Debug, Clone)]
pub struct PoseSample {
    pub id: String,
    pub condition: RgbImage,
    pub target_joints: JointConfiguration,
    pub image_timestamp: f64,
    pub joint_timestamp: f64,
    pub participant: u32,
    pub task: Option<String>,
    pub run: u32,
}

/// Dataset description stored as `manifest.toml` at the dataset root.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub layout_id: String,
    pub joint_dim: usize,
    pub sample_count: usize,
    pub image_size: u32,
    /// DIRI profile: participant ids; empty when the task profile is used.
    #[serde(default)]
    pub participants: Vec<u32>,
    /// EMIL-style profile: task names; empty for the DIRI profile.
    #[serde(default)]
    pub tasks: Vec<String>,
    pub runs_per_group: u32,
    #[serde(default = "default_tolerance")]
    pub sync_tolerance: f64,
    /// Per-axis end-effector motion ranges in meters, when known.
    #[serde(default)]
    pub motion_ranges: Option<[f64; 3]>,
}

fn default_tolerance() -> f64 {
    DEFAULT_SYNC_TOLERANCE
}

impl DatasetManifest {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join("manifest.toml");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::Manifest {
            root: root.to_path_buf(),
            message: format!("cannot read manifest.toml: {e}"),
        })?;
        let mut manifest: DatasetManifest =
            toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        manifest.root = root.to_path_buf();
        Ok(manifest)
    }

    pub fn save(&self) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::parse("manifest", e.to_string()))?;
        std::fs::write(self.root.join("manifest.toml"), text)
            .map_err(|e| Error::io(self.root.join("manifest.toml"), e))
    }

    /// Group directories in deterministic order: participants or tasks.
    fn groups(&self) -> Vec<(String, u32, Option<String>)> {
        if !self.tasks.is_empty() {
            self.tasks
                .iter()
                .map(|t| (format!("task_{t}"), 0, Some(t.clone())))
                .collect()
        } else {
            self.participants
                .iter()
                .map(|p| (format!("participant_{p:02}"), *p, None))
                .collect()
        }
    }
}

/// Pair images with the nearest-in-time joint record within `tolerance`.
///
/// Inputs must be sorted by timestamp. Returns index pairs
/// (image index, joint index) plus the number of dropped images.
pub fn synchronize_streams(
    image_times: &[f64],
    joint_times: &[f64],
    tolerance: f64,
) -> Result<(Vec<(usize, usize)>, usize)> {
    for w in image_times.windows(2) {
        if w[1] < w[0] {
            return Err(Error::Argument("image timestamps are not sorted".into()));
        }
    }
    for w in joint_times.windows(2) {
        if w[1] < w[0] {
            return Err(Error::Argument("joint timestamps are not sorted".into()));
        }
    }
    let mut pairs = Vec::with_capacity(image_times.len());
    let mut dropped = 0;
    let mut cursor = 0usize;
    for (i, &t) in image_times.iter().enumerate() {
        while cursor + 1 < joint_times.len() && joint_times[cursor + 1] <= t {
            cursor += 1;
        }
        let mut best = None;
        for j in [Some(cursor), (cursor + 1 < joint_times.len()).then(|| cursor + 1)]
            .into_iter()
            .flatten()
        {
            let dt = (joint_times[j] - t).abs();
            if dt <= tolerance && best.is_none_or(|(_, bd)| dt < bd) {
                best = Some((j, dt));
            }
        }
        match best {
            Some((j, _)) => pairs.push((i, j)),
            None => dropped += 1,
        }
    }
    Ok((pairs, dropped))
}

/// Counters from a dataset load.
#[derive(Debug, Default, Clone, Copy)]
pub struct LoadStats {
    pub loaded: usize,
    pub skipped_corrupt: usize,
    pub dropped_unsynced: usize,
}

struct PendingSample {
    image_path: PathBuf,
    id: String,
    image_timestamp: f64,
    joint_timestamp: f64,
    joints: Vec<f64>,
    participant: u32,
    task: Option<String>,
    run: u32,
}

/// Lazy reader over a dataset; yields samples in deterministic
/// (group, run, timestamp) order, loading one image per step.
pub struct DatasetReader {
    layout_id: String,
    pending: std::vec::IntoIter<PendingSample>,
    pub stats: LoadStats,
}

impl Iterator for DatasetReader {
    type Item = Result<PoseSample>;

    fn next(&mut self) -> Option<Self::Item> {
        let p = self.pending.next()?;
        match image::open(&p.image_path) {
            Ok(img) => {
                self.stats.loaded += 1;
                Some(Ok(PoseSample {
                    id: p.id,
                    condition: img.to_rgb8(),
                    target_joints: JointConfiguration::new(p.joints, self.layout_id.clone()),
                    image_timestamp: p.image_timestamp,
                    joint_timestamp: p.joint_timestamp,
                    participant: p.participant,
                    task: p.task,
                    run: p.run,
                }))
            }
            Err(e) => {
                self.stats.skipped_corrupt += 1;
                Some(Err(Error::parse(
                    p.image_path.display().to_string(),
                    format!("corrupt image: {e}"),
                )))
            }
        }
    }
}

fn read_frames_csv(path: &Path) -> Result<Vec<(f64, u64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(Error::from)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let t: f64 = record
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::parse(path.display().to_string(), "bad timestamp"))?;
        let frame: u64 = record
            .get(1)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::parse(path.display().to_string(), "bad frame index"))?;
        rows.push((t, frame));
    }
    Ok(rows)
}

fn read_joints_csv(path: &Path, joint_dim: usize) -> Result<Vec<(f64, Vec<f64>)>> {
    let mut reader = csv::Reader::from_path(path).map_err(Error::from)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != joint_dim + 1 {
            return Err(Error::parse(
                path.display().to_string(),
                format!("expected {} columns, got {}", joint_dim + 1, record.len()),
            ));
        }
        let mut it = record.iter().map(|s| s.trim().parse::<f64>());
        let t = it
            .next()
            .unwrap()
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        let joints = it
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        rows.push((t, joints));
    }
    Ok(rows)
}

/// Open a dataset for lazy iteration. Validates the directory layout up
/// front; per-image decode errors surface lazily as `Err` items.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<DatasetReader> {
    if !manifest.root.exists() {
        return Err(Error::Manifest {
            root: manifest.root.clone(),
            message: "dataset root does not exist".into(),
        });
    }
    let mut missing = Vec::new();
    let mut pending = Vec::new();
    let mut dropped_total = 0usize;
    for (dir_name, participant, task) in manifest.groups() {
        for run in 0..manifest.runs_per_group {
            let run_dir = manifest.root.join(&dir_name).join(format!("run_{run}"));
            let frames_csv = run_dir.join("frames.csv");
            let joints_csv = run_dir.join("joints.csv");
            if !frames_csv.exists() || !joints_csv.exists() {
                missing.push(run_dir.display().to_string());
                continue;
            }
            let frames = read_frames_csv(&frames_csv)?;
            let joints = read_joints_csv(&joints_csv, manifest.joint_dim)?;
            let image_times: Vec<f64> = frames.iter().map(|(t, _)| *t).collect();
            let joint_times: Vec<f64> = joints.iter().map(|(t, _)| *t).collect();
            let (pairs, dropped) =
                synchronize_streams(&image_times, &joint_times, manifest.sync_tolerance)?;
            dropped_total += dropped;
            for (img_idx, joint_idx) in pairs {
                let frame = frames[img_idx].1;
                let group_tag = task
                    .as_deref()
                    .map(|t| format!("task_{t}"))
                    .unwrap_or_else(|| format!("p{participant:02}"));
                pending.push(PendingSample {
                    image_path: run_dir.join("frames").join(format!("{frame:06}.png")),
                    id: format!("{group_tag}_r{run}_{frame:06}"),
                    image_timestamp: image_times[img_idx],
                    joint_timestamp: joint_times[joint_idx],
                    joints: joints[joint_idx].1.clone(),
                    participant,
                    task: task.clone(),
                    run,
                })
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Manifest {
            root: manifest.root.clone(),
            message: format!("missing run data: {}", missing.join(", ")),
        });
    }
    if pending.is_empty() {
        return Err(Error::Manifest {
            root: manifest.root.clone(),
            message: "dataset is empty".into(),
        });
    }
    Ok(DatasetReader {
        layout_id: manifest.layout_id.clone(),
        pending: pending.into_iter(),
        stats: LoadStats {
            dropped_unsynced: dropped_total,
            ..LoadStats::default()
        },
    })
}

/// Load the whole dataset into memory, skipping corrupt images.
pub fn load_all(manifest: &DatasetManifest) -> Result<(Vec<PoseSample>, LoadStats)> {
    let mut reader = load_dataset(manifest)?;
    let mut samples = Vec::new();
    // Failures are counted in the reader's stats.
    samples.extend(reader.by_ref().flatten());
    Ok((samples, reader.stats))
}

/// Iterative alpha compositing, oldest frame first, current frame last:
/// acc <- (1 - opacity) * acc + opacity * frame. Channel values in [0, 1].
pub fn overlay_past_frames_f32(
    frames: &[Vec<f32>],
    opacity: f32,
) -> Result<Vec<f32>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Argument("overlay needs at least one frame".into()))?;
    let len = first.len();
    let mut acc = first.clone();
    for frame in &frames[1..] {
        if frame.len() != len {
            return Err(Error::Dimension {
                expected: len,
                got: frame.len(),
                context: "overlay frame".into(),
            });
        }
        for (a, f) in acc.iter_mut().zip(frame) {
            *a = (1.0 - opacity) * *a + opacity * f;
        }
    }
    for a in acc.iter_mut() {
        *a = a.clamp(0.0, 1.0);
    }
    Ok(acc)
}

/// [`overlay_past_frames_f32`] on 8-bit RGB images, window ordered oldest
/// to current.
pub fn overlay_past_frames(window: &[RgbImage], opacity: f32) -> Result<RgbImage> {
    let first = window
        .first()
        .ok_or_else(|| Error::Argument("overlay needs at least one frame".into()))?;
    let (w, h) = first.dimensions();
    for img in window {
        if img.dimensions() != (w, h) {
            return Err(Error::Dimension {
                expected: (w * h) as usize,
                got: (img.width() * img.height()) as usize,
                context: "overlay frame shape".into(),
            });
        }
    }
    let planes: Vec<Vec<f32>> = window
        .iter()
        .map(|img| img.as_raw().iter().map(|&v| v as f32 / 255.0).collect())
        .collect();
    let blended = overlay_past_frames_f32(&planes, opacity)?;
    let raw: Vec<u8> = blended
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    Ok(RgbImage::from_raw(w, h, raw).expect("dimensions preserved"))
}

/// Train/test partition strategies.
#[derive(Debug, Clone)]
pub enum SplitStrategy {
    Random { train_fraction: f64, seed: u64 },
    ByParticipant { held_out: u32 },
    ByTask { train_task: String, eval_task: String },
}

/// Partition samples into disjoint train and test sets.
pub fn split(
    samples: Vec<PoseSample>,
    strategy: &SplitStrategy,
) -> Result<(Vec<PoseSample>, Vec<PoseSample>)> {
    match strategy {
        SplitStrategy::Random {
            train_fraction,
            seed,
        } => {
            if !(0.0 < *train_fraction && *train_fraction < 1.0) {
                return Err(Error::Argument(format!(
                    "train fraction must lie in (0, 1), got {train_fraction}"
                )));
            }
            let mut indices: Vec<usize> = (0..samples.len()).collect();
            let mut rng = ChaCha20Rng::seed_from_u64(*seed);
            indices.shuffle(&mut rng);
            let n_train = (samples.len() as f64 * train_fraction).round() as usize;
            let train_set: std::collections::HashSet<usize> =
                indices[..n_train].iter().copied().collect();
            let mut train = Vec::with_capacity(n_train);
            let mut test = Vec::with_capacity(samples.len() - n_train);
            for (i, s) in samples.into_iter().enumerate() {
                if train_set.contains(&i) {
                    train.push(s);
                } else {
                    test.push(s);
                }
            }
            Ok((train, test))
        }
        SplitStrategy::ByParticipant { held_out } => {
            if !samples.iter().any(|s| s.participant == *held_out) {
                return Err(Error::Argument(format!(
                    "no samples for held-out participant {held_out}"
                )));
            }
            Ok(samples.into_iter().partition(|s| s.participant != *held_out))
        }
        SplitStrategy::ByTask {
            train_task,
            eval_task,
        } => {
            for task in [train_task, eval_task] {
                if !samples.iter().any(|s| s.task.as_deref() == Some(task)) {
                    return Err(Error::Argument(format!("no samples for task '{task}'")));
                }
            }
            let train = samples
                .iter()
                .filter(|s| s.task.as_deref() == Some(train_task.as_str()))
                .cloned()
                .collect();
            let test = samples
                .into_iter()
                .filter(|s| s.task.as_deref() == Some(eval_task.as_str()))
                .collect();
            Ok((train, test))
        }
    }
}

/// Load substitute condition images (e.g. pre-rendered pose skeletons),
/// keyed by sample id: `<dir>/<id>.png`.
pub fn load_condition_substitute(
    dir: &Path,
    ids: &[String],
) -> Result<HashMap<String, RgbImage>> {
    let mut map = HashMap::with_capacity(ids.len());
    let mut missing = Vec::new();
    for id in ids {
        let path = dir.join(format!("{id}.png"));
        match image::open(&path) {
            Ok(img) => {
                map.insert(id.clone(), img.to_rgb8());
            }
            Err(_) => missing.push(id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Coverage { missing });
    }
    Ok(map)
}

/// Swap every sample's condition for its substitute image.
pub fn apply_condition_substitute(
    samples: &mut [PoseSample],
    substitutes: &HashMap<String, RgbImage>,
) -> Result<()> {
    let missing: Vec<String> = samples
        .iter()
        .filter(|s| !substitutes.contains_key(&s.id))
        .map(|s| s.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Coverage { missing });
    }
    for sample in samples.iter_mut() {
        sample.condition = substitutes[&sample.id].clone();
    }
    Ok(())
}

/// Downscale to `size` x `size`. Uses exact area averaging when the source
/// is an integer multiple of the target, matching the stored-256 to
/// network-64 path.
pub fn resize_area(img: &RgbImage, size: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    if (w, h) == (size, size) {
        return img.clone();
    }
    if w == h && w % size == 0 {
        let k = w / size;
        let norm = 1.0 / (k * k) as f32;
        let mut out = RgbImage::new(size, size);
        for y in 0..size {
            for x in 0..size {
                let mut acc = [0.0f32; 3];
                for dy in 0..k {
                    for dx in 0..k {
                        let p = img.get_pixel(x * k + dx, y * k + dy);
                        for c in 0..3 {
                            acc[c] += p[c] as f32;
                        }
                    }
                }
                out.put_pixel(
                    x,
                    y,
                    image::Rgb([
                        (acc[0] * norm).round() as u8,
                        (acc[1] * norm).round() as u8,
                        (acc[2] * norm).round() as u8,
                    ]),
                );
            }
        }
        out
    } else {
        image::imageops::resize(img, size, size, image::imageops::FilterType::Triangle)
    }
}

#[cfg(test)]
mod tests;
