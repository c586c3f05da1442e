//! Held-out evaluation: generate a joint configuration per condition image,
//! compare against the recorded target in joint space and in Cartesian
//! space, and export per-axis trajectory plots.

use std::path::Path;

use candle_core::{Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::TrainedModel;
use crate::dataset::render::Canvas;
use crate::dataset::PoseSample;
use crate::error::{Error, Result};
use crate::kinematics::JointConfiguration;
use crate::network::{decode_output, predict_x0_batch, InferenceMode};
use crate::training::image_to_tensor;

pub const AXIS_NAMES: [&str; 3] = ["x", "y", "z"];

/// Metrics over one evaluation split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub n_samples: usize,
    /// Mean squared error over joint values, radians squared.
    pub joint_mse: f64,
    /// Mean squared error over end-effector positions, meters squared,
    /// averaged over chains and axes.
    pub cartesian_mse: f64,
    /// Mean absolute end-effector error per Cartesian axis in meters,
    /// averaged over chains.
    pub axis_mae: [f64; 3],
    /// `axis_mae` divided by the per-axis motion range of the dataset,
    /// when the range is known.
    pub relative_axis_error: Option<[f64; 3]>,
}

impl EvalReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(Error::Json)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
    }
}

/// Predictions kept alongside the report for plotting and inspection.
pub struct EvalDetail {
    pub report: EvalReport,
    pub predicted: Vec<JointConfiguration>,
    /// (predicted, target) end-effector positions, flattened over chains.
    pub positions: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Run the model over a split and compare against the recorded targets.
///
/// `motion_ranges` are the per-axis end-effector motion ranges of the
/// dataset in meters (from its manifest); when given, the report carries
/// errors relative to them. Generation draws noise from a generator seeded
/// with `seed`, so evaluations are reproducible.
pub fn evaluate(
    trained: &TrainedModel,
    samples: &[PoseSample],
    mode: InferenceMode,
    motion_ranges: Option<[f64; 3]>,
    split: &str,
    seed: u64,
    device: &Device,
) -> Result<EvalDetail> {
    if samples.is_empty() {
        return Err(Error::Argument("evaluation split is empty".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let size = trained.config.network.image_size;
    let batch_size = trained.config.batch_size.max(1);

    let mut joint_sq = 0.0;
    let mut joint_count = 0usize;
    let mut cart_sq = 0.0;
    let mut cart_count = 0usize;
    let mut axis_abs = [0.0f64; 3];
    let mut axis_count = 0usize;
    let mut predicted = Vec::with_capacity(samples.len());
    let mut positions = Vec::with_capacity(samples.len());

    for chunk in samples.chunks(batch_size) {
        let conds: Vec<Tensor> = chunk
            .iter()
            .map(|s| image_to_tensor(&s.condition, size, device))
            .collect::<Result<_>>()?;
        let conditions = Tensor::stack(&conds, 0)?;
        let raw = predict_x0_batch(&trained.model, &conditions, &trained.schedule, &mut rng, mode)?;
        let outputs = decode_output(&trained.model, &raw, &trained.normalizer, &trained.robot)?;

        for (sample, output) in chunk.iter().zip(outputs) {
            let target_poses = trained.robot.forward_kinematics(&sample.target_joints)?;
            for (p, t) in output.joints.values.iter().zip(&sample.target_joints.values) {
                joint_sq += (p - t) * (p - t);
                joint_count += 1;
            }
            let mut pred_flat = Vec::with_capacity(3 * target_poses.len());
            let mut target_flat = Vec::with_capacity(3 * target_poses.len());
            for (pred, target) in output.eef_positions.iter().zip(&target_poses) {
                for (axis, slot) in axis_abs.iter_mut().enumerate() {
                    let d = pred.position[axis] - target.position[axis];
                    cart_sq += d * d;
                    cart_count += 1;
                    *slot += d.abs();
                    pred_flat.push(pred.position[axis]);
                    target_flat.push(target.position[axis]);
                }
                axis_count += 1;
            }
            predicted.push(output.joints);
            positions.push((pred_flat, target_flat));
        }
    }

    let axis_mae = axis_abs.map(|a| a / axis_count as f64);
    let relative_axis_error = motion_ranges.map(|ranges| {
        let mut rel = [0.0; 3];
        for ((r, &mae), &range) in rel.iter_mut().zip(&axis_mae).zip(&ranges) {
            *r = if range > 0.0 { mae / range } else { f64::INFINITY };
        }
        rel
    });

    Ok(EvalDetail {
        report: EvalReport {
            split: split.to_string(),
            n_samples: samples.len(),
            joint_mse: joint_sq / joint_count as f64,
            cartesian_mse: cart_sq / cart_count as f64,
            axis_mae,
            relative_axis_error,
        },
        predicted,
        positions,
    })
}

/// Write predicted and target end-effector positions as CSV
/// (`<stem>.csv`) and as a per-axis trajectory plot (`<stem>.png`).
///
/// Each axis is normalized to its own observed span for plotting; an axis
/// that never moves is drawn as a flat line at mid-height.
pub fn export_trajectory_plot(detail: &EvalDetail, stem: &Path) -> Result<()> {
    if detail.positions.is_empty() {
        return Err(Error::Argument("nothing to plot".into()));
    }
    let csv_path = stem.with_extension("csv");
    let mut writer = csv::Writer::from_path(&csv_path).map_err(Error::Csv)?;
    let n_chains = detail.positions[0].0.len() / 3;
    let mut header = vec!["index".to_string()];
    for chain in 0..n_chains {
        for axis in AXIS_NAMES {
            header.push(format!("pred_c{chain}_{axis}"));
        }
        for axis in AXIS_NAMES {
            header.push(format!("target_c{chain}_{axis}"));
        }
    }
    writer.write_record(&header).map_err(Error::Csv)?;
    for (i, (pred, target)) in detail.positions.iter().enumerate() {
        let mut row = vec![i.to_string()];
        for chain in 0..n_chains {
            row.extend(pred[3 * chain..3 * chain + 3].iter().map(|v| v.to_string()));
            row.extend(target[3 * chain..3 * chain + 3].iter().map(|v| v.to_string()));
        }
        writer.write_record(&row).map_err(Error::Csv)?;
    }
    writer.flush().map_err(|e| Error::io(&csv_path, e))?;

    let png_path = stem.with_extension("png");
    render_trajectory_plot(detail)?.save(&png_path)?;
    Ok(())
}

const PRED_COLORS: [[f32; 3]; 3] = [[0.95, 0.35, 0.30], [0.35, 0.85, 0.40], [0.40, 0.55, 0.95]];
const TARGET_TINT: f32 = 0.45;
const PLOT_SIZE: u32 = 256;

fn render_trajectory_plot(detail: &EvalDetail) -> Result<image::RgbImage> {
    let mut canvas = Canvas::filled(PLOT_SIZE, [0.02, 0.02, 0.04]);
    let n = detail.positions.len();
    let width = detail.positions[0].0.len();

    // One band per flattened coordinate, targets dimmed under predictions.
    let band = PLOT_SIZE as f64 / width as f64;
    for coord in 0..width {
        let series: Vec<(f64, f64)> = detail
            .positions
            .iter()
            .map(|(p, t)| (p[coord], t[coord]))
            .collect();
        let lo = series
            .iter()
            .flat_map(|&(p, t)| [p, t])
            .fold(f64::INFINITY, f64::min);
        let hi = series
            .iter()
            .flat_map(|&(p, t)| [p, t])
            .fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let to_y = |v: f64| {
            let frac = if span > 1e-12 { (v - lo) / span } else { 0.5 };
            band * coord as f64 + band * (0.9 - 0.8 * frac)
        };
        let to_x = |i: usize| {
            if n > 1 {
                i as f64 / (n - 1) as f64 * (PLOT_SIZE - 1) as f64
            } else {
                PLOT_SIZE as f64 / 2.0
            }
        };
        let color = PRED_COLORS[coord % 3];
        let target_color = color.map(|c| c * TARGET_TINT);
        for i in 1..n {
            let a = (to_x(i - 1), to_y(series[i - 1].1));
            let b = (to_x(i), to_y(series[i].1));
            canvas.draw_line(a, b, target_color);
        }
        for i in 1..n {
            let a = (to_x(i - 1), to_y(series[i - 1].0));
            let b = (to_x(i), to_y(series[i].0));
            canvas.draw_line(a, b, color);
        }
    }
    Ok(canvas.into_image())
}

/// Aligned text table comparing named evaluation reports.
pub fn compare_runs(runs: &[(String, EvalReport)]) -> String {
    let mut out = String::from(
        "run                         n    joint_mse    cart_mse     mae_x     mae_y     mae_z\n",
    );
    for (name, r) in runs {
        out.push_str(&format!(
            "{:<24} {:>5} {:>12.6} {:>11.6} {:>9.5} {:>9.5} {:>9.5}\n",
            name, r.n_samples, r.joint_mse, r.cartesian_mse, r.axis_mae[0], r.axis_mae[1], r.axis_mae[2]
        ));
    }
    out
}
