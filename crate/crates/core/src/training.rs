//! Training loop: forward noising of normalized joint targets, one denoising
//! pass per step, and a combined joint-space plus Cartesian loss whose
//! gradient flows through the differentiable forward kinematics.

use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW, VarBuilder, VarMap};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::checkpoint::TrainedModel;
use crate::dataset::{resize_area, PoseSample};
use crate::error::{Error, Result};
use crate::kinematics::{diff::RobotDiffFk, RobotModel};
use crate::network::{CartesianHead, DirigentModel, NetworkConfig};
use crate::normalize::Normalizer;
use crate::schedule::{build_cosine_schedule, NoiseSchedule};

/// Weights of the loss terms. `joint` scales the MSE over normalized joint
/// values; `cartesian` scales the MSE over end-effector positions in meters
/// computed through forward kinematics; `consistency` scales the agreement
/// of the optional direct Cartesian output with the target pose.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub joint: f64,
    pub cartesian: f64,
    pub consistency: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            joint: 1.0,
            cartesian: 1.0,
            consistency: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub t_max: usize,
    pub schedule_offset: f64,
    /// Ablation: train only at the maximum noise level instead of sampling
    /// levels uniformly.
    pub max_noise_only: bool,
    pub seed: u64,
    pub loss: LossConfig,
    pub network: NetworkConfig,
}

impl TrainConfig {
    /// Paper-scale defaults for the 26-joint layout.
    pub fn default_diri() -> Self {
        Self {
            epochs: 20,
            batch_size: 6,
            learning_rate: 2e-4,
            t_max: 1000,
            schedule_offset: 0.008,
            max_noise_only: false,
            seed: 0,
            loss: LossConfig::default(),
            network: NetworkConfig::default_diri(),
        }
    }

    /// Scaled-down profile for fast experiments and tests.
    pub fn small(joint_dim: usize, image_size: usize) -> Self {
        Self {
            epochs: 3,
            batch_size: 6,
            learning_rate: 1e-3,
            t_max: 50,
            schedule_offset: 0.008,
            max_noise_only: false,
            seed: 0,
            loss: LossConfig::default(),
            network: NetworkConfig::small(joint_dim, image_size),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        for (name, w) in [
            ("joint", self.loss.joint),
            ("cartesian", self.loss.cartesian),
            ("consistency", self.loss.consistency),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Validation(format!(
                    "loss weight {name} must be non-negative, got {w}"
                )));
            }
        }
        if self.loss.consistency > 0.0 && self.network.cartesian_head == CartesianHead::Off {
            return Err(Error::Validation(
                "consistency weight needs the cartesian head enabled".into(),
            ));
        }
        Ok(())
    }
}

/// Per-term loss values for one batch, averaged over the batch.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub joint: f64,
    pub cartesian: f64,
    pub consistency: f64,
    pub total: f64,
}

/// Combined training loss.
///
/// `prediction` is the raw network output (batch, diffusion_dim) in
/// normalized space; `target_norm` the normalized joint targets
/// (batch, joint_dim); `target_positions` the end-effector positions of the
/// targets in meters (batch, 3 * n_chains); `target_seven` the
/// position-plus-quaternion target per chain (batch, 7 * n_chains), only
/// consulted when the consistency weight is positive.
#[allow(clippy::too_many_arguments)]
pub fn compute_loss(
    model: &DirigentModel,
    prediction: &Tensor,
    target_norm: &Tensor,
    target_positions: &Tensor,
    target_seven: Option<&Tensor>,
    fk: &RobotDiffFk,
    normalizer: &Normalizer,
    weights: &LossConfig,
) -> Result<(Tensor, LossBreakdown)> {
    let (pred_joints, pred_cart) = model.split_output(prediction)?;
    let joint_term = mse(&pred_joints, target_norm)?;

    let pred_q = normalizer.denormalize_t(&pred_joints)?;
    let pred_positions = fk.positions(&pred_q)?;
    let cartesian_term = mse(&pred_positions, target_positions)?;

    let mut total = ((&joint_term * weights.joint)? + (&cartesian_term * weights.cartesian)?)?;
    let mut consistency_value = 0.0;
    if weights.consistency > 0.0 {
        let direct = pred_cart.ok_or_else(|| {
            Error::Validation("consistency loss needs the cartesian head".into())
        })?;
        let target = target_seven.ok_or_else(|| {
            Error::Argument("consistency loss needs target poses".into())
        })?;
        let term = mse(&direct, target)?;
        consistency_value = term.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        total = (total + (term * weights.consistency)?)?;
    }

    let breakdown = LossBreakdown {
        joint: joint_term.to_dtype(DType::F64)?.to_scalar::<f64>()?,
        cartesian: cartesian_term.to_dtype(DType::F64)?.to_scalar::<f64>()?,
        consistency: consistency_value,
        total: total.to_dtype(DType::F64)?.to_scalar::<f64>()?,
    };
    Ok((total, breakdown))
}

fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::Dimension {
            expected: b.elem_count(),
            got: a.elem_count(),
            context: "loss operands".into(),
        });
    }
    Ok((a - b)?.sqr()?.mean_all()?)
}

/// One row of the training history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub joint_loss: f64,
    pub cartesian_loss: f64,
    pub consistency_loss: f64,
    pub val_loss: f64,
}

/// A finished training run.
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub history: Vec<EpochStats>,
    /// Epoch whose weights were kept (lowest validation loss), when any
    /// epoch ran.
    pub best_epoch: Option<usize>,
}

/// Condition image as a (3, S, S) f32 tensor in [0, 1], area-resized to the
/// network resolution.
pub fn image_to_tensor(img: &RgbImage, size: usize, device: &Device) -> Result<Tensor> {
    let img = resize_area(img, size as u32);
    let mut data = vec![0f32; 3 * size * size];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * size * size + y as usize * size + x as usize] = p.0[c] as f32 / 255.0;
        }
    }
    Ok(Tensor::from_vec(data, (3, size, size), device)?)
}

/// Precomputed per-sample targets; images stay as u8 until batching.
struct Prepared {
    conditions: Vec<RgbImage>,
    targets_norm: Vec<Vec<f64>>,
    positions: Vec<Vec<f64>>,
    sevens: Vec<Vec<f64>>,
}

fn prepare(
    samples: &[PoseSample],
    robot: &RobotModel,
    normalizer: &Normalizer,
) -> Result<Prepared> {
    let mut conditions = Vec::with_capacity(samples.len());
    let mut targets_norm = Vec::with_capacity(samples.len());
    let mut positions = Vec::with_capacity(samples.len());
    let mut sevens = Vec::with_capacity(samples.len());
    for s in samples {
        let poses = robot.forward_kinematics(&s.target_joints)?;
        positions.push(poses.iter().flat_map(|p| [p.position.x, p.position.y, p.position.z]).collect());
        sevens.push(poses.iter().flat_map(|p| p.as_seven()).collect());
        targets_norm.push(normalizer.normalize(&s.target_joints.values)?);
        conditions.push(s.condition.clone());
    }
    Ok(Prepared {
        conditions,
        targets_norm,
        positions,
        sevens,
    })
}

struct Batch {
    conditions: Tensor,
    targets_norm: Tensor,
    positions: Tensor,
    sevens: Tensor,
}

fn gather_batch(
    prepared: &Prepared,
    indices: &[usize],
    image_size: usize,
    device: &Device,
) -> Result<Batch> {
    let conds: Vec<Tensor> = indices
        .iter()
        .map(|&i| image_to_tensor(&prepared.conditions[i], image_size, device))
        .collect::<Result<_>>()?;
    let flat = |rows: &[Vec<f64>]| -> Result<Tensor> {
        let width = rows[indices[0]].len();
        let data: Vec<f32> = indices
            .iter()
            .flat_map(|&i| rows[i].iter().map(|&v| v as f32))
            .collect();
        Ok(Tensor::from_vec(data, (indices.len(), width), device)?)
    };
    Ok(Batch {
        conditions: Tensor::stack(&conds, 0)?,
        targets_norm: flat(&prepared.targets_norm)?,
        positions: flat(&prepared.positions)?,
        sevens: flat(&prepared.sevens)?,
    })
}

/// Mix clean targets with Gaussian noise at per-sample levels, padding the
/// diffusion vector with the target pose when the Cartesian head is on.
fn noise_batch(
    model: &DirigentModel,
    batch: &Batch,
    schedule: &NoiseSchedule,
    max_noise_only: bool,
    rng: &mut ChaCha20Rng,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, _) = batch.targets_norm.dims2()?;
    let d = model.diffusion_dim();
    let device = batch.targets_norm.device();

    let x0 = match model.config().cartesian_head {
        CartesianHead::Off => batch.targets_norm.clone(),
        CartesianHead::Consistency => Tensor::cat(&[&batch.targets_norm, &batch.sevens], 1)?,
    };
    let levels: Vec<usize> = (0..b)
        .map(|_| {
            if max_noise_only {
                schedule.t_max()
            } else {
                rng.gen_range(1..=schedule.t_max())
            }
        })
        .collect();
    let mut signal = Vec::with_capacity(b);
    let mut noise = Vec::with_capacity(b);
    for &t in &levels {
        let (s, n) = schedule.mixing_coefficients(t)?;
        signal.push(s as f32);
        noise.push(n as f32);
    }
    let signal = Tensor::from_vec(signal, (b, 1), device)?;
    let noise = Tensor::from_vec(noise, (b, 1), device)?;
    let eps: Vec<f32> = (0..b * d).map(|_| rng.sample(StandardNormal)).collect();
    let eps = Tensor::from_vec(eps, (b, d), device)?;
    let x_t = (x0.broadcast_mul(&signal)? + eps.broadcast_mul(&noise)?)?;
    let t = Tensor::from_vec(levels.iter().map(|&t| t as f32).collect(), (b,), device)?;
    Ok((x_t, t, x0))
}

/// Train a model from scratch. Weights from the epoch with the lowest
/// validation loss are kept; with an empty validation set the final epoch
/// wins.
pub fn train(
    robot: &RobotModel,
    train_samples: &[PoseSample],
    val_samples: &[PoseSample],
    cfg: &TrainConfig,
    device: &Device,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_samples.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    if cfg.network.joint_dim != robot.dof() {
        return Err(Error::Dimension {
            expected: robot.dof(),
            got: cfg.network.joint_dim,
            context: "network joint_dim vs robot layout".into(),
        });
    }

    let varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, device);
    let model = DirigentModel::new(cfg.network.clone(), robot.chains.len(), vb)?;
    seed_variables(&varmap, cfg.seed)?;

    let schedule = build_cosine_schedule(cfg.t_max, cfg.schedule_offset)?;
    let normalizer = Normalizer::for_robot(robot);
    let fk = RobotDiffFk::new(robot, device, DType::F32)?;
    let prepared = prepare(train_samples, robot, &normalizer)?;
    let prepared_val = prepare(val_samples, robot, &normalizer)?;

    let mut optimizer = AdamW::new(
        varmap.all_vars(),
        ParamsAdamW {
            lr: cfg.learning_rate,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, WeightSnapshot)> = None;
    let size = cfg.network.image_size;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        shuffle(&mut order, &mut rng);

        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = gather_batch(&prepared, chunk, size, device)?;
            let (x_t, t, _) = noise_batch(&model, &batch, &schedule, cfg.max_noise_only, &mut rng)?;
            let grid = model.encode_joints_to_grid(&x_t)?;
            let out = model.forward(&grid, &batch.conditions, &t)?;
            let (loss, parts) = compute_loss(
                &model,
                &out,
                &batch.targets_norm,
                &batch.positions,
                Some(&batch.sevens),
                &fk,
                &normalizer,
                &cfg.loss,
            )?;
            if !parts.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    message: format!("non-finite loss {}", parts.total),
                });
            }
            optimizer.backward_step(&loss)?;
            sums.0 += parts.total;
            sums.1 += parts.joint;
            sums.2 += parts.cartesian;
            sums.3 += parts.consistency;
            batches += 1;
        }
        let n = batches.max(1) as f64;

        let val_loss = if val_samples.is_empty() {
            sums.0 / n
        } else {
            validation_loss(&model, &prepared_val, cfg, &schedule, &fk, &normalizer, device)?
        };
        history.push(EpochStats {
            epoch,
            train_loss: sums.0 / n,
            joint_loss: sums.1 / n,
            cartesian_loss: sums.2 / n,
            consistency_loss: sums.3 / n,
            val_loss,
        });

        if best.as_ref().is_none_or(|(_, b, _)| val_loss < *b) {
            best = Some((epoch, val_loss, snapshot(&varmap)?));
        }
    }

    let best_epoch = match best {
        Some((epoch, _, weights)) => {
            restore(&varmap, &weights)?;
            Some(epoch)
        }
        None => None,
    };

    Ok(TrainOutcome {
        model: TrainedModel {
            varmap,
            model,
            config: cfg.clone(),
            schedule,
            normalizer,
            robot: robot.clone(),
        },
        history,
        best_epoch,
    })
}

/// Validation loss at the maximum noise level with a fixed noise draw, so
/// values are comparable across epochs.
fn validation_loss(
    model: &DirigentModel,
    prepared: &Prepared,
    cfg: &TrainConfig,
    schedule: &NoiseSchedule,
    fk: &RobotDiffFk,
    normalizer: &Normalizer,
    device: &Device,
) -> Result<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x5641_4C00);
    let n = prepared.conditions.len();
    let indices: Vec<usize> = (0..n).collect();
    let mut sum = 0.0;
    let mut batches = 0usize;
    for chunk in indices.chunks(cfg.batch_size) {
        let batch = gather_batch(prepared, chunk, cfg.network.image_size, device)?;
        let (x_t, t, _) = noise_batch(model, &batch, schedule, true, &mut rng)?;
        let grid = model.encode_joints_to_grid(&x_t)?;
        let out = model.forward(&grid, &batch.conditions, &t)?;
        let (_, parts) = compute_loss(
            model,
            &out,
            &batch.targets_norm,
            &batch.positions,
            Some(&batch.sevens),
            fk,
            normalizer,
            &cfg.loss,
        )?;
        sum += parts.total;
        batches += 1;
    }
    Ok(sum / batches.max(1) as f64)
}

fn shuffle(indices: &mut [usize], rng: &mut ChaCha20Rng) {
    for i in (1..indices.len()).rev() {
        indices.swap(i, rng.gen_range(0..=i));
    }
}

/// Deterministic weight initialization. The CPU backend of the tensor
/// library has no seedable generator, so reproducibility requires drawing
/// the initial weights ourselves: norm scales to one, biases to zero, and
/// weight matrices from a fan-in-scaled uniform distribution in a fixed
/// name order.
fn seed_variables(varmap: &VarMap, seed: u64) -> Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x494E_4954);
    let data = varmap.data().lock().unwrap();
    let mut names: Vec<&String> = data.keys().collect();
    names.sort();
    for name in names {
        let var = &data[name];
        let tensor = var.as_tensor();
        let dims = tensor.dims();
        let device = tensor.device();
        let n = tensor.elem_count();
        let init = if name.ends_with(".bias") {
            Tensor::zeros(dims, tensor.dtype(), device)?
        } else if dims.len() == 1 {
            // Norm scales.
            Tensor::ones(dims, tensor.dtype(), device)?
        } else {
            let fan_in = n / dims[0];
            let bound = (1.0 / fan_in as f64).sqrt() as f32;
            let values: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            Tensor::from_vec(values, dims, device)?.to_dtype(tensor.dtype())?
        };
        var.set(&init)?;
    }
    Ok(())
}

type WeightSnapshot = Vec<(String, Tensor)>;

fn snapshot(varmap: &VarMap) -> Result<WeightSnapshot> {
    let data = varmap.data().lock().unwrap();
    let mut out = Vec::with_capacity(data.len());
    for (name, var) in data.iter() {
        out.push((name.clone(), var.as_tensor().copy()?));
    }
    Ok(out)
}

fn restore(varmap: &VarMap, weights: &[(String, Tensor)]) -> Result<()> {
    let data = varmap.data().lock().unwrap();
    for (name, tensor) in weights {
        let var: &Var = data
            .get(name)
            .ok_or_else(|| Error::Validation(format!("missing variable {name}")))?;
        var.set(tensor)?;
    }
    Ok(())
}

/// Write the per-epoch history as CSV.
pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(Error::Csv)?;
    for row in history {
        writer.serialize(row).map_err(Error::Csv)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Leave-one-participant-out cross-validation: one training per held-out
/// participant, reporting the best validation loss of each fold.
pub struct CrossValidationFold {
    pub held_out: u32,
    pub outcome: TrainOutcome,
}

pub fn run_cross_validation(
    robot: &RobotModel,
    samples: &[PoseSample],
    participants: &[u32],
    cfg: &TrainConfig,
    device: &Device,
) -> Result<Vec<CrossValidationFold>> {
    let mut folds = Vec::with_capacity(participants.len());
    for &held_out in participants {
        let (train_set, val_set) = crate::dataset::split(
            samples.to_vec(),
            &crate::dataset::SplitStrategy::ByParticipant { held_out },
        )?;
        let outcome = train(robot, &train_set, &val_set, cfg, device)?;
        folds.push(CrossValidationFold { held_out, outcome });
    }
    Ok(folds)
}
