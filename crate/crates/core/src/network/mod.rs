//! The denoising network: two contracting paths (noisy joint grid and RGB
//! condition), one expanding path with the condition injected at every
//! resolution, attention-augmented convolution blocks, and a linear head
//! decoding the 64x64 feature map back to joint values.

pub mod blocks;

use candle_core::{DType, Device, Tensor};
use candle_nn::{linear, Linear, Module, VarBuilder, VarMap};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{JointConfiguration, RobotModel};
use crate::normalize::Normalizer;
use crate::schedule::NoiseSchedule;
use blocks::{timestep_features, Attention, ConvBlock, DoubleConvBlock};

/// Whether the diffusion vector carries the end-effector pose (position +
/// quaternion, 7 values per chain) alongside the joints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CartesianHead {
    #[default]
    Off,
    Consistency,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub image_size: usize,
    pub in_channels: usize,
    /// Channel widths at full and at half/quarter resolution.
    pub base_channels: [usize; 2],
    pub attention_heads: usize,
    pub joint_dim: usize,
    pub timestep_embed_dim: usize,
    /// Channels of the final full-resolution feature map fed to the decode
    /// head.
    pub decode_channels: usize,
    #[serde(default)]
    pub cartesian_head: CartesianHead,
}

impl NetworkConfig {
    /// Default configuration for the 26-joint layout; lands close to the
    /// eight-million-parameter budget.
    pub fn default_diri() -> Self {
        Self {
            image_size: 64,
            in_channels: 3,
            base_channels: [64, 128],
            attention_heads: 4,
            joint_dim: 26,
            timestep_embed_dim: 128,
            decode_channels: 64,
            cartesian_head: CartesianHead::Off,
        }
    }

    /// Scaled-down profile for fast experiments and tests.
    pub fn small(joint_dim: usize, image_size: usize) -> Self {
        Self {
            image_size,
            in_channels: 3,
            base_channels: [16, 32],
            attention_heads: 2,
            joint_dim,
            timestep_embed_dim: 64,
            decode_channels: 16,
            cartesian_head: CartesianHead::Off,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.joint_dim == 0 {
            return Err(Error::Validation("joint_dim must be positive".into()));
        }
        if !self.image_size.is_multiple_of(4) || self.image_size == 0 {
            return Err(Error::Validation(format!(
                "image_size must be divisible by 4 (two downsampling stages), got {}",
                self.image_size
            )));
        }
        for ch in self.base_channels.iter().chain([&self.decode_channels]) {
            if ch % 8 != 0 {
                return Err(Error::Validation(format!(
                    "channel widths must be multiples of 8 for group norm, got {ch}"
                )));
            }
        }
        if !self.base_channels[1].is_multiple_of(self.attention_heads) {
            return Err(Error::Validation(
                "attention heads must divide the attention channel width".into(),
            ));
        }
        Ok(())
    }

    /// Length of the vector going through the diffusion process.
    pub fn diffusion_dim(&self, n_chains: usize) -> usize {
        self.joint_dim
            + match self.cartesian_head {
                CartesianHead::Off => 0,
                CartesianHead::Consistency => 7 * n_chains,
            }
    }
}

struct ContractingPath {
    b0: ConvBlock,
    b1: ConvBlock,
    attn1: Attention,
    b2: ConvBlock,
    attn2: Attention,
}

impl ContractingPath {
    fn new(cfg: &NetworkConfig, vb: VarBuilder) -> Result<Self> {
        let [ch1, ch2] = cfg.base_channels;
        let td = cfg.timestep_embed_dim;
        Ok(Self {
            b0: ConvBlock::new(cfg.in_channels, ch1, td, vb.pp("b0"))?,
            b1: ConvBlock::new(ch1, ch2, td, vb.pp("b1"))?,
            attn1: Attention::new(ch2, cfg.attention_heads, vb.pp("attn1"))?,
            b2: ConvBlock::new(ch2, ch2, td, vb.pp("b2"))?,
            attn2: Attention::new(ch2, cfg.attention_heads, vb.pp("attn2"))?,
        })
    }

    /// Returns features at full, half and quarter resolution.
    fn forward(&self, x: &Tensor, t_emb: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let s0 = self.b0.forward(x, t_emb)?;
        let s1 = self.b1.forward(&s0.max_pool2d(2)?, t_emb)?;
        let s1 = self.attn1.forward(&s1)?;
        let s2 = self.b2.forward(&s1.max_pool2d(2)?, t_emb)?;
        let s2 = self.attn2.forward(&s2)?;
        Ok((s0, s1, s2))
    }
}

/// The full denoising network.
pub struct DirigentModel {
    cfg: NetworkConfig,
    n_chains: usize,
    joint_encode: Linear,
    time_a: Linear,
    time_b: Linear,
    path_noisy: ContractingPath,
    path_cond: ContractingPath,
    mid1: DoubleConvBlock,
    mid2: DoubleConvBlock,
    fuse: ConvBlock,
    up1: ConvBlock,
    up2: ConvBlock,
    decode: Linear,
}

impl DirigentModel {
    pub fn new(cfg: NetworkConfig, n_chains: usize, vb: VarBuilder) -> Result<Self> {
        cfg.validate()?;
        let [_, ch2] = cfg.base_channels;
        let td = cfg.timestep_embed_dim;
        let grid = cfg.in_channels * cfg.image_size * cfg.image_size;
        let d = cfg.diffusion_dim(n_chains);
        Ok(Self {
            joint_encode: linear(d, grid, vb.pp("joint_encode"))?,
            time_a: linear(td, td, vb.pp("time_a"))?,
            time_b: linear(td, td, vb.pp("time_b"))?,
            path_noisy: ContractingPath::new(&cfg, vb.pp("path_noisy"))?,
            path_cond: ContractingPath::new(&cfg, vb.pp("path_cond"))?,
            mid1: DoubleConvBlock::new(ch2, ch2, td, vb.pp("mid1"))?,
            mid2: DoubleConvBlock::new(ch2, ch2, td, vb.pp("mid2"))?,
            fuse: ConvBlock::new(2 * ch2, ch2, td, vb.pp("fuse"))?,
            up1: ConvBlock::new(2 * ch2, ch2, td, vb.pp("up1"))?,
            up2: ConvBlock::new(
                ch2 + cfg.base_channels[0],
                cfg.decode_channels,
                td,
                vb.pp("up2"),
            )?,
            decode: linear(
                cfg.decode_channels * cfg.image_size * cfg.image_size,
                d,
                vb.pp("decode"),
            )?,
            cfg,
            n_chains,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn n_chains(&self) -> usize {
        self.n_chains
    }

    pub fn diffusion_dim(&self) -> usize {
        self.cfg.diffusion_dim(self.n_chains)
    }

    /// Learned projection of the (noisy) diffusion vector onto a
    /// 3 x S x S grid matching the condition image dimensions.
    pub fn encode_joints_to_grid(&self, joints: &Tensor) -> Result<Tensor> {
        let (b, d) = joints.dims2()?;
        if d != self.diffusion_dim() {
            return Err(Error::Dimension {
                expected: self.diffusion_dim(),
                got: d,
                context: "joint grid encoding".into(),
            });
        }
        let s = self.cfg.image_size;
        Ok(self
            .joint_encode
            .forward(joints)?
            .reshape((b, self.cfg.in_channels, s, s))?)
    }

    fn time_embedding(&self, t: &Tensor) -> Result<Tensor> {
        let feats = timestep_features(t, self.cfg.timestep_embed_dim)?;
        let h = candle_nn::ops::silu(&self.time_a.forward(&feats)?)?;
        Ok(self.time_b.forward(&h)?)
    }

    /// Feature pyramid of the condition contracting path at full, half and
    /// quarter resolution; exposed so the downsampling ladder can be
    /// inspected from outside.
    pub fn contracting_features(
        &self,
        image: &Tensor,
        t: &Tensor,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        let t_emb = self.time_embedding(t)?;
        self.path_cond.forward(image, &t_emb)
    }

    /// One denoising pass: noisy joint grid + condition image + noise level
    /// to a predicted clean diffusion vector.
    pub fn forward(&self, noisy_grid: &Tensor, condition: &Tensor, t: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = noisy_grid.dims4()?;
        let s = self.cfg.image_size;
        if c != self.cfg.in_channels || h != s || w != s {
            return Err(Error::Dimension {
                expected: s,
                got: h,
                context: "noisy grid shape".into(),
            });
        }
        if condition.dims4()? != (b, self.cfg.in_channels, s, s) {
            return Err(Error::Dimension {
                expected: s,
                got: condition.dims4()?.2,
                context: "condition shape".into(),
            });
        }
        let t_emb = self.time_embedding(t)?;

        let (_, _, a2) = self.path_noisy.forward(noisy_grid, &t_emb)?;
        let (c0, c1, c2) = self.path_cond.forward(condition, &t_emb)?;

        let m = self.mid1.forward(&a2, &t_emb)?;
        let m = self.mid2.forward(&m, &t_emb)?;

        // Expanding path with condition features injected at each resolution.
        let x = self.fuse.forward(&Tensor::cat(&[&m, &c2], 1)?, &t_emb)?;
        let x = x.upsample_nearest2d(s / 2, s / 2)?;
        let x = self.up1.forward(&Tensor::cat(&[&x, &c1], 1)?, &t_emb)?;
        let x = x.upsample_nearest2d(s, s)?;
        let x = self.up2.forward(&Tensor::cat(&[&x, &c0], 1)?, &t_emb)?;

        let flat = x.flatten_from(1)?;
        Ok(self.decode.forward(&flat)?)
    }

    /// Split the network output into (joints, optional direct Cartesian).
    pub fn split_output(&self, out: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let joints = out.narrow(1, 0, self.cfg.joint_dim)?;
        let cart = match self.cfg.cartesian_head {
            CartesianHead::Off => None,
            CartesianHead::Consistency => {
                Some(out.narrow(1, self.cfg.joint_dim, 7 * self.n_chains)?)
            }
        };
        Ok((joints, cart))
    }
}

/// Inference mode: one forward pass from pure noise, or `k` re-noising
/// steps over evenly spaced levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InferenceMode {
    Single,
    Iterative(usize),
}

/// Network output decoded against a robot layout.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub joints: JointConfiguration,
    pub eef_positions: Vec<crate::kinematics::EndEffectorPose>,
    pub direct_cartesian: Option<Vec<f64>>,
}

/// Generate a joint configuration for one condition image.
///
/// `condition` is (3, S, S) f32 with values in [0, 1]. The result is
/// denormalized to radians and clamped to joint limits.
#[allow(clippy::too_many_arguments)]
pub fn predict_x0(
    model: &DirigentModel,
    condition: &Tensor,
    schedule: &NoiseSchedule,
    normalizer: &Normalizer,
    robot: &RobotModel,
    mode: InferenceMode,
    rng: &mut impl Rng,
) -> Result<ModelOutput> {
    let batch = predict_x0_batch(
        model,
        &condition.unsqueeze(0)?,
        schedule,
        rng,
        mode,
    )?;
    decode_output(model, &batch, normalizer, robot).map(|mut v| v.remove(0))
}

/// Batched sampler: conditions (B, 3, S, S) -> raw diffusion vectors (B, D)
/// in normalized space.
pub fn predict_x0_batch(
    model: &DirigentModel,
    conditions: &Tensor,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
    mode: InferenceMode,
) -> Result<Tensor> {
    let (b, _, _, _) = conditions.dims4()?;
    let min = conditions.min_all()?.to_scalar::<f32>()?;
    let max = conditions.max_all()?.to_scalar::<f32>()?;
    if !(0.0..=1.0).contains(&min) || !(0.0..=1.0).contains(&max) {
        return Err(Error::Argument(format!(
            "condition values must lie in [0, 1], got range [{min}, {max}]"
        )));
    }
    let device = conditions.device();
    let d = model.diffusion_dim();
    let mut x = gaussian(rng, b, d, device)?;

    let levels = match mode {
        InferenceMode::Single => vec![schedule.t_max()],
        InferenceMode::Iterative(k) => {
            if k == 0 {
                return Err(Error::Argument("iterative mode needs k >= 1".into()));
            }
            schedule.spaced_levels(k)
        }
    };
    let mut x0_pred = x.clone();
    for (i, &t) in levels.iter().enumerate() {
        let grid = model.encode_joints_to_grid(&x)?;
        let t_tensor = Tensor::from_vec(vec![t as f32; b], (b,), device)?;
        x0_pred = model.forward(&grid, conditions, &t_tensor)?;
        if let Some(&next) = levels.get(i + 1) {
            let (signal, noise) = schedule.mixing_coefficients(next)?;
            let eps = gaussian(rng, b, d, device)?;
            x = ((x0_pred.clone() * signal)? + (eps * noise)?)?;
        }
    }
    Ok(x0_pred)
}

/// Denormalize and clamp raw diffusion vectors into joint configurations
/// plus their forward-kinematics poses.
pub fn decode_output(
    model: &DirigentModel,
    raw: &Tensor,
    normalizer: &Normalizer,
    robot: &RobotModel,
) -> Result<Vec<ModelOutput>> {
    let (joints_norm, cart) = model.split_output(raw)?;
    let rows = joints_norm.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    let cart_rows = match &cart {
        Some(c) => Some(c.to_dtype(DType::F64)?.to_vec2::<f64>()?),
        None => None,
    };
    let mut outputs = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let mut q = JointConfiguration::new(normalizer.denormalize(row)?, robot.layout_id.clone());
        robot.clamp(&mut q)?;
        let eef_positions = robot.forward_kinematics(&q)?;
        outputs.push(ModelOutput {
            joints: q,
            eef_positions,
            direct_cartesian: cart_rows.as_ref().map(|c| c[i].clone()),
        });
    }
    Ok(outputs)
}

fn gaussian(rng: &mut impl Rng, b: usize, d: usize, device: &Device) -> Result<Tensor> {
    let data: Vec<f32> = (0..b * d).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(data, (b, d), device)?)
}

/// Total number of trainable scalars in a var map.
pub fn parameter_count(varmap: &VarMap) -> usize {
    varmap
        .all_vars()
        .iter()
        .map(|v| v.as_tensor().elem_count())
        .sum()
}
