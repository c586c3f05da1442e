//! Building blocks: convolution blocks with timestep injection and
//! multi-head self-attention over spatial positions.

use candle_core::Tensor;
use candle_nn::{conv2d, group_norm, linear, Conv2d, Conv2dConfig, GroupNorm, Linear, Module, VarBuilder};

use crate::error::Result;

const NORM_GROUPS: usize = 8;

/// 3x3 conv -> group norm -> (+ timestep projection) -> SiLU.
pub struct ConvBlock {
    conv: Conv2d,
    norm: GroupNorm,
    time: Linear,
}

impl ConvBlock {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        time_dim: usize,
        vb: VarBuilder,
    ) -> Result<Self> {
        let cfg = Conv2dConfig {
            padding: 1,
            ..Default::default()
        };
        Ok(Self {
            conv: conv2d(in_ch, out_ch, 3, cfg, vb.pp("conv"))?,
            norm: group_norm(NORM_GROUPS, out_ch, 1e-5, vb.pp("norm"))?,
            time: linear(time_dim, out_ch, vb.pp("time"))?,
        })
    }

    pub fn forward(&self, x: &Tensor, t_emb: &Tensor) -> Result<Tensor> {
        let h = self.conv.forward(x)?;
        let h = self.norm.forward(&h)?;
        let shift = self.time.forward(t_emb)?.unsqueeze(2)?.unsqueeze(3)?;
        let h = h.broadcast_add(&shift)?;
        Ok(candle_nn::ops::silu(&h)?)
    }
}

/// Two [`ConvBlock`]s at the same width.
pub struct DoubleConvBlock {
    a: ConvBlock,
    b: ConvBlock,
}

impl DoubleConvBlock {
    pub fn new(in_ch: usize, out_ch: usize, time_dim: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            a: ConvBlock::new(in_ch, out_ch, time_dim, vb.pp("a"))?,
            b: ConvBlock::new(out_ch, out_ch, time_dim, vb.pp("b"))?,
        })
    }

    pub fn forward(&self, x: &Tensor, t_emb: &Tensor) -> Result<Tensor> {
        let h = self.a.forward(x, t_emb)?;
        self.b.forward(&h, t_emb)
    }
}

/// Multi-head self-attention over flattened spatial positions, residual.
pub struct Attention {
    norm: GroupNorm,
    qkv: Linear,
    proj: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(channels: usize, heads: usize, vb: VarBuilder) -> Result<Self> {
        assert!(channels.is_multiple_of(heads), "channels must divide into heads");
        Ok(Self {
            norm: group_norm(NORM_GROUPS, channels, 1e-5, vb.pp("norm"))?,
            qkv: linear(channels, channels * 3, vb.pp("qkv"))?,
            proj: linear(channels, channels, vb.pp("proj"))?,
            heads,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let s = h * w;
        let head_dim = c / self.heads;

        let y = self.norm.forward(x)?;
        let y = y.reshape((b, c, s))?.transpose(1, 2)?.contiguous()?; // (B,S,C)
        let qkv = self.qkv.forward(&y)?; // (B,S,3C)
        let split = |i: usize| -> Result<Tensor> {
            Ok(qkv
                .narrow(2, i * c, c)?
                .reshape((b, s, self.heads, head_dim))?
                .transpose(1, 2)?
                .reshape((b * self.heads, s, head_dim))?
                .contiguous()?)
        };
        let q = split(0)?;
        let k = split(1)?;
        let v = split(2)?;

        let scale = 1.0 / (head_dim as f64).sqrt();
        let att = (q.matmul(&k.transpose(1, 2)?)? * scale)?;
        let att = candle_nn::ops::softmax_last_dim(&att)?;
        let out = att.matmul(&v)?; // (B*h, S, hd)
        let out = out
            .reshape((b, self.heads, s, head_dim))?
            .transpose(1, 2)?
            .reshape((b, s, c))?;
        let out = self.proj.forward(&out)?;
        let out = out.transpose(1, 2)?.reshape((b, c, h, w))?;
        Ok((x + out)?)
    }
}

/// Sinusoidal timestep features: `dim/2` sine/cosine pairs over a
/// log-spaced frequency ladder.
pub fn timestep_features(t: &Tensor, dim: usize) -> Result<Tensor> {
    let device = t.device();
    let half = dim / 2;
    let freqs: Vec<f32> = (0..half)
        .map(|i| (-(i as f64) * (10_000f64).ln() / half as f64).exp() as f32)
        .collect();
    let freqs = Tensor::from_vec(freqs, (1, half), device)?.to_dtype(t.dtype())?;
    let args = t.unsqueeze(1)?.broadcast_mul(&freqs)?;
    Ok(Tensor::cat(&[args.sin()?, args.cos()?], 1)?)
}
